"""Concept-shift adaptation with learnable latent environment trajectories.

A frozen-backbone probabilistic regression model is conditioned on
low-dimensional latent environment vectors. Training jointly fits the head
and per-sequence latent trajectories under a constant-velocity transition
regularizer; adaptation to a new environment optimizes only the latent
variables from a handful of samples, leaving all model weights untouched.
"""

from .adaptation import AdaptConfig, AdaptResult, adapt_few_shot, adapt_online_step, \
    predict_with_trend
from .model import GaussianPrediction, HeadParams, ModelConfig
from .params import ParamStore
from .synth import Dataset, EnvSpec, GeneratorConfig, Sample, Sequence, generate, \
    load_dataset, save_dataset, train_test_split
from .training import TrainConfig, TrainReport, pretrain_feature_extractor, train
from .trend import LossWeights, ProcessNoise, TrendState, transition_apply, unroll

__all__ = [
    "AdaptConfig", "AdaptResult", "adapt_few_shot", "adapt_online_step",
    "predict_with_trend", "GaussianPrediction", "HeadParams", "ModelConfig",
    "ParamStore", "Dataset", "EnvSpec", "GeneratorConfig", "Sample", "Sequence",
    "generate", "load_dataset", "save_dataset", "train_test_split",
    "TrainConfig", "TrainReport", "pretrain_feature_extractor", "train",
    "LossWeights", "ProcessNoise", "TrendState", "transition_apply", "unroll",
]

__version__ = "0.1.0"
