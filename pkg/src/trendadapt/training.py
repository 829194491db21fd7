"""Training phase: jointly optimize the head G and the per-sequence trend
parameters with the feature extractor frozen, minimizing the combined
observation + trajectory-regularization objective.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node, backward
from .model import ModelConfig, features_node, forward_batch, gaussian_nll_node, head_node, \
    action_basis, predict_node, init_model_params
from .params import ParamStore
from .synth import Dataset, Sequence
from .trend import LossWeights, add_trend_noise, regularizer_nodes, unroll_nodes


class TrainingError(RuntimeError):
    """Raised when training hits a non-finite loss; names epoch and term."""


@dataclass
class TrainConfig:
    epochs: int = 1000
    lr: float = 1e-3
    mode: str = "cv"               # "cv" or "free"
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    sigma_aug: float = 0.05
    pretrain_epochs: int = 300
    pretrain_lr: float = 1e-2

    def __post_init__(self):
        if self.epochs < 1 or self.lr <= 0:
            raise ValueError("need epochs >= 1 and lr > 0")
        if self.mode not in ("cv", "free"):
            raise ValueError(f"unknown mode: {self.mode!r}")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)


@dataclass
class TrainReport:
    history: list = field(default_factory=list)   # dicts of per-epoch loss terms
    wall_clock: float = 0.0
    checkpoint_path: str | None = None

    def save_jsonl(self, path):
        with open(path, "w") as fh:
            for row in self.history:
                fh.write(json.dumps(row) + "\n")


def init_trend_params(store: ParamStore, sequences, mode: str, d: int,
                      rng: np.random.Generator):
    """Register per-sequence trend parameters.

    free mode: one independent position per sample, z ~ N(0, 0.1^2 I).
    cv mode: initial position ~ N(0, 0.1^2 I), zero velocity, zero noise.
    """
    for seq in sequences:
        n = len(seq.samples)
        if mode == "free":
            store.add(f"trend/{seq.id}/z", rng.normal(0.0, 0.1, size=(n, d)))
        else:
            store.add(f"trend/{seq.id}/z0", rng.normal(0.0, 0.1, size=d))
            store.add(f"trend/{seq.id}/zdot0", np.zeros(d))
            store.add(f"trend/{seq.id}/eps", np.zeros((max(n - 1, 0), d)))


def sequence_position_nodes(store: ParamStore, seq: Sequence, mode: str):
    """(positions Node (n,d), velocities Node or None, eps Node or None)."""
    if mode == "free":
        return store.node(f"trend/{seq.id}/z"), None, None
    eps = store.node(f"trend/{seq.id}/eps")
    P, V = unroll_nodes(store.node(f"trend/{seq.id}/z0"),
                        store.node(f"trend/{seq.id}/zdot0"), eps, seq.dts)
    return P, V, eps


def sequence_trajectory(store: ParamStore, seq: Sequence, mode: str):
    """Numeric (positions, velocities-or-None) of a sequence's trend."""
    P, V, _ = sequence_position_nodes(store, seq, mode)
    return P.value.copy(), (V.value.copy() if V is not None else None)


def build_objective(store: ParamStore, mcfg: ModelConfig, weights: LossWeights,
                    sequences, mode: str, F_all=None, aug_noise=None,
                    weights_const: bool = False):
    """Total loss node over a list of sequences, plus the term nodes.

    Regularizers are computed within each sequence only; the observation
    loss is summed over all samples. `aug_noise` (N, d) is added to the
    positions fed to the head (training-time augmentation), never to the
    positions entering the regularizers.
    """
    pos_nodes, reg_terms = [], {"L_eps": [], "L_v": [], "L_p": []}
    for seq in sequences:
        P, V, eps = sequence_position_nodes(store, seq, mode)
        pos_nodes.append(P)
        terms = regularizer_nodes(weights, P, V, eps, seq.dts)
        for k in reg_terms:
            reg_terms[k].append(terms[k])
    Zall = pos_nodes[0] if len(pos_nodes) == 1 else ad.concat(pos_nodes, axis=0)
    if aug_noise is not None:
        Zall = ad.add(Zall, aug_noise)
    X_all = np.concatenate([seq.X for seq in sequences])
    A_all = np.concatenate([seq.A for seq in sequences])
    Y_all = np.concatenate([seq.Y for seq in sequences])
    F = ad.wrap(F_all) if F_all is not None else features_node(store, mcfg, X_all)
    theta, tau = head_node(store, mcfg, F, Zall, as_const=weights_const)
    mu, s2 = predict_node(mcfg, theta, tau, action_basis(A_all, mcfg.k_action))
    L_obs = ad.vsum(gaussian_nll_node(mu, s2, Y_all))

    def total_of(nodes):
        out = nodes[0]
        for nd in nodes[1:]:
            out = ad.add(out, nd)
        return out

    terms = {"L_obs": L_obs,
             "L_eps": total_of(reg_terms["L_eps"]),
             "L_v": total_of(reg_terms["L_v"]),
             "L_p": total_of(reg_terms["L_p"])}
    total = ad.add(ad.add(ad.mul(terms["L_obs"], weights.alpha),
                          ad.mul(terms["L_eps"], weights.beta)),
                   ad.add(ad.mul(terms["L_v"], weights.gamma),
                          ad.mul(terms["L_p"], weights.zeta)))
    return total, terms


def _check_terms(terms, epoch):
    for name, node in terms.items():
        if not np.isfinite(node.value):
            raise TrainingError(f"non-finite {name} at epoch {epoch}")


def pretrain_feature_extractor(sequences, mcfg: ModelConfig, epochs: int,
                               lr: float, seed: int) -> ParamStore:
    """Train F on pooled data with a throwaway no-trend head, then freeze it.

    Returns a store whose F entries are frozen; identity mode returns an
    empty store (no-op).
    """
    if not sequences:
        raise ValueError("empty dataset")
    out = ParamStore()
    if mcfg.identity_features:
        return out
    rng = np.random.default_rng(seed)
    tmp = ParamStore()
    init_model_params(mcfg, tmp, rng, features_trainable=True)
    X = np.concatenate([seq.X for seq in sequences])
    A = np.concatenate([seq.A for seq in sequences])
    Y = np.concatenate([seq.Y for seq in sequences])
    Z0 = np.zeros((X.shape[0], mcfg.d_trend))
    for _ in range(epochs):
        tmp.zero_grad()
        mu, s2 = forward_batch(tmp, mcfg, X, A, Z0)
        backward(ad.vsum(gaussian_nll_node(mu, s2, Y)))
        tmp.adam_step(lr=lr)
    for name, p in tmp.items():
        if name.startswith("F/"):
            out.add(name, p.value.copy(), trainable=False)
    return out


def train(dataset: Dataset, mcfg: ModelConfig, tcfg: TrainConfig,
          f_store: ParamStore | None = None) -> tuple[ParamStore, TrainReport]:
    """Full-batch joint optimization of G and the trend parameters.

    The feature extractor is frozen: either copied from `f_store`
    (pretrained) or left at its random initialization.
    """
    if not dataset.sequences:
        raise ValueError("empty dataset")
    t0 = time.perf_counter()
    rng = np.random.default_rng(tcfg.seed)
    store = ParamStore()
    init_model_params(mcfg, store, rng, features_trainable=False)
    if f_store is not None:
        for name, p in f_store.items():
            if name.startswith("F/"):
                store[name].value[...] = p.value
    init_trend_params(store, dataset.sequences, tcfg.mode, mcfg.d_trend, rng)

    sequences = dataset.sequences
    X_all = np.concatenate([seq.X for seq in sequences])
    F_all = features_node(store, mcfg, X_all).value  # F frozen: constant
    n_total = X_all.shape[0]

    report = TrainReport()
    for epoch in range(tcfg.epochs):
        store.zero_grad()
        aug = None
        if tcfg.sigma_aug > 0:
            aug = rng.normal(0.0, tcfg.sigma_aug, size=(n_total, mcfg.d_trend))
        total, terms = build_objective(store, mcfg, tcfg.weights, sequences,
                                       tcfg.mode, F_all=F_all, aug_noise=aug)
        _check_terms(terms, epoch)
        backward(total)
        store.adam_step(lr=tcfg.lr)
        report.history.append({"epoch": epoch,
                               "L_obs": float(terms["L_obs"].value),
                               "L_eps": float(terms["L_eps"].value),
                               "L_v": float(terms["L_v"].value),
                               "L_p": float(terms["L_p"].value),
                               "total": float(total.value)})
    report.wall_clock = time.perf_counter() - t0
    return store, report


def evaluate_nll(store: ParamStore, mcfg: ModelConfig, sequences,
                 positions_by_seq: dict) -> np.ndarray:
    """Per-sample observation NLL under given trend positions (no grads)."""
    X = np.concatenate([seq.X for seq in sequences])
    A = np.concatenate([seq.A for seq in sequences])
    Y = np.concatenate([seq.Y for seq in sequences])
    Z = np.concatenate([np.asarray(positions_by_seq[seq.id]) for seq in sequences])
    mu, s2 = forward_batch(store, mcfg, X, A, Z, weights_const=True)
    return gaussian_nll_node(mu, s2, Y).value


def train_no_trend(sequences, mcfg: ModelConfig, epochs: int = 300,
                   lr: float = 1e-2, seed: int = 0) -> tuple[ParamStore, float]:
    """Fit the model with the trend input clamped to zero; returns the
    store and the final mean NLL. Used as the pooled/per-environment
    baseline in the concept-shift validity check."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    init_model_params(mcfg, store, rng, features_trainable=False)
    X = np.concatenate([seq.X for seq in sequences])
    A = np.concatenate([seq.A for seq in sequences])
    Y = np.concatenate([seq.Y for seq in sequences])
    Z0 = np.zeros((X.shape[0], mcfg.d_trend))
    F_all = features_node(store, mcfg, X).value
    nll = None
    for _ in range(epochs):
        store.zero_grad()
        theta, tau = head_node(store, mcfg, ad.wrap(F_all), ad.wrap(Z0))
        mu, s2 = predict_node(mcfg, theta, tau, action_basis(A, mcfg.k_action))
        nll_vec = gaussian_nll_node(mu, s2, Y)
        backward(ad.vsum(nll_vec))
        store.adam_step(lr=lr)
        nll = float(nll_vec.value.mean())
    return store, nll


def concept_shift_check(dataset: Dataset, mcfg: ModelConfig | None = None,
                        epochs: int = 300, seed: int = 0) -> dict:
    """Certify the benchmark contains concept shift: a pooled no-trend fit
    must have strictly higher mean NLL than per-environment no-trend fits."""
    if mcfg is None:
        mcfg = ModelConfig(d_x=dataset.sequences[0].samples[0].x.size,
                           identity_features=True, g_hidden=(8,))
    _, pooled_nll = train_no_trend(dataset.sequences, mcfg, epochs=epochs, seed=seed)
    per_env = [train_no_trend([seq], mcfg, epochs=epochs, seed=seed)[1]
               for seq in dataset.sequences]
    mean_per_env = float(np.mean(per_env))
    return {"pooled_nll": pooled_nll, "mean_per_env_nll": mean_per_env,
            "has_concept_shift": pooled_nll > mean_per_env}
