"""Training with latent environment trajectories, and what the latent
space looks like afterwards.

Training has two phases: a feature extractor is pretrained on pooled data
and frozen, then the conditioning head is trained jointly with one latent
trajectory per sequence under the constant-velocity transition model. The
script reports the loss terms over training, the silhouette of the latent
clusters (one cluster per environment), and the smoothness advantage of
the constant-velocity mode over free per-sample latents.

Uses a shortened schedule so it finishes in about a minute; the test
suite's reference model trains for 4000 epochs.

Run:  python3 demos/02_train_and_inspect_latents.py
"""
import numpy as np

from trendadapt.metrics import latent_silhouette, mean_turn_angle
from trendadapt.model import ModelConfig
from trendadapt.synth import GeneratorConfig, generate, train_test_split
from trendadapt.training import (TrainConfig, pretrain_feature_extractor,
                                 sequence_trajectory, train)
from trendadapt.trend import finite_difference_velocities

EPOCHS = 800

dataset = generate(GeneratorConfig(), seed=0)
train_set, _ = train_test_split(dataset, dataset.meta["held_out_ids"])
mcfg = ModelConfig()

print("pretraining the feature extractor (then frozen)...")
f_store = pretrain_feature_extractor(train_set.sequences, mcfg, 300, 1e-2, seed=0)

print(f"joint training, cv mode, {EPOCHS} epochs...")
store, report = train(train_set, mcfg,
                      TrainConfig(epochs=EPOCHS, seed=0, sigma_aug=0.2),
                      f_store=f_store)
for row in report.history[:: EPOCHS // 8]:
    print(f"  epoch {row['epoch']:4d}  total {row['total']:10.1f}  "
          f"L_obs {row['L_obs']:8.1f}  L_eps {row['L_eps']:7.3f}  "
          f"L_v {row['L_v']:7.3f}  L_p {row['L_p']:6.3f}")
print(f"  wall clock {report.wall_clock:.1f}s")

positions, labels, velocities = [], [], []
for seq in train_set.sequences:
    P, V = sequence_trajectory(store, seq, "cv")
    positions.append(P)
    labels.extend([seq.id] * P.shape[0])
    velocities.append(V)

sil = latent_silhouette(np.concatenate(positions), labels)
print(f"\nlatent clusters: silhouette by environment = {sil:.3f}")

# contrast trajectory smoothness against free (unconstrained) latents
store_free, _ = train(train_set, mcfg,
                      TrainConfig(epochs=EPOCHS, seed=0, sigma_aug=0.2, mode="free"),
                      f_store=f_store)
free_vel = []
for seq in train_set.sequences:
    P, _ = sequence_trajectory(store_free, seq, "free")
    free_vel.append(finite_difference_velocities(P, seq.dts).value)
print(f"mean turn angle: cv {mean_turn_angle(velocities):.3f} rad "
      f"vs free {mean_turn_angle(free_vel):.3f} rad "
      f"(smaller = temporally smoother trajectories)")

for seq in train_set.sequences[:4]:
    P, _ = sequence_trajectory(store, seq, "cv")
    print(f"  {seq.id}: centroid {np.round(P.mean(axis=0), 2)}, "
          f"travel {np.linalg.norm(P[-1] - P[0]):.2f}")
