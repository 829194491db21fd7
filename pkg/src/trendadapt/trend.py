"""Latent environment trajectories: constant-velocity transition model and
the trajectory regularization losses.

A trajectory is either "free" (one independent position per sample) or
"cv" (an initial position/velocity state plus a per-step process-noise
sequence, unrolled through the constant-velocity recurrence). The three
regularizers penalize process noise, large positional jumps, and abrupt
direction changes of the latent velocity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node

DEGENERATE_VELOCITY_NORM = 1e-8


@dataclass
class TrendState:
    """Concatenated latent position and velocity [z; zdot]."""
    z: np.ndarray
    zdot: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        self.zdot = np.asarray(self.zdot, dtype=np.float64)


@dataclass
class ProcessNoise:
    """Velocity perturbation applied over an elapsed time dt > 0."""
    eps: np.ndarray
    dt: float

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=np.float64)
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")


@dataclass
class LossWeights:
    """Coefficients of the combined objective and the noise scale priors."""
    alpha: float = 1.0
    beta: float = 100.0
    gamma: float = 1000.0
    zeta: float = 1000.0
    sigma_v2: float = 1.0
    sigma_eps2: float = 1.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma, self.zeta) < 0:
            raise ValueError("loss coefficients must be >= 0")
        if self.sigma_v2 <= 0 or self.sigma_eps2 <= 0:
            raise ValueError("noise scales must be > 0")


def transition_apply(prev: TrendState, noise: ProcessNoise) -> TrendState:
    """One constant-velocity step; noise enters the velocity only."""
    return TrendState(z=prev.z + noise.dt * prev.zdot, zdot=prev.zdot + noise.eps)


def unroll(z0: TrendState, noises: list[ProcessNoise]) -> list[TrendState]:
    """States [Z0, Z1, ..., ZN-1] of the recurrence (numeric, non-graph)."""
    states = [z0]
    for n in noises:
        states.append(transition_apply(states[-1], n))
    return states


def unroll_nodes(z0: Node, zdot0: Node, eps: Node, dts: np.ndarray) -> tuple[Node, Node]:
    """Differentiable unroll: positions (N, d) and velocities (N, d) nodes.

    z0, zdot0 are (d,) nodes, eps an (N-1, d) node, dts the (N-1,) elapsed
    times. Uses the closed form v_i = zdot0 + cumsum(eps)[:i] and
    z_i = z0 + cumsum(dt_i * v_{i-1}) so the graph stays small.
    """
    dts = np.asarray(dts, dtype=np.float64)
    if dts.size and dts.min() <= 0:
        raise ValueError("elapsed times must be > 0")
    d = z0.value.shape[0]
    n = dts.size + 1
    if n == 1:
        return ad.reshape(z0, (1, d)), ad.reshape(zdot0, (1, d))
    zero_row = np.zeros((1, d))
    V = ad.add(ad.concat([ad.wrap(zero_row), ad.cumsum(eps, axis=0)], axis=0),
               ad.reshape(zdot0, (1, d)))
    steps = ad.mul(ad.take(V, slice(0, n - 1)), dts[:, None])
    P = ad.add(ad.concat([ad.wrap(zero_row), ad.cumsum(steps, axis=0)], axis=0),
               ad.reshape(z0, (1, d)))
    return P, V


def loss_eps(eps, dts, sigma_eps2: float) -> Node:
    """Process-noise penalty: sum_i ||eps_i||^2 / (sigma_eps2 * dt_i)."""
    eps = ad.wrap(eps)
    dts = np.asarray(dts, dtype=np.float64)
    if eps.value.shape[0] == 0:
        return ad.wrap(0.0)
    return ad.vsum(ad.div(ad.vsum(ad.square(eps), axis=1), sigma_eps2 * dts))


def loss_v(positions, dts, sigma_v2: float) -> Node:
    """Positional-jump penalty: sum_i ||z_{i+1} - z_i||^2 / (sigma_v2 * dt_i)."""
    P = ad.wrap(positions)
    dts = np.asarray(dts, dtype=np.float64)
    n = P.value.shape[0]
    if n != dts.size + 1:
        raise ValueError("need len(positions) == len(dts) + 1")
    if dts.size and dts.min() <= 0:
        raise ValueError("elapsed times must be > 0")
    if n < 2:
        return ad.wrap(0.0)
    D = ad.sub(ad.take(P, slice(1, n)), ad.take(P, slice(0, n - 1)))
    return ad.vsum(ad.div(ad.vsum(ad.square(D), axis=1), sigma_v2 * dts))


def loss_p(velocities) -> Node:
    """Direction-change penalty: sum_i (1 - cos(v_{i+1}, v_i)).

    Pairs where either velocity norm is below DEGENERATE_VELOCITY_NORM are
    skipped (the cosine is undefined there).
    """
    V = ad.wrap(velocities)
    n = V.value.shape[0]
    if n < 2:
        return ad.wrap(0.0)
    norms = np.linalg.norm(V.value, axis=1)
    valid = np.flatnonzero((norms[1:] > DEGENERATE_VELOCITY_NORM)
                           & (norms[:-1] > DEGENERATE_VELOCITY_NORM))
    if valid.size == 0:
        return ad.wrap(0.0)
    V1 = ad.take(V, valid + 1)
    V0 = ad.take(V, valid)
    dots = ad.vsum(ad.mul(V1, V0), axis=1)
    n1 = ad.sqrt(ad.vsum(ad.square(V1), axis=1))
    n0 = ad.sqrt(ad.vsum(ad.square(V0), axis=1))
    return ad.vsum(ad.sub(1.0, ad.div(dots, ad.mul(n1, n0))))


def finite_difference_velocities(positions, dts) -> Node:
    """Velocity proxy for free-mode trajectories: (z_{i+1} - z_i) / dt_i."""
    P = ad.wrap(positions)
    dts = np.asarray(dts, dtype=np.float64)
    n = P.value.shape[0]
    D = ad.sub(ad.take(P, slice(1, n)), ad.take(P, slice(0, n - 1)))
    return ad.div(D, dts[:, None])


def add_trend_noise(z: np.ndarray, sigma_aug: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian augmentation of trend positions (training-time only)."""
    if sigma_aug < 0:
        raise ValueError("sigma_aug must be >= 0")
    z = np.asarray(z, dtype=np.float64)
    if sigma_aug == 0:
        return z.copy()
    return z + rng.normal(0.0, sigma_aug, size=z.shape)


def regularizer_nodes(weights: LossWeights, positions: Node, velocities: Node | None,
                      eps: Node | None, dts: np.ndarray) -> dict[str, Node]:
    """The three regularizer terms for one sequence trajectory.

    In cv mode `velocities` and `eps` come from the unrolled state; in free
    mode pass eps=None (the noise penalty is identically 0) and
    velocities=None to use finite differences of the positions.
    """
    if velocities is None:
        velocities = finite_difference_velocities(positions, dts)
    terms = {
        "L_v": loss_v(positions, dts, weights.sigma_v2),
        "L_p": loss_p(velocities),
    }
    terms["L_eps"] = loss_eps(eps, dts, weights.sigma_eps2) if eps is not None else ad.wrap(0.0)
    return terms


def write_latent_csv(path, rows):
    """Write the trend-space export CSV.

    rows: iterables of (sequence_id, step, t, z (d,), zdot (d,) or None, mode).
    Free-mode rows leave the zdot columns empty.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no trend rows to export")
    d = len(rows[0][3])
    header = (["sequence_id", "step", "t"]
              + [f"z_{i+1}" for i in range(d)]
              + [f"zdot_{i+1}" for i in range(d)]
              + ["mode"])
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for seq_id, step, t, z, zdot, mode in rows:
            zcols = [repr(float(v)) for v in z]
            vcols = [repr(float(v)) for v in zdot] if zdot is not None else [""] * d
            fh.write(",".join([str(seq_id), str(step), repr(float(t))] + zcols + vcols + [mode]) + "\n")
