"""Evaluation metrics: predictive quality, calibration, and latent-space
structure (cluster separability and trajectory smoothness)."""
from __future__ import annotations

import json

import numpy as np
from sklearn.metrics import silhouette_score

from .trend import DEGENERATE_VELOCITY_NORM

METRICS_FORMAT_VERSION = 1


def mean_nll(mu, sigma2, y) -> float:
    mu, sigma2, y = (np.asarray(v, dtype=np.float64) for v in (mu, sigma2, y))
    r = y - mu
    return float(np.mean(r * r / sigma2 + np.log(2.0 * np.pi * sigma2)))


def rmse(mu, y) -> float:
    mu, y = np.asarray(mu), np.asarray(y)
    return float(np.sqrt(np.mean((y - mu) ** 2)))


def coverage_95(mu, sigma2, y) -> float:
    mu, sigma2, y = (np.asarray(v) for v in (mu, sigma2, y))
    return float(np.mean(np.abs(y - mu) <= 1.96 * np.sqrt(sigma2)))


def latent_silhouette(positions, labels) -> float | None:
    """Silhouette of trend positions labeled by sequence; None when fewer
    than two labels are present (undefined, not an error)."""
    positions = np.asarray(positions)
    labels = np.asarray(labels)
    if len(set(labels.tolist())) < 2:
        return None
    return float(silhouette_score(positions, labels))


def turn_angles(velocities) -> np.ndarray:
    """Angles (radians) between consecutive velocity vectors; degenerate
    pairs (near-zero norm) are skipped."""
    V = np.asarray(velocities, dtype=np.float64)
    if V.shape[0] < 2:
        return np.empty(0)
    n = np.linalg.norm(V, axis=1)
    valid = (n[1:] > DEGENERATE_VELOCITY_NORM) & (n[:-1] > DEGENERATE_VELOCITY_NORM)
    dots = np.sum(V[1:] * V[:-1], axis=1)[valid]
    denom = (n[1:] * n[:-1])[valid]
    return np.arccos(np.clip(dots / denom, -1.0, 1.0))


def mean_turn_angle(velocity_sets) -> float | None:
    """Mean turn angle across a collection of per-sequence velocity arrays."""
    angles = [turn_angles(v) for v in velocity_sets if v is not None]
    angles = [a for a in angles if a.size]
    if not angles:
        return None
    return float(np.mean(np.concatenate(angles)))


def compute_metrics(mu, sigma2, y, trend_positions=None, trend_labels=None,
                    velocity_sets=None, eps_norms=None) -> dict:
    """MetricsReport dict. Latent metrics are included when trends are given."""
    mu = np.asarray(mu)
    if mu.size == 0:
        raise ValueError("empty predictions")
    report = {
        "format_version": METRICS_FORMAT_VERSION,
        "nll": mean_nll(mu, sigma2, y),
        "rmse": rmse(mu, y),
        "coverage_95": coverage_95(mu, sigma2, y),
    }
    if trend_positions is not None:
        report["silhouette"] = latent_silhouette(trend_positions, trend_labels)
    if velocity_sets is not None:
        report["mean_turn_angle"] = mean_turn_angle(velocity_sets)
    if eps_norms is not None:
        eps_norms = np.asarray(eps_norms)
        report["mean_eps_norm"] = float(eps_norms.mean()) if eps_norms.size else None
    assert report["coverage_95"] is None or 0.0 <= report["coverage_95"] <= 1.0
    return report


def save_metrics(report: dict, path):
    with open(path, "w") as fh:
        json.dump(report, fh, sort_keys=True)
