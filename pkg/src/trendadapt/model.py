"""Probabilistic regression model: frozen feature extractor, trend-conditioned
head, and action-conditioned Gaussian output.

The feature extractor F maps the observable input x to a feature vector f.
The head G consumes [f; z] (z = latent environment position) and outputs
coefficient vectors (theta, tau). Given an action a, the prediction is
Gaussian with mean theta . phi(a) and variance softplus(tau . phi(a)) plus
a small floor, where phi(a) is a polynomial basis (1, a, a^2, ...).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .params import ParamStore


@dataclass
class ModelConfig:
    d_x: int = 3                  # observable input dim
    d_f: int = 8                  # feature dim (ignored in identity mode)
    d_trend: int = 2              # latent environment dim
    k_action: int = 3             # polynomial action-basis order
    f_hidden: tuple = (16,)
    g_hidden: tuple = (32, 32)
    identity_features: bool = False
    var_floor: float = 1e-4

    def __post_init__(self):
        if min(self.d_x, self.d_trend, self.k_action) < 1:
            raise ValueError("all model dimensions must be >= 1")
        self.f_hidden = tuple(self.f_hidden)
        self.g_hidden = tuple(self.g_hidden)

    @property
    def feature_dim(self) -> int:
        return self.d_x if self.identity_features else self.d_f


@dataclass
class HeadParams:
    theta: np.ndarray
    tau: np.ndarray


@dataclass
class GaussianPrediction:
    mu: float
    sigma2: float


def _mlp_dims(d_in, hidden, d_out):
    dims = [d_in] + list(hidden) + [d_out]
    return list(zip(dims[:-1], dims[1:]))


def init_model_params(cfg: ModelConfig, store: ParamStore, rng: np.random.Generator,
                      features_trainable: bool = False):
    """Register F and G weights. F entries default frozen (identity mode has none)."""
    if not cfg.identity_features:
        for i, (a, b) in enumerate(_mlp_dims(cfg.d_x, cfg.f_hidden, cfg.d_f)):
            store.add(f"F/W{i}", rng.normal(0.0, 1.0 / np.sqrt(a), size=(a, b)),
                      trainable=features_trainable)
            store.add(f"F/b{i}", np.zeros(b), trainable=features_trainable)
    d_in = cfg.feature_dim + cfg.d_trend
    for i, (a, b) in enumerate(_mlp_dims(d_in, cfg.g_hidden, 2 * cfg.k_action)):
        store.add(f"G/W{i}", rng.normal(0.0, 1.0 / np.sqrt(a), size=(a, b)))
        store.add(f"G/b{i}", np.zeros(b))


def _mlp_forward(X: Node, layers, tanh_last: bool) -> Node:
    h = X
    n = len(layers)
    for i, (W, b) in enumerate(layers):
        h = ad.add(ad.matmul(h, W), b)
        if i < n - 1 or tanh_last:
            h = ad.tanh(h)
    return h


def _layer_nodes(store: ParamStore, prefix: str, as_const: bool):
    layers = []
    i = 0
    get = store.const if as_const else store.node
    while f"{prefix}/W{i}" in store:
        layers.append((get(f"{prefix}/W{i}"), get(f"{prefix}/b{i}")))
        i += 1
    return layers


def features_node(store: ParamStore, cfg: ModelConfig, X, as_const=None) -> Node:
    """Graph node of features for an (N, d_x) input batch.

    By default F enters the graph as constants when every F entry is frozen,
    so a frozen backbone can never receive gradient.
    """
    X = ad.wrap(X)
    if cfg.identity_features:
        return X
    if as_const is None:
        as_const = not any(p.trainable for n, p in store.items() if n.startswith("F/"))
    return _mlp_forward(X, _layer_nodes(store, "F", as_const), tanh_last=True)


def head_node(store: ParamStore, cfg: ModelConfig, F: Node, Z: Node,
              as_const=False) -> tuple[Node, Node]:
    """(theta, tau) nodes, each (N, K), from features and trend positions."""
    H = ad.concat([F, Z], axis=1)
    out = _mlp_forward(H, _layer_nodes(store, "G", as_const), tanh_last=False)
    # split columns: theta = out[:, :K], tau = out[:, K:]
    K = cfg.k_action
    outT = _transpose(out)
    return _transpose(ad.take(outT, slice(0, K))), _transpose(ad.take(outT, slice(K, 2 * K)))


def _transpose(a: Node) -> Node:
    out = Node(a.value.T, "transpose", (a,))

    def bwd():
        a._acc(out.grad.T)

    out._backward = bwd
    return out


def action_basis(a, k: int) -> np.ndarray:
    """phi(a) = (1, a, a^2, ..., a^(k-1)); accepts scalar or (N,) array."""
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    return np.stack([a ** j for j in range(k)], axis=1)


def predict_node(cfg: ModelConfig, theta: Node, tau: Node, phi: np.ndarray) -> tuple[Node, Node]:
    """(mu, sigma2) nodes of shape (N,); sigma2 > 0 via softplus + floor."""
    phi = ad.wrap(phi)
    mu = ad.vsum(ad.mul(theta, phi), axis=1)
    sigma2 = ad.add(ad.softplus(ad.vsum(ad.mul(tau, phi), axis=1)), cfg.var_floor)
    return mu, sigma2


def gaussian_nll_node(mu: Node, sigma2: Node, y) -> Node:
    """Per-sample negative log-likelihood vector: (y-mu)^2/s2 + log(2 pi s2)."""
    y = ad.wrap(y)
    r = ad.sub(y, mu)
    return ad.add(ad.div(ad.square(r), sigma2), ad.log(ad.mul(sigma2, 2.0 * np.pi)))


def forward_batch(store: ParamStore, cfg: ModelConfig, X, A, Z,
                  weights_const=False) -> tuple[Node, Node]:
    """Full forward pass: inputs X (N,d_x), actions A (N,), trend Z node/array."""
    F = features_node(store, cfg, np.asarray(X, dtype=np.float64))
    Z = ad.wrap(Z)
    theta, tau = head_node(store, cfg, F, Z, as_const=weights_const)
    phi = action_basis(np.asarray(A, dtype=np.float64), cfg.k_action)
    return predict_node(cfg, theta, tau, phi)


# -- single-sample convenience wrappers ---------------------------------

def feature_extract(store: ParamStore, cfg: ModelConfig, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cfg.d_x,):
        raise ValueError(f"expected input of shape ({cfg.d_x},), got {x.shape}")
    return features_node(store, cfg, x[None, :]).value[0]


def head_forward(store: ParamStore, cfg: ModelConfig, f, z) -> HeadParams:
    f = np.asarray(f, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (cfg.d_trend,):
        raise ValueError(f"expected trend of shape ({cfg.d_trend},), got {z.shape}")
    if f.shape != (cfg.feature_dim,):
        raise ValueError(f"expected features of shape ({cfg.feature_dim},), got {f.shape}")
    theta, tau = head_node(store, cfg, ad.wrap(f[None, :]), ad.wrap(z[None, :]))
    return HeadParams(theta=theta.value[0], tau=tau.value[0])


def predict(cfg: ModelConfig, hp: HeadParams, a: float) -> GaussianPrediction:
    phi = action_basis(a, cfg.k_action)[0]
    mu = float(hp.theta @ phi)
    sigma2 = float(np.logaddexp(0.0, hp.tau @ phi) + cfg.var_floor)
    return GaussianPrediction(mu=mu, sigma2=sigma2)


def gaussian_nll(pred: GaussianPrediction, y: float) -> float:
    r = y - pred.mu
    return r * r / pred.sigma2 + np.log(2.0 * np.pi * pred.sigma2)
