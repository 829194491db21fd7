"""Named parameter storage with Adam updates and JSON checkpoints."""
from __future__ import annotations

import hashlib
import json

import numpy as np

from .autodiff import Node

CHECKPOINT_FORMAT_VERSION = 1


class NonFiniteGradError(RuntimeError):
    """An optimizer step saw a non-finite gradient; names the entry."""


class Param:
    __slots__ = ("name", "value", "grad", "trainable", "m", "v", "update_mask")

    def __init__(self, name, value, trainable=True):
        self.name = name
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        # optional boolean mask restricting which components get updated
        self.update_mask = None


class ParamStore:
    """Ordered named collection of trainable arrays with Adam state.

    Insertion order is deterministic, so checkpoints written under a
    fixed seed are byte-reproducible.
    """

    def __init__(self):
        self._entries: dict[str, Param] = {}
        self.step = 0

    def add(self, name, value, trainable=True) -> Param:
        if name in self._entries:
            raise KeyError(f"duplicate parameter name: {name}")
        p = Param(name, value, trainable)
        self._entries[name] = p
        return p

    def remove(self, name):
        del self._entries[name]

    def __contains__(self, name):
        return name in self._entries

    def __getitem__(self, name) -> Param:
        return self._entries[name]

    def items(self):
        return self._entries.items()

    def names(self):
        return list(self._entries)

    def node(self, name) -> Node:
        """Graph leaf bound to this parameter; backward fills its grad."""
        p = self._entries[name]
        return Node(p.value, tag="leaf", param=p)

    def const(self, name) -> Node:
        """Graph constant view of a parameter; never receives gradient."""
        return Node(self._entries[name].value, tag="const")

    def zero_grad(self):
        for p in self._entries.values():
            p.grad[...] = 0.0

    def adam_step(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        """One Adam update over all trainable entries; frozen ones untouched."""
        self.step += 1
        t = self.step
        for name, p in self._entries.items():
            if not p.trainable:
                continue
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradError(f"non-finite gradient for '{name}'")
            g = p.grad
            if p.update_mask is not None:
                g = g * p.update_mask
            p.m = beta1 * p.m + (1.0 - beta1) * g
            p.v = beta2 * p.v + (1.0 - beta2) * g * g
            m_hat = p.m / (1.0 - beta1 ** t)
            v_hat = p.v / (1.0 - beta2 ** t)
            delta = lr * m_hat / (np.sqrt(v_hat) + eps)
            if p.update_mask is not None:
                # stale momentum must not move masked-out components
                delta = delta * p.update_mask
            p.value -= delta

    # -- introspection ---------------------------------------------------

    def weight_hash(self, prefixes=("F/", "G/")) -> str:
        """SHA-256 over the raw bytes of entries matching the prefixes."""
        h = hashlib.sha256()
        for name, p in self._entries.items():
            if any(name.startswith(pre) for pre in prefixes):
                h.update(name.encode())
                h.update(p.value.tobytes())
        return h.hexdigest()

    # -- checkpoint I/O --------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "step": self.step,
            "entries": [
                {
                    "name": p.name,
                    "shape": list(p.value.shape),
                    "value": p.value.reshape(-1).tolist(),
                    "m": p.m.reshape(-1).tolist(),
                    "v": p.v.reshape(-1).tolist(),
                    "trainable": p.trainable,
                }
                for p in self._entries.values()
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParamStore":
        if d.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format_version: {d.get('format_version')!r}")
        store = cls()
        store.step = d["step"]
        for e in d["entries"]:
            shape = tuple(e["shape"])
            p = store.add(e["name"], np.array(e["value"]).reshape(shape), e["trainable"])
            p.m = np.array(e["m"]).reshape(shape)
            p.v = np.array(e["v"]).reshape(shape)
        return store

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "ParamStore":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
