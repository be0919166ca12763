"""Parameter storage and the AdamW update."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Var


@dataclass
class ParamStore:
    """Named float64 parameter arrays plus AdamW moment state."""

    params: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    version: int = 0

    def add(self, name, array):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        arr = np.array(array, dtype=np.float64)
        self.params[name] = arr
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        self.version += 1

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def leaves(self, names=None):
        """Fresh ``Var`` leaves for the selected parameters (default: all)."""
        names = self.names() if names is None else names
        return {n: Var(self.params[n], name=n) for n in names}

    def values(self):
        return dict(self.params)

    def set(self, name, array):
        arr = np.asarray(array, dtype=np.float64)
        if arr.shape != self.params[name].shape:
            raise ValueError(f"shape mismatch for {name!r}: {arr.shape} vs {self.params[name].shape}")
        self.params[name] = arr.copy()
        self.version += 1

    def copy(self):
        return ParamStore(
            {k: a.copy() for k, a in self.params.items()},
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            self.step,
            self.version,
        )

    def reset_optimizer(self):
        for k in self.params:
            self.m[k] = np.zeros_like(self.params[k])
            self.v[k] = np.zeros_like(self.params[k])
        self.step = 0

    def num_params(self):
        return int(sum(a.size for a in self.params.values()))


def adamw_step(store, grads, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
    """One decoupled-weight-decay Adam update, in place; returns ``store``.

    ``grads`` maps parameter names to arrays; parameters without an entry
    are left untouched (their moments do not advance either).
    """
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, g in grads.items():
        p = store.params[name]
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        m = beta1 * store.m[name] + (1.0 - beta1) * g
        v = beta2 * store.v[name] + (1.0 - beta2) * g * g
        store.m[name] = m
        store.v[name] = v
        p = p * (1.0 - lr * weight_decay)
        store.params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    store.version += 1
    return store
