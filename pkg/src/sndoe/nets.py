"""Network blocks: smooth MLP, Lipschitz invertible feature map, smooth ICNN.

Parameters live in a :class:`~sndoe.diff.ParamStore` under a per-network
prefix.  Every network is evaluated against a mapping ``p`` from parameter
names to arrays or ``Var`` leaves, so the same code serves plain evaluation
and differentiation.  Weights are stored ``(fan_in, fan_out)`` and applied as
``x @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diff import ops as d
from .diff import value

DEFAULT_SMOOTHING = 0.1


def smoothed_relu(x, width=DEFAULT_SMOOTHING):
    """0 below zero, ``x^2 / 2d`` on ``(0, d)``, ``x - d/2`` above ``d``."""
    if width <= 0:
        raise ValueError("smoothing width must be positive")
    return d.smoothed_relu(x, d=width)


def _activation(name):
    if name == "softplus":
        return d.softplus
    if name == "linear":
        return lambda x: x
    raise ValueError(f"unknown activation {name!r}")


def _gauss_init(rng, fan_in, fan_out, gain=1.0):
    return rng.normal(size=(fan_in, fan_out)) * (gain / np.sqrt(fan_in))


@dataclass
class Mlp:
    """Fully connected net with a smooth hidden activation and linear output."""

    prefix: str
    widths: tuple
    activation: str = "softplus"

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")

    @property
    def n_layers(self):
        return len(self.widths) - 1

    def names(self):
        return [f"{self.prefix}.{k}{i}" for i in range(self.n_layers) for k in ("W", "b")]

    def init(self, store, rng, out_gain=1.0):
        for i, (a, b) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            gain = out_gain if i == self.n_layers - 1 else 1.0
            store.add(f"{self.prefix}.W{i}", _gauss_init(rng, a, b, gain))
            store.add(f"{self.prefix}.b{i}", np.zeros(b))

    def weights(self, p):
        return [p[f"{self.prefix}.W{i}"] for i in range(self.n_layers)]

    def __call__(self, p, x, weights=None):
        ws = self.weights(p) if weights is None else weights
        act = _activation(self.activation)
        for i, w in enumerate(ws):
            x = x @ w + p[f"{self.prefix}.b{i}"]
            if i < self.n_layers - 1:
                x = act(x)
        return x

    def to_dict(self):
        return {"type": "mlp", "prefix": self.prefix, "widths": list(self.widths), "activation": self.activation}


def spectral_norm(w):
    """Largest singular value, differentiable in ``w``.

    The singular vectors come from an exact SVD and are held constant; the
    derivative of ``u^T W v`` is then the exact gradient of the top singular
    value wherever it is simple.
    """
    wv = value(w)
    u, s, vt = np.linalg.svd(wv)
    return d.sum(d.sum(w * np.outer(u[:, 0], vt[0]), axis=-1), axis=-1)


def lipschitz_scaled(weights, lipschitz):
    """Rescale layers so the product of their spectral norms is at most ``lipschitz``.

    Each layer gets the budget ``lipschitz ** (1/n)``; a layer already below
    its budget is left untouched.  The hidden activations must be 1-Lipschitz.
    """
    budget = float(lipschitz) ** (1.0 / len(weights))
    out = []
    for w in weights:
        s = spectral_norm(w)
        if value(s) > budget:
            w = w * (budget / s)
        out.append(w)
    return out


@dataclass
class InvertibleFeature:
    """``F(x) = [H(x), x]`` with ``H`` an MLP of bounded Lipschitz constant."""

    inner: Mlp
    lipschitz: float = 2.0

    @property
    def in_dim(self):
        return self.inner.widths[0]

    @property
    def out_dim(self):
        return self.inner.widths[-1] + self.inner.widths[0]

    def names(self):
        return self.inner.names()

    def init(self, store, rng):
        self.inner.init(store, rng)

    def effective_weights(self, p):
        return lipschitz_scaled(self.inner.weights(p), self.lipschitz)

    def __call__(self, p, x, weights=None):
        ws = self.effective_weights(p) if weights is None else weights
        return d.concat([self.inner(p, x, ws), x], axis=-1)

    def lipschitz_bound(self):
        """Bound on ``|F(x) - F(y)| / |x - y|``."""
        return float(np.sqrt(self.lipschitz**2 + 1.0))

    def to_dict(self):
        return {"type": "feature", "inner": self.inner.to_dict(), "lipschitz": self.lipschitz}


@dataclass
class Icnn:
    """Input convex network with smoothed-ReLU activations.

    ``z1 = s(y W0 + b0)``, ``z_{k+1} = s(z_k softplus(U_k) + y W_k + b_k)`` and
    a linear last layer of the same form, so the output is convex in ``y``.
    """

    prefix: str
    widths: tuple
    smoothing: float = DEFAULT_SMOOTHING
    raw_init: float = -2.0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 2:
            raise ValueError("an ICNN needs at least input and output widths")

    @property
    def n_layers(self):
        return len(self.widths) - 1

    def names(self):
        out = []
        for i in range(self.n_layers):
            if i > 0:
                out.append(f"{self.prefix}.U{i}")
            out += [f"{self.prefix}.W{i}", f"{self.prefix}.b{i}"]
        return out

    def init(self, store, rng):
        m = self.widths[0]
        for i in range(self.n_layers):
            a, b = self.widths[i], self.widths[i + 1]
            if i > 0:
                store.add(f"{self.prefix}.U{i}", self.raw_init + 0.1 * rng.normal(size=(a, b)))
            store.add(f"{self.prefix}.W{i}", _gauss_init(rng, m, b))
            store.add(f"{self.prefix}.b{i}", np.zeros(b))

    def z_weights(self, p):
        """Nonnegative effective z-path weights ``softplus(U_k)``."""
        return [d.softplus(p[f"{self.prefix}.U{i}"]) for i in range(1, self.n_layers)]

    def __call__(self, p, y, zw=None):
        zw = self.z_weights(p) if zw is None else zw
        z = None
        for i in range(self.n_layers):
            pre = y @ p[f"{self.prefix}.W{i}"] + p[f"{self.prefix}.b{i}"]
            if i > 0:
                pre = z @ zw[i - 1] + pre
            z = pre if i == self.n_layers - 1 else smoothed_relu(pre, self.smoothing)
        return z[..., 0]

    def lipschitz_bound(self, p):
        """Upper bound on the Lipschitz constant (all activations are 1-Lipschitz)."""
        lip = 0.0
        zw = [value(w) for w in self.z_weights({k: value(v) for k, v in p.items()})]
        for i in range(self.n_layers):
            w = np.linalg.norm(value(p[f"{self.prefix}.W{i}"]), 2)
            lip = w if i == 0 else lip * np.linalg.norm(zw[i - 1], 2) + w
        return float(lip)

    def to_dict(self):
        return {
            "type": "icnn",
            "prefix": self.prefix,
            "widths": list(self.widths),
            "smoothing": self.smoothing,
            "raw_init": self.raw_init,
        }
