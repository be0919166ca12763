from __future__ import annotations

import numpy as np

from ..diff import ops as d
from ..diff import value
from .base import Manifold


class Product(Manifold):
    """Cartesian product; every operation acts blockwise on the factors."""

    name = "product"

    def __init__(self, factors):
        flat = []
        for f in factors:
            flat.extend(f.factors if isinstance(f, Product) else [f])
        if not flat:
            raise ValueError("a product needs at least one factor")
        self._factors = flat
        self.ambient_dim = sum(f.ambient_dim for f in flat)
        self.dim = sum(f.dim for f in flat)
        self._amb = _offsets([f.ambient_dim for f in flat])
        self._int = _offsets([f.dim for f in flat])

    @property
    def factors(self):
        return list(self._factors)

    def blocks(self, x):
        return [x[..., a:b] for a, b in self._amb]

    def _map(self, fn, *arrays):
        split = [self.blocks(a) for a in arrays]
        return d.concat([fn(f, *parts) for f, *parts in zip(self._factors, *split)], axis=-1)

    def _reduce(self, fn, *arrays):
        split = [self.blocks(a) for a in arrays]
        out = None
        for f, *parts in zip(self._factors, *split):
            r = fn(f, *parts)
            out = r if out is None else out + r
        return out

    def project_tangent(self, x, v):
        return self._map(lambda f, xb, vb: f.project_tangent(xb, vb), x, v)

    def exp(self, x, u):
        return self._map(lambda f, xb, ub: f.exp(xb, ub), x, u)

    def log(self, x, y, check=True):
        return self._map(lambda f, xb, yb: f.log(xb, yb, check=check), x, y)

    def dexp_inv(self, x, u, v):
        return self._map(lambda f, xb, ub, vb: f.dexp_inv(xb, ub, vb), x, u, v)

    def normalize(self, x):
        return self._map(lambda f, xb: f.normalize(xb), x)

    def dist2(self, x, y):
        return self._reduce(lambda f, xb, yb: f.dist2(xb, yb), x, y)

    def inner(self, x, u, v):
        return self._reduce(lambda f, xb, ub, vb: f.inner(xb, ub, vb), x, u, v)

    def egrad2rgrad(self, x, g):
        return self._map(lambda f, xb, gb: f.egrad2rgrad(xb, gb), x, g)

    def degenerate_mask(self, x, x_e, tol=None):
        masks = [
            f.degenerate_mask(xb, eb) if tol is None else f.degenerate_mask(xb, eb, tol)
            for f, xb, eb in zip(self._factors, self.blocks(value(x)), self.blocks(value(x_e)))
        ]
        return np.logical_or.reduce(masks)

    def within_injectivity(self, x, u, margin=1e-6):
        return np.logical_and.reduce(
            [f.within_injectivity(xb, ub, margin) for f, xb, ub in zip(self._factors, self.blocks(value(x)), self.blocks(value(u)))]
        )

    def check_point(self, x, tol=1e-9):
        return np.logical_and.reduce([f.check_point(b, tol) for f, b in zip(self._factors, self.blocks(value(x)))])

    def check_tangent(self, x, u, tol=1e-9):
        return np.logical_and.reduce(
            [f.check_tangent(xb, ub, tol) for f, xb, ub in zip(self._factors, self.blocks(value(x)), self.blocks(value(u)))]
        )

    def random_point(self, rng, size=()):
        return np.concatenate([f.random_point(rng, size) for f in self._factors], axis=-1)

    def random_tangent(self, rng, x, scale=1.0):
        return np.concatenate(
            [f.random_tangent(rng, b, scale) for f, b in zip(self._factors, self.blocks(x))], axis=-1
        )

    def identity(self):
        return np.concatenate([f.identity() for f in self._factors])

    # -- charts: one chart id column per factor -----------------------------

    @property
    def n_chart_factors(self):
        return len(self._factors)

    def best_chart(self, x):
        return np.concatenate([f.best_chart(b) for f, b in zip(self._factors, self.blocks(x))], axis=-1)

    def _zblocks(self, z):
        return [z[..., a:b] for a, b in self._int]

    def chart(self, x, ids):
        return np.concatenate(
            [f.chart(b, ids[..., i : i + 1]) for i, (f, b) in enumerate(zip(self._factors, self.blocks(x)))],
            axis=-1,
        )

    def chart_inverse(self, z, ids):
        return np.concatenate(
            [f.chart_inverse(b, ids[..., i : i + 1]) for i, (f, b) in enumerate(zip(self._factors, self._zblocks(z)))],
            axis=-1,
        )

    def pushforward(self, x, v, ids):
        return np.concatenate(
            [
                f.pushforward(xb, vb, ids[..., i : i + 1])
                for i, (f, xb, vb) in enumerate(zip(self._factors, self.blocks(x), self.blocks(v)))
            ],
            axis=-1,
        )

    def chart_norms(self, z):
        return np.concatenate([np.linalg.norm(b, axis=-1, keepdims=True) for b in self._zblocks(z)], axis=-1)

    @property
    def chart_radii(self):
        return np.array([f.chart_radius for f in self._factors])

    def to_dict(self):
        return {"kind": "product", "factors": [f.to_dict() for f in self._factors]}


def _offsets(sizes):
    out = []
    start = 0
    for s in sizes:
        out.append((start, start + s))
        start += s
    return out
