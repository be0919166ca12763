from __future__ import annotations

import numpy as np

from ..diff import ops as d
from .base import Manifold, inner_euclid


class Euclidean(Manifold):
    """Flat ``R^n`` with the standard inner product and one identity chart."""

    name = "euclidean"

    def __init__(self, n):
        if n < 1:
            raise ValueError("Euclidean dimension must be positive")
        self.ambient_dim = int(n)
        self.dim = int(n)

    def project_tangent(self, x, v):
        return v

    def exp(self, x, u):
        return x + u

    def log(self, x, y, check=True):
        return y - x

    def dist2(self, x, y):
        diff = y - x
        return d.sum(diff * diff, axis=-1)

    def dist(self, x, y):
        return d.norm(y - x)

    def dexp_inv(self, x, u, v):
        return v

    def inner(self, x, u, v):
        return inner_euclid(u, v)

    def egrad2rgrad(self, x, g):
        return g

    def check_point(self, x, tol=1e-9):
        return np.all(np.isfinite(x), axis=-1)

    def random_point(self, rng, size=()):
        size = (size,) if np.isscalar(size) else tuple(size)
        return rng.normal(size=size + (self.ambient_dim,))

    def identity(self):
        return np.zeros(self.ambient_dim)

    def chart(self, x, ids):
        return np.array(x, dtype=np.float64)

    def chart_inverse(self, z, ids):
        return np.array(z, dtype=np.float64)

    def pushforward(self, x, v, ids):
        return np.array(v, dtype=np.float64)

    def to_dict(self):
        return {"kind": "euclidean", "dim": self.ambient_dim}
