"""Common manifold interface.

Points and tangent vectors are arrays (or autodiff ``Var`` nodes) in ambient
coordinates with arbitrary leading batch dimensions; the last axis holds the
coordinates.  Chart coordinates live in ``R^dim`` and charts are identified by
integer ids (one column per product factor).
"""

from __future__ import annotations

import numpy as np

from ..diff import ops as d
from ..diff import value


class CutLocus(ValueError):
    """Raised when a logarithm is requested at (or next to) the cut locus."""


class PointOutsideChart(ValueError):
    """Raised when chart coordinates leave the trusted region of a chart."""


class Manifold:
    """Riemannian manifold embedded in ``R^ambient_dim``."""

    name = "manifold"
    ambient_dim: int
    dim: int
    # Charts with coordinate norm above this radius are switched by the
    # dynamic-chart solver.
    chart_radius = np.inf

    # -- core geometry -----------------------------------------------------

    def project_tangent(self, x, v):
        raise NotImplementedError

    def exp(self, x, u):
        raise NotImplementedError

    def log(self, x, y, check=True):
        raise NotImplementedError

    def dist2(self, x, y):
        raise NotImplementedError

    def dexp_inv(self, x, u, v):
        """Inverse differential of ``exp_x`` at ``u`` applied to ``v``.

        ``v`` is tangent at ``exp_x(u)``; the result ``w`` is tangent at ``x``
        with ``D exp_x(u)[w] = v``.
        """
        raise NotImplementedError

    def dist(self, x, y):
        return d.safe_sqrt(self.dist2(x, y))

    def inner(self, x, u, v):
        raise NotImplementedError

    def norm(self, x, u):
        return d.safe_sqrt(self.inner(x, u, u))

    def egrad2rgrad(self, x, g):
        """Riemannian gradient from the ambient (coordinate) gradient."""
        raise NotImplementedError

    def within_injectivity(self, x, u, margin=1e-6):
        """Rows where ``exp_x`` is invertible near ``u`` (log-mappable image)."""
        return np.ones(np.shape(value(u))[:-1], dtype=bool)

    def degenerate_mask(self, x, x_e, tol=1e-6):
        """Points where the distance to ``x_e`` is not differentiable."""
        return np.zeros(np.shape(value(x))[:-1], dtype=bool)

    def normalize(self, x):
        """Map a nearby ambient point onto the manifold (drift removal)."""
        return x

    # -- validation and sampling -------------------------------------------

    def check_point(self, x, tol=1e-9):
        """Boolean mask of rows satisfying the point invariants."""
        raise NotImplementedError

    def check_tangent(self, x, u, tol=1e-9):
        return np.ones(np.shape(value(x))[:-1], dtype=bool)

    def random_point(self, rng, size=()):
        raise NotImplementedError

    def random_tangent(self, rng, x, scale=1.0):
        v = rng.normal(size=np.shape(x)) * scale
        return self.project_tangent(x, v)

    def identity(self):
        """A canonical base point (origin, identity quaternion, identity matrix)."""
        raise NotImplementedError

    # -- charts --------------------------------------------------------------

    @property
    def n_chart_factors(self):
        return 1

    def best_chart(self, x):
        """Chart ids (``(..., n_chart_factors)`` ints) best centred on ``x``."""
        return np.zeros(np.shape(x)[:-1] + (1,), dtype=np.int64)

    def chart(self, x, ids):
        raise NotImplementedError

    def chart_inverse(self, z, ids):
        raise NotImplementedError

    def pushforward(self, x, v, ids):
        raise NotImplementedError

    @property
    def chart_radii(self):
        return np.array([self.chart_radius])

    def chart_norms(self, z):
        """Per-factor chart coordinate norms, shape ``(..., n_chart_factors)``."""
        return np.linalg.norm(z, axis=-1, keepdims=True)

    # -- serialization -------------------------------------------------------

    def to_dict(self):
        raise NotImplementedError

    def __eq__(self, other):
        return isinstance(other, Manifold) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(repr(self.to_dict()))

    def __repr__(self):
        return f"{type(self).__name__}({self.to_dict()})"

    @property
    def factors(self):
        return [self]


def inner_euclid(u, v):
    return d.sum(u * v, axis=-1)
