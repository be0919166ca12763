"""Typed single-point wrappers over the batched manifold operations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import Manifold, PointOutsideChart


@dataclass(frozen=True)
class ManifoldPoint:
    manifold: Manifold
    coords: np.ndarray

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64)
        if coords.shape != (self.manifold.ambient_dim,):
            raise ValueError(
                f"expected {self.manifold.ambient_dim} ambient coordinates, got shape {coords.shape}"
            )
        object.__setattr__(self, "coords", coords)

    def is_valid(self, tol=1e-9):
        return bool(self.manifold.check_point(self.coords, tol))


@dataclass(frozen=True)
class TangentVector:
    manifold: Manifold
    base: ManifoldPoint
    coords: np.ndarray

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64)
        if coords.shape != (self.manifold.ambient_dim,):
            raise ValueError(
                f"expected {self.manifold.ambient_dim} ambient coordinates, got shape {coords.shape}"
            )
        object.__setattr__(self, "coords", coords)

    def is_valid(self, tol=1e-9):
        return bool(self.manifold.check_tangent(self.base.coords, self.coords, tol))


def _same(x, y):
    if x.manifold != y.manifold:
        raise ValueError(f"manifold mismatch: {x.manifold} vs {y.manifold}")


def project_tangent(x: ManifoldPoint, v) -> TangentVector:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (x.manifold.ambient_dim,):
        raise ValueError(f"vector has shape {v.shape}, ambient dimension is {x.manifold.ambient_dim}")
    return TangentVector(x.manifold, x, x.manifold.project_tangent(x.coords, v))


def exp_map(x: ManifoldPoint, u: TangentVector) -> ManifoldPoint:
    _same(x, u)
    return ManifoldPoint(x.manifold, x.manifold.exp(x.coords, u.coords))


def log_map(x: ManifoldPoint, y: ManifoldPoint) -> TangentVector:
    _same(x, y)
    return TangentVector(x.manifold, x, x.manifold.log(x.coords, y.coords))


def distance(x: ManifoldPoint, y: ManifoldPoint) -> float:
    _same(x, y)
    return float(x.manifold.dist(x.coords, y.coords))


def inner(x: ManifoldPoint, u: TangentVector, v: TangentVector) -> float:
    _same(x, u)
    _same(x, v)
    return float(x.manifold.inner(x.coords, u.coords, v.coords))


def norm(x: ManifoldPoint, u: TangentVector) -> float:
    return float(np.sqrt(max(inner(x, u, u), 0.0)))


def riemannian_grad(x: ManifoldPoint, ambient_grad) -> TangentVector:
    g = np.asarray(ambient_grad, dtype=np.float64)
    return TangentVector(x.manifold, x, x.manifold.egrad2rgrad(x.coords, g))


def chart(x: ManifoldPoint, chart_id=None, strict=True):
    """Chart coordinates of ``x``; returns ``(coords, chart_id)``.

    With ``strict`` a point whose coordinates exceed the chart radius raises
    :class:`PointOutsideChart`.
    """
    m = x.manifold
    ids = m.best_chart(x.coords) if chart_id is None else np.atleast_1d(np.asarray(chart_id, dtype=np.int64))
    z = m.chart(x.coords, ids)
    if strict and np.any(m.chart_norms(z) > m.chart_radii):
        raise PointOutsideChart(f"chart coordinates {z} exceed radius {m.chart_radii}")
    return z, ids


def chart_inverse(manifold: Manifold, z, chart_id) -> ManifoldPoint:
    ids = np.atleast_1d(np.asarray(chart_id, dtype=np.int64))
    return ManifoldPoint(manifold, manifold.chart_inverse(np.asarray(z, dtype=np.float64), ids))


def pushforward(x: ManifoldPoint, v: TangentVector, chart_id):
    ids = np.atleast_1d(np.asarray(chart_id, dtype=np.int64))
    return x.manifold.pushforward(x.coords, v.coords, ids)
