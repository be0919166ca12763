"""Unit quaternions: the 3-sphere in R^4 with the round metric."""

from __future__ import annotations

import numpy as np

from ..diff import ops as d
from ..diff import value
from .base import CutLocus, Manifold, inner_euclid

_OTHERS = np.array([[j for j in range(4) if j != i] for i in range(4)])


def _chart_parts(ids):
    ids = np.asarray(ids)[..., 0]
    axis = ids // 2
    sign = np.where(ids % 2 == 0, 1.0, -1.0)
    return axis, sign


class UnitQuaternion(Manifold):
    """``S^3 = {x in R^4 : |x| = 1}``.

    The atlas has eight stereographic charts, one per pole ``+-e_i``; the chart
    with pole ``P`` is centred on ``-P`` and its coordinates are
    ``x_others / (1 - <x, P>)``.
    """

    name = "s3"
    ambient_dim = 4
    dim = 3
    chart_radius = 2.0
    antipode_tol = 1e-6

    def project_tangent(self, x, v):
        return v - x * d.sum(x * v, axis=-1, keepdims=True)

    def normalize(self, x):
        n2 = d.sum(x * x, axis=-1, keepdims=True)
        drift = np.abs(value(n2) - 1.0) > 1e-15
        if not np.any(drift):
            return x
        return d.where(x / d.sqrt(n2), x, cond=drift)

    def exp(self, x, u):
        s = d.sum(u * u, axis=-1, keepdims=True)
        y = x * d.cos_sqrt(s) + u * d.sinc_sqrt(s)
        return self.normalize(y)

    def log(self, x, y, check=True):
        if check:
            near = np.linalg.norm(value(x) + value(y), axis=-1) < self.antipode_tol
            if np.any(near):
                raise CutLocus("logarithm requested at the antipode of the base point")
        c = d.sum(x * y, axis=-1, keepdims=True)
        w = y - c * x
        theta = d.atan2(d.norm(w, keepdims=True), c)
        return d.theta_over_sin(theta) * w

    def dexp_inv(self, x, u, v):
        # Jacobi fields: the radial part is carried over unchanged, the normal
        # part is stretched by sin(r) / r.
        s = d.sum(u * u, axis=-1, keepdims=True)
        velocity = x * (-s * d.sinc_sqrt(s)) + u * d.cos_sqrt(s)
        radial = d.sum(v * velocity, axis=-1, keepdims=True)
        return v * d.tos_sqrt(s) + radial * (x + u * d.cotc_sq(s))

    def within_injectivity(self, x, u, margin=1e-6):
        return np.linalg.norm(value(u), axis=-1) < np.pi - margin

    def angle(self, x, y):
        c = d.sum(x * y, axis=-1)
        w = y - d.reshape(c, np.shape(value(c)) + (1,)) * x
        return d.atan2(d.norm(w), c)

    def dist2(self, x, y):
        th = self.angle(x, y)
        return th * th

    def dist(self, x, y):
        return self.angle(x, y)

    def inner(self, x, u, v):
        return inner_euclid(u, v)

    def egrad2rgrad(self, x, g):
        return self.project_tangent(x, g)

    def degenerate_mask(self, x, x_e, tol=None):
        tol = self.antipode_tol if tol is None else tol
        return np.linalg.norm(value(x) + value(x_e), axis=-1) < tol

    def check_point(self, x, tol=1e-9):
        x = value(x)
        return np.abs(np.linalg.norm(x, axis=-1) - 1.0) <= tol

    def check_tangent(self, x, u, tol=1e-9):
        return np.abs(np.sum(value(x) * value(u), axis=-1)) <= tol

    def random_point(self, rng, size=()):
        size = (size,) if np.isscalar(size) else tuple(size)
        v = rng.normal(size=size + (4,))
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    def identity(self):
        return np.array([1.0, 0.0, 0.0, 0.0])

    # -- stereographic atlas -------------------------------------------------

    def best_chart(self, x):
        x = np.asarray(x)
        axis = np.argmax(np.abs(x), axis=-1)
        xa = np.take_along_axis(x, axis[..., None], -1)[..., 0]
        # pole opposite to the point so that the point sits near the centre
        pole_negative = xa >= 0.0
        return (2 * axis + pole_negative.astype(np.int64))[..., None]

    def chart(self, x, ids):
        x = np.asarray(x, dtype=np.float64)
        axis, sign = _chart_parts(ids)
        xa = np.take_along_axis(x, axis[..., None], -1)[..., 0]
        xo = np.take_along_axis(x, _OTHERS[axis], -1)
        return xo / (1.0 - sign * xa)[..., None]

    def chart_inverse(self, z, ids):
        z = np.asarray(z, dtype=np.float64)
        axis, sign = _chart_parts(ids)
        rho = np.sum(z * z, axis=-1)
        xa = sign * (rho - 1.0) / (rho + 1.0)
        xo = 2.0 * z / (1.0 + rho)[..., None]
        x = np.empty(z.shape[:-1] + (4,))
        np.put_along_axis(x, axis[..., None], xa[..., None], -1)
        np.put_along_axis(x, _OTHERS[axis], xo, -1)
        return x

    def pushforward(self, x, v, ids):
        x = np.asarray(x, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        axis, sign = _chart_parts(ids)
        xa = np.take_along_axis(x, axis[..., None], -1)
        va = np.take_along_axis(v, axis[..., None], -1)
        xo = np.take_along_axis(x, _OTHERS[axis], -1)
        vo = np.take_along_axis(v, _OTHERS[axis], -1)
        den = 1.0 - sign[..., None] * xa
        return vo / den + xo * (sign[..., None] * va) / (den * den)

    def to_dict(self):
        return {"kind": "s3"}
