"""2x2 symmetric positive-definite matrices with the affine-invariant metric.

A matrix ``[[a, b], [b, c]]`` is stored as the vector ``(a, b, c)``.  Matrix
functions use the two-eigenvalue interpolation ``f(A) = p I + q (A - m I)``
with ``m`` the eigenvalue mean and ``r`` the half gap; ``p`` and ``q`` are
written as analytic functions of ``r^2`` so the maps stay smooth when the
eigenvalues coincide.
"""

from __future__ import annotations

import numpy as np

from ..diff import ops as d
from ..diff import value
from .base import Manifold


def _parts(x):
    return x[..., 0:1], x[..., 1:2], x[..., 2:3]


def _pack(a, b, c):
    return d.concat([a, b, c], axis=-1)


def to_matrix(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.shape[:-1] + (2, 2))
    out[..., 0, 0] = x[..., 0]
    out[..., 0, 1] = out[..., 1, 0] = x[..., 1]
    out[..., 1, 1] = x[..., 2]
    return out


def from_matrix(m):
    m = np.asarray(m, dtype=np.float64)
    return np.stack([m[..., 0, 0], 0.5 * (m[..., 0, 1] + m[..., 1, 0]), m[..., 1, 1]], axis=-1)


def sym_det(x):
    a, b, c = _parts(x)
    return a * c - b * b


def sym_inv(x):
    a, b, c = _parts(x)
    det = a * c - b * b
    return _pack(c, -b, a) / det


def sym_sqrtm(x):
    """Principal square root: ``(X + sqrt(det) I) / sqrt(tr X + 2 sqrt(det))``."""
    a, b, c = _parts(x)
    sd = d.sqrt(a * c - b * b)
    k = 1.0 / d.sqrt(a + c + 2.0 * sd)
    return _pack((a + sd) * k, b * k, (c + sd) * k)


def congruence(s, u):
    """``S U S`` for symmetric ``S`` and ``U``."""
    a, b, c = _parts(s)
    u1, v1, w1 = _parts(u)
    r00 = a * u1 + b * v1
    r01 = a * v1 + b * w1
    r10 = b * u1 + c * v1
    r11 = b * v1 + c * w1
    return _pack(r00 * a + r01 * b, r00 * b + r01 * c, r10 * b + r11 * c)


def _mean_gap(a, b, c):
    m = 0.5 * (a + c)
    h = 0.5 * (a - c)
    return m, h * h + b * b


def sym_expm(u):
    a, b, c = _parts(u)
    m, r2 = _mean_gap(a, b, c)
    em = d.exp(m)
    p = em * d.cosh_sqrt(r2)
    q = em * d.sinhc_sqrt(r2)
    return _pack(p + q * (a - m), q * b, p + q * (c - m))


def dexpm_inv(w, o):
    """Inverse Frechet derivative of ``expm`` at symmetric ``w`` applied to ``o``.

    Splits ``o`` into its trace part, the part along ``w - mI`` and the rest;
    on the first two the derivative acts as a hyperbolic rotation, on the
    last as a scaling by ``e^m sinh(r) / r``.
    """
    a, b, c = _parts(w)
    m, r2 = _mean_gap(a, b, c)
    h = 0.5 * (a - c)
    oa, ob, oc = _parts(o)
    tr = 0.5 * (oa + oc)
    ba = oa - tr
    along = 2.0 * (ba * h + ob * b)
    sc = d.sinhc_sqrt(r2)
    diag = tr * d.cosh_sqrt(r2) - 0.5 * along * sc
    kd = along * d.coshm_sq(r2) - tr * sc
    scale = d.exp(-m)
    return _pack(
        scale * (diag + kd * h + ba / sc),
        scale * (kd * b + ob / sc),
        scale * (diag - kd * h - ba / sc),
    )


def sym_logm(x):
    a, b, c = _parts(x)
    m, r2 = _mean_gap(a, b, c)
    p = 0.5 * d.log(a * c - b * b)
    q = d.atanhc_sq(r2 / (m * m)) / m
    return _pack(p + q * (a - m), q * b, p + q * (c - m))


def log_eig_sq_sum(z):
    """``sum_i log(lambda_i)^2`` for SPD ``z`` (squared Frobenius norm of logm)."""
    a, b, c = _parts(z)
    m, r2 = _mean_gap(a, b, c)
    t = r2 / (m * m)
    ld = d.log(a * c - b * b)
    at = d.atanhc_sq(t)
    out = 0.5 * ld * ld + 2.0 * t * at * at
    return out[..., 0]


def sym_frob_inner(p, v):
    """``tr(P V)`` for symmetric ``P`` and ``V``."""
    p1, p2, p3 = _parts(p)
    v1, v2, v3 = _parts(v)
    return (p1 * v1 + 2.0 * p2 * v2 + p3 * v3)[..., 0]


class Spd2(Manifold):
    """``S^2_{++}`` under ``<U, V>_X = tr(X^-1 U X^-1 V)``; a Hadamard manifold."""

    name = "spd2"
    ambient_dim = 3
    dim = 3

    def project_tangent(self, x, v):
        return v

    def exp(self, x, u):
        s = sym_sqrtm(x)
        si = sym_inv(s)
        return congruence(s, sym_expm(congruence(si, u)))

    def log(self, x, y, check=True):
        s = sym_sqrtm(x)
        si = sym_inv(s)
        return congruence(s, sym_logm(congruence(si, y)))

    def dexp_inv(self, x, u, v):
        s = sym_sqrtm(x)
        si = sym_inv(s)
        return congruence(s, dexpm_inv(congruence(si, u), congruence(si, v)))

    def dist2(self, x, y):
        si = sym_inv(sym_sqrtm(x))
        return log_eig_sq_sum(congruence(si, y))

    def inner(self, x, u, v):
        return sym_frob_inner(congruence(sym_inv(x), u), v)

    def egrad2rgrad(self, x, g):
        g1, g2, g3 = _parts(g)
        return congruence(x, _pack(g1, 0.5 * g2, g3))

    def check_point(self, x, tol=0.0):
        x = value(x)
        det = x[..., 0] * x[..., 2] - x[..., 1] ** 2
        return (x[..., 0] > 0.0) & (det > 0.0) & np.all(np.isfinite(x), axis=-1)

    def random_point(self, rng, size=(), scale=1.0):
        size = (size,) if np.isscalar(size) else tuple(size)
        return sym_expm(rng.normal(size=size + (3,)) * scale)

    def random_tangent(self, rng, x, scale=1.0):
        # Gaussian at the identity carried over to x, so scale is metric-relative
        return np.asarray(congruence(sym_sqrtm(np.asarray(x)), rng.normal(size=np.shape(x)) * scale))

    def identity(self):
        return np.array([1.0, 0.0, 1.0])

    def min_eigenvalue(self, x):
        x = np.asarray(x)
        m = 0.5 * (x[..., 0] + x[..., 2])
        r = np.sqrt((0.5 * (x[..., 0] - x[..., 2])) ** 2 + x[..., 1] ** 2)
        # det / (m + r) avoids the cancellation in m - r
        return (x[..., 0] * x[..., 2] - x[..., 1] ** 2) / (m + r)

    # -- global chart: matrix logarithm ---------------------------------------

    def chart(self, x, ids):
        return np.asarray(sym_logm(np.asarray(x, dtype=np.float64)))

    def chart_inverse(self, z, ids):
        return np.asarray(sym_expm(np.asarray(z, dtype=np.float64)))

    def pushforward(self, x, v, ids):
        """Frechet derivative of the matrix logarithm (Daleckii-Krein)."""
        w, q = np.linalg.eigh(to_matrix(x))
        vt = np.swapaxes(q, -1, -2) @ to_matrix(v) @ q
        l1, l2 = w[..., 0], w[..., 1]
        gap = l2 - l1
        close = np.abs(gap) < 1e-8 * np.abs(l2)
        dd = np.where(close, 1.0 / l1, np.log(l2 / l1) / np.where(close, 1.0, gap))
        lmat = np.empty(w.shape[:-1] + (2, 2))
        lmat[..., 0, 0] = 1.0 / l1
        lmat[..., 1, 1] = 1.0 / l2
        lmat[..., 0, 1] = lmat[..., 1, 0] = dd
        return from_matrix(q @ (lmat * vt) @ np.swapaxes(q, -1, -2))

    def to_dict(self):
        return {"kind": "spd2"}
