"""Differentiable primitives.

All functions accept ``Var`` nodes or plain arrays and return the same kind.
Matrix products expect operands with at least two dimensions; indexing is
limited to basic (slice/integer/Ellipsis) indices.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import bernoulli
from scipy.special import expit

from .core import Var, primitive, value


def _shape(x):
    return np.shape(value(x))


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    gshape = _shape(g)
    if gshape == tuple(shape):
        return g
    lead = len(gshape) - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and gshape[i + lead] != 1
    )
    if axes:
        g = sum(g, axis=axes, keepdims=True)
    return reshape(g, tuple(shape))


# -- structural ------------------------------------------------------------


def _sum_vjp(g, out, args, needs, axis=None, keepdims=False):
    shape = _shape(args[0])
    if not keepdims and axis is not None:
        axes = (axis,) if np.isscalar(axis) else axis
        axes = tuple(a % len(shape) for a in axes)
        kept = tuple(1 if i in axes else s for i, s in enumerate(shape))
        g = reshape(g, kept)
    elif not keepdims:
        g = reshape(g, (1,) * len(shape))
    return (broadcast_to(g, shape),)


sum = primitive(lambda x, axis=None, keepdims=False: np.sum(x, axis=axis, keepdims=keepdims), _sum_vjp)


_broadcast_to = primitive(
    lambda x, shape: np.broadcast_to(x, shape),
    lambda g, out, args, needs, shape: (unbroadcast(g, _shape(args[0])),),
)


def broadcast_to(x, shape):
    return _broadcast_to(x, shape=tuple(shape))


_reshape = primitive(
    lambda x, shape: np.reshape(x, shape),
    lambda g, out, args, needs, shape: (reshape(g, _shape(args[0])),),
)


def reshape(x, shape):
    return _reshape(x, shape=tuple(shape))


swapaxes = primitive(
    lambda x: np.swapaxes(x, -1, -2),
    lambda g, out, args, needs: (swapaxes(g),),
)


def _scatter_fwd(g, idx, shape):
    z = np.zeros(shape)
    np.add.at(z, idx, g)  # repeated indices accumulate
    return z


_scatter = primitive(
    _scatter_fwd,
    lambda g, out, args, needs, idx, shape: (getitem(g, idx),),
)

_getitem = primitive(
    lambda x, idx: x[idx],
    lambda g, out, args, needs, idx: (_scatter(g, idx=idx, shape=_shape(args[0])),),
)


def getitem(x, idx):
    """Indexing ``x[idx]``; fancy indices may repeat."""
    return _getitem(x, idx=idx)


def _concat_vjp(g, out, args, needs, axis=-1):
    res = []
    start = 0
    ndim = len(_shape(out))
    ax = axis % ndim
    for a, need in zip(args, needs):
        n = _shape(a)[ax]
        if need:
            idx = (slice(None),) * ax + (slice(start, start + n),)
            res.append(getitem(g, idx))
        else:
            res.append(None)
        start += n
    return res


_concat = primitive(lambda *xs, axis=-1: np.concatenate(xs, axis=axis), _concat_vjp)


def concat(xs, axis=-1):
    """Concatenate a sequence along ``axis``."""
    return _concat(*xs, axis=axis)


def _where_vjp(g, out, args, needs, cond):
    a, b = args
    ga = unbroadcast(where(g, 0.0, cond=cond), _shape(a)) if needs[0] else None
    gb = unbroadcast(where(0.0, g, cond=cond), _shape(b)) if needs[1] else None
    return ga, gb


_where = primitive(lambda a, b, cond: np.where(cond, a, b), _where_vjp)


def where(a, b=None, cond=None):
    """``np.where(cond, a, b)`` with a constant condition."""
    return _where(a, b, cond=np.asarray(value(cond), dtype=bool))


# -- arithmetic ------------------------------------------------------------

add = primitive(
    np.add,
    lambda g, out, args, needs: (
        unbroadcast(g, _shape(args[0])) if needs[0] else None,
        unbroadcast(g, _shape(args[1])) if needs[1] else None,
    ),
)

sub = primitive(
    np.subtract,
    lambda g, out, args, needs: (
        unbroadcast(g, _shape(args[0])) if needs[0] else None,
        unbroadcast(neg(g), _shape(args[1])) if needs[1] else None,
    ),
)

mul = primitive(
    np.multiply,
    lambda g, out, args, needs: (
        unbroadcast(g * args[1], _shape(args[0])) if needs[0] else None,
        unbroadcast(g * args[0], _shape(args[1])) if needs[1] else None,
    ),
)

div = primitive(
    np.divide,
    lambda g, out, args, needs: (
        unbroadcast(g / args[1], _shape(args[0])) if needs[0] else None,
        unbroadcast(neg(g) * out / args[1], _shape(args[1])) if needs[1] else None,
    ),
)

neg = primitive(np.negative, lambda g, out, args, needs: (neg(g),))


def _matmul_vjp(g, out, args, needs):
    a, b = args
    sa, sb = _shape(a), _shape(b)
    if len(sa) == 1 and len(sb) == 1:
        return (g * b if needs[0] else None, g * a if needs[1] else None)
    # promote vectors to matrices as numpy does, then undo
    if len(sa) == 1:
        a = reshape(a, (1,) + sa)
        g = reshape(g, _shape(g)[:-1] + (1,) + _shape(g)[-1:]) if len(sb) > 1 else g
    if len(sb) == 1:
        b = reshape(b, sb + (1,))
        g = reshape(g, _shape(g) + (1,))
    ga = unbroadcast(matmul(g, swapaxes(b)), _shape(a)) if needs[0] else None
    gb = unbroadcast(matmul(swapaxes(a), g), _shape(b)) if needs[1] else None
    if ga is not None and len(sa) == 1:
        ga = reshape(ga, sa)
    if gb is not None and len(sb) == 1:
        gb = reshape(gb, sb)
    return ga, gb


matmul = primitive(np.matmul, _matmul_vjp)

# -- elementwise -----------------------------------------------------------

exp = primitive(np.exp, lambda g, out, args, needs: (g * out,))
log = primitive(np.log, lambda g, out, args, needs: (g / args[0],))
sqrt = primitive(np.sqrt, lambda g, out, args, needs: (g * 0.5 / out,))
sin = primitive(np.sin, lambda g, out, args, needs: (g * cos(args[0]),))
cos = primitive(np.cos, lambda g, out, args, needs: (neg(g) * sin(args[0]),))
sigmoid = primitive(expit, lambda g, out, args, needs: (g * out * (1.0 - out),))
softplus = primitive(lambda x: np.logaddexp(0.0, x), lambda g, out, args, needs: (g * sigmoid(args[0]),))
relu = primitive(
    lambda x: np.maximum(x, 0.0),
    lambda g, out, args, needs: (g * (value(args[0]) > 0.0),),
)


def _atan2_vjp(g, out, args, needs):
    y, x = args
    den = x * x + y * y
    return (g * x / den if needs[0] else None, neg(g) * y / den if needs[1] else None)


atan2 = primitive(np.arctan2, _atan2_vjp)


def _safe_sqrt_vjp(g, out, args, needs):
    pos = value(out) > 0.0
    return (where(g * 0.5 / where(out, 1.0, cond=pos), 0.0, cond=pos),)


safe_sqrt = primitive(lambda x: np.sqrt(np.maximum(x, 0.0)), _safe_sqrt_vjp)
safe_sqrt.__doc__ = "Square root whose derivative is taken as zero at zero."


def _norm_vjp(g, out, args, needs, axis=-1, keepdims=False):
    x = args[0]
    if not keepdims:
        g = reshape(g, _shape(out) + (1,))
        out = reshape(out, _shape(out) + (1,))
    pos = value(out) > 0.0
    scale = where(g / where(out, 1.0, cond=pos), 0.0, cond=pos)
    return (x * scale,)


_norm = primitive(
    lambda x, axis=-1, keepdims=False: np.sqrt(np.sum(x * x, axis=axis, keepdims=keepdims)),
    _norm_vjp,
)


def norm(x, keepdims=False):
    """Euclidean norm over the last axis, with zero derivative at zero."""
    return _norm(x, axis=-1, keepdims=keepdims)


def smoothed_relu(x, d=0.1):
    """Piecewise-quadratic smoothing of ReLU with transition width ``d``."""
    return _smoothed_relu(x, d=d)


def _srelu_fwd(x, d):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.0, 0.0, np.where(x < d, x * x / (2.0 * d), x - 0.5 * d))


_smoothed_relu = primitive(
    _srelu_fwd,
    lambda g, out, args, needs, d: (g * smoothed_relu_grad(args[0], d=d),),
)


def _srelu_grad_fwd(x, d):
    return np.clip(np.asarray(x, dtype=np.float64) / d, 0.0, 1.0)


def _srelu_grad_vjp(g, out, args, needs, d):
    x = value(args[0])
    return (g * (((x > 0.0) & (x < d)) / d),)


_smoothed_relu_grad = primitive(_srelu_grad_fwd, _srelu_grad_vjp)


def smoothed_relu_grad(x, d=0.1):
    """Derivative of :func:`smoothed_relu`: ``clip(x / d, 0, 1)``."""
    return _smoothed_relu_grad(x, d=d)


# -- special functions for closed-form manifold maps -----------------------
# Each is analytic in its argument, so compositions stay smooth at the
# removable singularities (zero angle, coincident eigenvalues).


def _third_order(g, out, args, needs):
    raise NotImplementedError("derivatives above third order are not supported")


def _series(s, coeffs):
    acc = np.zeros_like(s)
    for c in reversed(coeffs):
        acc = acc * s + c
    return acc


def _deriv_coeffs(coeffs, k):
    """Coefficients of the ``k``-th derivative of a power series."""
    out = list(coeffs)
    for _ in range(k):
        out = [i * c for i, c in enumerate(out)][1:]
    return out


def _analytic(value_fn, d1_fn, d2_fn, coeffs, small):
    """Build f, f', f'' primitives for an even-analytic function of ``s``.

    Each ``d*_fn(s, f, f1)`` is the closed form, used where ``s >= small``;
    below that the Taylor series in ``coeffs`` is used.
    """
    c1 = _deriv_coeffs(coeffs, 1)
    c2 = _deriv_coeffs(coeffs, 2)

    def split(s):
        s = np.asarray(s, dtype=np.float64)
        lo = s < small
        return s, lo, np.where(lo, max(small, 0.25), s)

    def f0(s):
        s, lo, ss = split(s)
        return np.where(lo, _series(s, coeffs), value_fn(ss))

    def f1(s):
        s, lo, ss = split(s)
        return np.where(lo, _series(s, c1), d1_fn(ss, value_fn(ss)))

    def f2(s):
        s, lo, ss = split(s)
        v = value_fn(ss)
        return np.where(lo, _series(s, c2), d2_fn(ss, v, d1_fn(ss, v)))

    if d2_fn is None:
        p2 = None
        p1 = primitive(f1, _third_order)
    else:
        p2 = primitive(f2, _third_order)
        p1 = primitive(f1, lambda g, out, args, needs: (g * p2(args[0]),))
    p0 = primitive(f0, lambda g, out, args, needs: (g * p1(args[0]),))
    return p0, p1, p2


def _fact(n):
    return float(math.factorial(n))


_N_SERIES = 14

sinc_sqrt, dsinc_sqrt, d2sinc_sqrt = _analytic(
    lambda s: np.sin(np.sqrt(s)) / np.sqrt(s),
    lambda s, f: (np.cos(np.sqrt(s)) - f) / (2.0 * s),
    lambda s, f, f1: (-0.5 * f - 3.0 * f1) / (2.0 * s),
    [(-1.0) ** k / _fact(2 * k + 1) for k in range(_N_SERIES)],
    1.0,
)
sinc_sqrt.__doc__ = "sin(sqrt(s)) / sqrt(s) for s >= 0."

sinhc_sqrt, dsinhc_sqrt, d2sinhc_sqrt = _analytic(
    lambda s: np.sinh(np.sqrt(s)) / np.sqrt(s),
    lambda s, f: (np.cosh(np.sqrt(s)) - f) / (2.0 * s),
    lambda s, f, f1: (0.5 * f - 3.0 * f1) / (2.0 * s),
    [1.0 / _fact(2 * k + 1) for k in range(_N_SERIES)],
    1.0,
)
sinhc_sqrt.__doc__ = "sinh(sqrt(s)) / sqrt(s) for s >= 0."

cos_sqrt = primitive(
    lambda s: np.cos(np.sqrt(np.maximum(s, 0.0))),
    lambda g, out, args, needs: (g * -0.5 * sinc_sqrt(args[0]),),
)
cos_sqrt.__doc__ = "cos(sqrt(s)) for s >= 0."

cosh_sqrt = primitive(
    lambda s: np.cosh(np.sqrt(np.maximum(s, 0.0))),
    lambda g, out, args, needs: (g * 0.5 * sinhc_sqrt(args[0]),),
)
cosh_sqrt.__doc__ = "cosh(sqrt(s)) for s >= 0."

atanhc_sq, datanhc_sq, d2atanhc_sq = _analytic(
    lambda t: np.arctanh(np.sqrt(t)) / np.sqrt(t),
    lambda t, f: (1.0 / (1.0 - t) - f) / (2.0 * t),
    lambda t, f, f1: (1.0 / (1.0 - t) ** 2 - 3.0 * f1) / (2.0 * t),
    [1.0 / (2 * k + 1) for k in range(24)],
    0.1,
)
atanhc_sq.__doc__ = "atanh(sqrt(t)) / sqrt(t) for 0 <= t < 1."


def _tos_series(t2, deriv):
    # theta / sin(theta) = sum a_k theta^(2k)
    a = [1.0, 1 / 6, 7 / 360, 31 / 15120, 127 / 604800, 73 / 3421440]
    if deriv == 0:
        return _series(t2, a)
    if deriv == 1:
        return _series(t2, [2 * k * c for k, c in enumerate(a)][1:])
    return _series(t2, [2 * k * (2 * k - 1) * c for k, c in enumerate(a)][1:])


def _tos(deriv):
    def fn(th):
        th = np.asarray(th, dtype=np.float64)
        small = np.abs(th) < 0.1
        t2 = th * th
        x = np.where(small, 1.0, th)
        sn, cs = np.sin(x), np.cos(x)
        if deriv == 0:
            direct = x / sn
        elif deriv == 1:
            direct = (sn - x * cs) / (sn * sn)
        else:
            direct = -2.0 * cs / sn**2 + x / sn + 2.0 * x * cs * cs / sn**3
        ser = _tos_series(t2, deriv)
        return np.where(small, th * ser if deriv == 1 else ser, direct)

    return fn


d2theta_over_sin = primitive(_tos(2), _third_order)
dtheta_over_sin = primitive(_tos(1), lambda g, out, args, needs: (g * d2theta_over_sin(args[0]),))
theta_over_sin = primitive(_tos(0), lambda g, out, args, needs: (g * dtheta_over_sin(args[0]),))
theta_over_sin.__doc__ = "theta / sin(theta) for |theta| < pi."


# Series in s = r^2 built from Bernoulli numbers; used by the inverse
# differentials of the exponential maps (first derivatives only).
_B = [float(b) for b in bernoulli(60)]
_N_BERN = 26


def _bern_series(weight):
    return [weight(n) * _B[2 * n] / _fact(2 * n) for n in range(_N_BERN)]


# r / sin r and r / sinh r
_TOS = _bern_series(lambda n: (-1.0) ** (n + 1) * (2.0 ** (2 * n) - 2.0))
_TOSH = _bern_series(lambda n: 2.0 - 2.0 ** (2 * n))
# (1 - r cot r) / r^2
_COTC = [-c for c in _bern_series(lambda n: (-4.0) ** n)][1:]


def _cotc_closed(s):
    r = np.sqrt(s)
    return (1.0 - r / np.tan(r)) / s


def _cotc_d1(s, k):
    r = np.sqrt(s)
    sn = np.sin(r)
    a = 0.5 * (1.0 / (sn * sn) - 1.0 / (r * np.tan(r)))
    return (a - k) / s


cotc_sq, dcotc_sq, _ = _analytic(_cotc_closed, _cotc_d1, None, _COTC, 1.0)
cotc_sq.__doc__ = "(1 - r cot r) / r^2 with s = r^2, for 0 <= s < pi^2."

tos_sqrt, dtos_sqrt, _ = _analytic(
    lambda s: np.sqrt(s) / np.sin(np.sqrt(s)),
    lambda s, f: 0.5 * f * _cotc_closed(s),
    None,
    _TOS,
    1.0,
)
tos_sqrt.__doc__ = "r / sin r with s = r^2, for 0 <= s < pi^2."

_KK = [0.5 * (1.0 / _fact(2 * k + 2) - _TOSH[k + 1]) for k in range(_N_BERN - 1)]


def _kk_closed(s):
    r = np.sqrt(s)
    return (np.cosh(r) - r / np.sinh(r)) / (2.0 * s)


def _kk_d1(s, k):
    r = np.sqrt(s)
    sc = np.sinh(r) / r
    dsc = (np.cosh(r) - sc) / (2.0 * s)
    dp = 0.5 * sc + dsc / (sc * sc)
    return (0.5 * dp - k) / s


coshm_sq, dcoshm_sq, _ = _analytic(_kk_closed, _kk_d1, None, _KK, 1.0)
coshm_sq.__doc__ = "(cosh r - r / sinh r) / (2 r^2) with s = r^2."


def as_var(x, name=None):
    """Wrap an array as a fresh leaf."""
    return Var(np.array(value(x), dtype=np.float64), name=name)


def stop_gradient(x):
    return value(x)


__all__ = [
    "Var",
    "add",
    "as_var",
    "atan2",
    "atanhc_sq",
    "broadcast_to",
    "concat",
    "cos",
    "cos_sqrt",
    "cosh_sqrt",
    "div",
    "exp",
    "getitem",
    "log",
    "matmul",
    "mul",
    "neg",
    "norm",
    "relu",
    "reshape",
    "safe_sqrt",
    "sigmoid",
    "sin",
    "sinc_sqrt",
    "sinhc_sqrt",
    "smoothed_relu",
    "smoothed_relu_grad",
    "softplus",
    "sqrt",
    "stop_gradient",
    "sub",
    "sum",
    "swapaxes",
    "theta_over_sin",
    "unbroadcast",
    "where",
]
