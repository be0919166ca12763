"""The stable neural manifold ODE: base field g, Lyapunov function V, stable field f.

``g(x) = P_x(h(x) - h(x_e))``
``V(x) = s(C(F(x)) - C(F(x_e))) + eps * d(x, x_e)^2``
``f(x) = g(x) - grad V(x) * relu(<grad V, g> + alpha V) / |grad V|^2``

All evaluation goes through :meth:`StableField.bind`, which fixes a parameter
mapping (arrays for plain evaluation, ``Var`` leaves for training) and caches
everything that does not depend on ``x``.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

import numpy as np

from .diff import ParamStore, Var, grad, value
from .diff import ops as d
from .geometry import Manifold, manifold_from_dict
from .nets import DEFAULT_SMOOTHING, Icnn, InvertibleFeature, Mlp, smoothed_relu

FORMAT_TAG = "sndoe-v1"
DENOM_FLOOR = 1e-18


class DegeneratePoint(ValueError):
    """The Lyapunov gradient is undefined or zero (x_e itself or the set E)."""


@dataclass
class Diagnostics:
    """Counter for points where the projection denominator vanished unexpectedly."""

    small_denominator: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, n):
        if n:
            with self._lock:
                self.small_denominator += int(n)


class StableField:
    def __init__(
        self,
        manifold: Manifold,
        x_e,
        h: Mlp,
        feature: InvertibleFeature,
        icnn: Icnn,
        store: ParamStore,
        eps=0.05,
        alpha=0.5,
        correction_enabled=True,
    ):
        x_e = np.asarray(x_e, dtype=np.float64)
        if x_e.shape != (manifold.ambient_dim,):
            raise ValueError(f"x_e must have shape ({manifold.ambient_dim},), got {x_e.shape}")
        if eps <= 0:
            raise ValueError("eps must be positive")
        if alpha < 0:
            raise ValueError("alpha must be nonnegative")
        self.manifold = manifold
        self.x_e = x_e
        self.h = h
        self.feature = feature
        self.icnn = icnn
        self.store = store
        self.eps = float(eps)
        self.alpha = float(alpha)
        self.correction_enabled = bool(correction_enabled)
        self.diagnostics = Diagnostics()
        self._cache = None

    @classmethod
    def create(
        cls,
        manifold,
        x_e,
        seed=0,
        eps=0.05,
        alpha=0.5,
        smoothing=DEFAULT_SMOOTHING,
        lipschitz=2.0,
        h_hidden=(128, 128),
        H_hidden=(64, 64),
        feature_dim=16,
        C_hidden=(64, 64),
        h_out_gain=1.0,
        correction_enabled=True,
        center=True,
    ):
        """Fresh field with default architectures and seeded initialization.

        ``center`` applies :meth:`center_icnn` to the fresh ICNN.
        """
        m = manifold.ambient_dim
        h = Mlp("h", (m, *h_hidden, m))
        feature = InvertibleFeature(Mlp("H", (m, *H_hidden, feature_dim)), lipschitz)
        icnn = Icnn("C", (feature.out_dim, *C_hidden, 1), smoothing)
        rng = np.random.default_rng(seed)
        store = ParamStore()
        h.init(store, rng, out_gain=h_out_gain)
        feature.init(store, rng)
        icnn.init(store, rng)
        sf = cls(manifold, x_e, h, feature, icnn, store, eps, alpha, correction_enabled)
        if center:
            sf.center_icnn()
        return sf

    def center_icnn(self):
        """Shift the last ICNN skip layer so that ``F(x_e)`` minimizes ``C``.

        The last layer is linear in its input, so subtracting ``grad C(F(x_e))``
        from its skip weights zeroes that gradient exactly; by convexity
        ``C(F(x)) >= C(F(x_e))`` everywhere afterwards.  Without this a random
        ICNN can sit below ``C(F(x_e))`` on all the data, where ``s`` is flat
        and the Lyapunov loss has no gradient.
        """
        b = self.bind()
        fw, zw, _ = b._v()
        y = Var(value(self.feature(b.p, self.x_e, fw)))
        gy = value(grad(self.icnn(b.p, y, zw), y))
        name = f"{self.icnn.prefix}.W{self.icnn.n_layers - 1}"
        w = self.store.params[name].copy()
        w[:, 0] -= gy
        self.store.set(name, w)

    # -- parameter groups ----------------------------------------------------

    def g_names(self):
        return self.h.names()

    def v_names(self):
        return self.feature.names() + self.icnn.names()

    @property
    def smoothing(self):
        return self.icnn.smoothing

    def bind(self, p=None):
        """Evaluator for a parameter mapping (default: current stored values).

        Missing names fall back to the stored arrays, so a training stage can
        pass leaves only for the parameters it updates.
        """
        if p is None:
            if self._cache is None or self._cache[0] != self.store.version:
                self._cache = (self.store.version, BoundField(self, dict(self.store.params)))
            return self._cache[1]
        full = dict(self.store.params)
        full.update(p)
        return BoundField(self, full)

    # -- single-point API on plain arrays ------------------------------------

    def base_field(self, x):
        return value(self.bind().g(np.asarray(x, dtype=np.float64)))

    def lyapunov(self, x):
        return value(self.bind().V(np.asarray(x, dtype=np.float64)))

    def lyapunov_grad(self, x):
        x = np.asarray(x, dtype=np.float64)
        bad = self.degenerate(x)
        if np.any(bad):
            raise DegeneratePoint("Lyapunov gradient requested at x_e or in the exclusion set")
        return value(self.bind().grad_v(x))

    def stable_field(self, x):
        return value(self.bind().f(np.asarray(x, dtype=np.float64)))

    def __call__(self, x):
        return self.stable_field(x)

    def lie_derivative(self, x, w):
        x = np.asarray(x, dtype=np.float64)
        return value(self.manifold.inner(x, self.lyapunov_grad(x), np.asarray(w, dtype=np.float64)))

    def degenerate(self, x):
        """Rows equal to x_e (bitwise) or inside the exclusion set E."""
        x = value(x)
        at_eq = np.all(x == self.x_e, axis=-1)
        return at_eq | self.manifold.degenerate_mask(x, self.x_e)

    # -- bounds ----------------------------------------------------------------

    def sandwich_constants(self, samples):
        """``(c1, c2)`` with ``c1 d^2 <= V <= c2 d^2`` near the samples.

        ``c2`` uses ``s(t) <= t^2 / 2d`` and the Lipschitz bounds of ``F`` and
        ``C``; the ratio of ambient to geodesic distance is measured on the
        samples, which is where the bound is claimed.
        """
        samples = np.asarray(samples, dtype=np.float64)
        dist = np.asarray(self.manifold.dist(samples, self.x_e))
        chord = np.linalg.norm(samples - self.x_e, axis=-1)
        keep = dist > 1e-12
        ratio = float(np.max(chord[keep] / dist[keep])) if np.any(keep) else 1.0
        lip = self.icnn.lipschitz_bound(self.store.params) * self.feature.lipschitz_bound() * ratio
        return self.eps, self.eps + lip**2 / (2.0 * self.smoothing)

    # -- serialization -----------------------------------------------------------

    def to_dict(self):
        return {
            "format": FORMAT_TAG,
            "manifold": self.manifold.to_dict(),
            "x_e": self.x_e.tolist(),
            "alpha": self.alpha,
            "eps": self.eps,
            "smoothing": self.smoothing,
            "correction_enabled": self.correction_enabled,
            "nets": {"h": self.h.to_dict(), "F": self.feature.to_dict(), "C": self.icnn.to_dict()},
            "params": {
                k: {"shape": list(a.shape), "data": a.ravel().tolist()} for k, a in self.store.params.items()
            },
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != FORMAT_TAG:
            raise ValueError(f"not a {FORMAT_TAG} model (format={doc.get('format')!r})")
        nets = doc["nets"]
        h = Mlp(nets["h"]["prefix"], nets["h"]["widths"], nets["h"]["activation"])
        fi = nets["F"]["inner"]
        feature = InvertibleFeature(Mlp(fi["prefix"], fi["widths"], fi["activation"]), nets["F"]["lipschitz"])
        c = nets["C"]
        icnn = Icnn(c["prefix"], c["widths"], c["smoothing"], c["raw_init"])
        store = ParamStore()
        for k, entry in doc["params"].items():
            store.add(k, np.array(entry["data"], dtype=np.float64).reshape(entry["shape"]))
        expected = set(h.names() + feature.names() + icnn.names())
        if expected != set(store.names()):
            raise ValueError("parameter names do not match the declared architectures")
        return cls(
            manifold_from_dict(doc["manifold"]),
            doc["x_e"],
            h,
            feature,
            icnn,
            store,
            doc["eps"],
            doc["alpha"],
            doc["correction_enabled"],
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def copy(self):
        return StableField.from_dict(self.to_dict())


class BoundField:
    """A :class:`StableField` evaluated at one fixed parameter mapping.

    Inputs are batches ``(..., ambient_dim)``.  If the parameters are ``Var``
    leaves, or ``x`` is a ``Var``, results are differentiable and the
    Lyapunov gradient is built with ``create_graph`` so that ``f`` can itself
    be differentiated.
    """

    def __init__(self, sf: StableField, p):
        self.sf = sf
        self.p = p
        self.manifold = sf.manifold
        self.x_e = sf.x_e
        self.differentiable = any(isinstance(v, Var) for v in p.values())
        self._h_e = None
        self._v_consts = None

    # lazily built so g-only training never touches the V parameters
    @property
    def h_e(self):
        if self._h_e is None:
            self._h_e = self.sf.h(self.p, self.x_e)
        return self._h_e

    def _v(self):
        if self._v_consts is None:
            fw = self.sf.feature.effective_weights(self.p)
            zw = self.sf.icnn.z_weights(self.p)
            c_e = self.sf.icnn(self.p, self.sf.feature(self.p, self.x_e, fw), zw)
            self._v_consts = (fw, zw, c_e)
        return self._v_consts

    def g(self, x):
        v = self.sf.h(self.p, x)
        if self.sf.correction_enabled:
            v = v - self.h_e
        out = self.manifold.project_tangent(x, v)
        if self.sf.correction_enabled:
            out = _zero_rows(out, np.all(value(x) == self.x_e, axis=-1))
        return out

    def neural_part(self, x):
        """``s(C(F(x)) - C(F(x_e)))``."""
        fw, zw, c_e = self._v()
        c = self.sf.icnn(self.p, self.sf.feature(self.p, x, fw), zw)
        return smoothed_relu(c - c_e, self.sf.smoothing)

    def V(self, x):
        v = self.neural_part(x) + self.sf.eps * self.manifold.dist2(x, self.x_e)
        # distance routines can leave rounding residue at x_e itself
        at_eq = np.all(value(x) == self.x_e, axis=-1)
        return d.where(0.0, v, cond=at_eq) if np.any(at_eq) else v

    def grad_v(self, x):
        """Riemannian gradient of V; rows at x_e or in E are set to zero."""
        create = self.differentiable or isinstance(x, Var)
        xv = x if isinstance(x, Var) else Var(x)
        ge = grad(d.sum(self.neural_part(xv)), xv, create_graph=create)
        if not create:
            xv = value(xv)
        m = self.manifold
        out = m.egrad2rgrad(xv, ge) - (2.0 * self.sf.eps) * m.log(xv, self.x_e, check=False)
        bad = self.sf.degenerate(x)
        return _zero_rows(out, bad) if np.any(bad) else out

    def f(self, x, with_aux=False):
        m = self.manifold
        g = self.g(x)
        gv = self.grad_v(x)
        v = self.V(x)
        lie = m.inner(x, gv, g)
        den = m.inner(x, gv, gv)
        den_v = value(den)
        small = den_v < DENOM_FLOOR
        bad = self.sf.degenerate(x)
        self.sf.diagnostics.add(np.count_nonzero(small & ~bad))
        num = d.relu(lie + self.sf.alpha * v)
        coef = d.where(num / d.where(den, 1.0, cond=~small), 0.0, cond=~small)
        out = g - gv * d.reshape(coef, np.shape(value(coef)) + (1,))
        # f = 0 on E by convention; at x_e g is already zero when corrected
        e_only = self.manifold.degenerate_mask(value(x), self.x_e)
        if np.any(e_only):
            out = _zero_rows(out, e_only)
        if with_aux:
            return out, {"V": v, "grad_v": gv, "lie_g": lie}
        return out

    def lie_f(self, x):
        """``<grad V, f>`` at ``x`` (the quantity certified to be <= -alpha V)."""
        f, aux = self.f(x, with_aux=True)
        return self.manifold.inner(x, aux["grad_v"], f), aux["V"]


def _zero_rows(a, mask):
    mask = np.asarray(mask)
    if not np.any(mask):
        return a
    return d.where(0.0, a, cond=np.broadcast_to(mask[..., None], np.shape(value(a))))
