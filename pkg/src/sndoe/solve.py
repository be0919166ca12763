"""Fixed-step solvers for ODEs on manifolds.

Three ways of turning a Euclidean stepper into a manifold solver:

* TS integrates the pulled-back field in the single tangent space of a
  reference point and maps the result back with ``exp``.
* Exp restarts that construction at every step, taking the current point as
  the reference.
* DC integrates the pushed-forward field in chart coordinates and hops to a
  better-centred chart whenever the coordinates leave the trusted radius.

TS and Exp accept ``Var`` inputs and fields, so rollouts can be
differentiated.  DC is for evaluation only.

Fields are callables ``f(x)`` returning ambient tangent vectors for a batch
of points ``(..., ambient_dim)``.
"""

from __future__ import annotations

import json
import time as _time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diff import value
from .geometry import CutLocus, Manifold, manifold_from_dict

METHODS = ("ts", "exp", "dc")
STEPPERS = ("euler", "rk4")
PULLBACKS = ("exact", "projection")


@dataclass
class SolveConfig:
    method: str = "exp"
    stepper: str = "euler"
    n_steps: int = 100
    horizon: float = 1.0
    reference: np.ndarray | None = None  # TS only; callers default it to x_e
    switch_radius: float | None = None  # DC only; None uses the atlas radius
    substeps: int = 1  # stepper applications per window (TS/Exp)
    pullback: str = "exact"

    def __post_init__(self):
        self.method = self.method.lower()
        self.stepper = self.stepper.lower()
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.stepper not in STEPPERS:
            raise ValueError(f"unknown stepper {self.stepper!r}; expected one of {STEPPERS}")
        if self.pullback not in PULLBACKS:
            raise ValueError(f"unknown pullback {self.pullback!r}; expected one of {PULLBACKS}")
        if int(self.n_steps) < 1:
            raise ValueError("n_steps must be at least 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if int(self.substeps) < 1:
            raise ValueError("substeps must be at least 1")
        self.n_steps = int(self.n_steps)
        self.substeps = int(self.substeps)

    @property
    def dt(self):
        return self.horizon / self.n_steps


@dataclass
class Trajectory:
    """Points on a uniform time grid; ``points`` has shape ``(N + 1, ambient_dim)``."""

    manifold: Manifold
    points: np.ndarray
    dt: float
    t0: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != self.manifold.ambient_dim:
            raise ValueError(
                f"points must have shape (n, {self.manifold.ambient_dim}), got {self.points.shape}"
            )
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def __len__(self):
        return len(self.points)

    @property
    def n_steps(self):
        return len(self.points) - 1

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(len(self.points))

    @property
    def horizon(self):
        return self.dt * self.n_steps

    def is_valid(self, tol=1e-9):
        return bool(np.all(self.manifold.check_point(self.points, tol)))

    def save(self, path):
        save_trajectory(self, path)


# -- Euclidean steppers -------------------------------------------------------


def euler_step(fn, t, y, dt):
    return y + fn(t, y) * dt


def rk4_step(fn, t, y, dt):
    k1 = fn(t, y)
    k2 = fn(t + 0.5 * dt, y + k1 * (0.5 * dt))
    k3 = fn(t + 0.5 * dt, y + k2 * (0.5 * dt))
    k4 = fn(t + dt, y + k3 * dt)
    return y + (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (dt / 6.0)


_STEP = {"euler": euler_step, "rk4": rk4_step}


def integrate(fn, y0, t0, dt, n, stepper="euler"):
    """Plain fixed-step integration; returns the list of ``n + 1`` states."""
    step = _STEP[stepper]
    ys = [y0]
    y = y0
    for i in range(n):
        y = step(fn, t0 + i * dt, y, dt)
        ys.append(y)
    return ys


# -- manifold solvers -----------------------------------------------------------


def _pulled_back(manifold, field_fn, base, pullback):
    """Right-hand side of the tangent-space ODE at ``base``."""
    if pullback == "projection":
        return lambda t, z: manifold.project_tangent(base, field_fn(manifold.exp(base, z)))
    return lambda t, z: manifold.dexp_inv(base, z, field_fn(manifold.exp(base, z)))


def rollout_ts(manifold, field_fn, x0, cfg: SolveConfig, reference=None):
    """TS rollout; returns the list of ``N + 1`` points (arrays or ``Var``)."""
    ref = cfg.reference if reference is None else reference
    if ref is None:
        raise ValueError("the tangent-space method needs a reference point")
    ref = np.asarray(ref, dtype=np.float64)
    zeta = manifold.log(ref, x0)
    rhs = _pulled_back(manifold, field_fn, ref, cfg.pullback)
    step = _STEP[cfg.stepper]
    h = cfg.dt / cfg.substeps
    out = [x0]
    for i in range(cfg.n_steps):
        for j in range(cfg.substeps):
            zeta = step(rhs, (i * cfg.substeps + j) * h, zeta, h)
        if not np.all(manifold.within_injectivity(ref, zeta)):
            raise CutLocus(f"tangent-space solution reached the cut locus of the reference at step {i + 1}")
        out.append(manifold.exp(ref, zeta))
    return out


def rollout_exp(manifold, field_fn, x0, cfg: SolveConfig):
    """Exp rollout; returns the list of ``N + 1`` points (arrays or ``Var``)."""
    step = _STEP[cfg.stepper]
    h = cfg.dt / cfg.substeps
    x = x0
    out = [x0]
    for i in range(cfg.n_steps):
        if cfg.stepper == "euler" and cfg.substeps == 1:
            # the pulled-back field at zeta = 0 is f(x) itself
            zeta = field_fn(x) * cfg.dt
        else:
            rhs = _pulled_back(manifold, field_fn, x, cfg.pullback)
            zeta = manifold.project_tangent(x, np.zeros(np.shape(value(x))))
            for j in range(cfg.substeps):
                zeta = step(rhs, (i * cfg.substeps + j) * h, zeta, h)
        x = manifold.exp(x, zeta)
        out.append(x)
    return out


def rollout_dc(manifold, field_fn, x0, cfg: SolveConfig, chart_velocity=None, stats=None, chart_ids=None):
    """DC rollout on plain arrays; returns an array ``(N + 1, ..., ambient_dim)``.

    ``chart_velocity(t, z, ids)``, when given, replaces the pushed-forward
    field: the velocity is then specified directly in the frame of whatever
    chart is current.  ``chart_ids`` fixes the initial chart (default: the
    best-centred one).
    """
    x0 = np.asarray(value(x0), dtype=np.float64)
    radii = manifold.chart_radii if cfg.switch_radius is None else np.full(
        manifold.n_chart_factors, float(cfg.switch_radius)
    )
    if chart_ids is None:
        ids = manifold.best_chart(x0)
    else:
        ids = np.broadcast_to(np.asarray(chart_ids, dtype=np.int64), x0.shape[:-1] + (manifold.n_chart_factors,)).copy()
    z = manifold.chart(x0, ids)
    step = _STEP[cfg.stepper]

    def rhs(t, zz):
        if chart_velocity is not None:
            return chart_velocity(t, zz, ids)
        xx = manifold.chart_inverse(zz, ids)
        return manifold.pushforward(xx, np.asarray(value(field_fn(xx))), ids)

    out = [x0]
    switches = 0
    for i in range(cfg.n_steps):
        z = step(rhs, i * cfg.dt, z, cfg.dt)
        x = manifold.chart_inverse(z, ids)
        over = manifold.chart_norms(z) > radii
        if np.any(over):
            fresh = manifold.best_chart(x)
            ids = np.where(over, fresh, ids)
            switches += int(np.count_nonzero(over))
            z = manifold.chart(x, ids)
        out.append(x)
    if stats is not None:
        stats["chart_switches"] = switches
    return np.stack(out)


def rollout(manifold, field_fn, x0, cfg: SolveConfig, reference=None):
    """Dispatch on ``cfg.method``; TS/Exp return lists, DC an array."""
    if cfg.method == "ts":
        return rollout_ts(manifold, field_fn, x0, cfg, reference)
    if cfg.method == "exp":
        return rollout_exp(manifold, field_fn, x0, cfg)
    return rollout_dc(manifold, field_fn, x0, cfg)


def solve(manifold, field_fn, x0, cfg: SolveConfig, reference=None):
    """Solve from one or many starts; returns an array ``(N + 1, ..., ambient_dim)``."""
    x0 = np.asarray(x0, dtype=np.float64)
    pts = rollout(manifold, field_fn, x0, cfg, reference)
    return np.stack([np.asarray(value(p)) for p in pts]) if isinstance(pts, list) else pts


def solve_ts(manifold, field_fn, x0, cfg, reference=None):
    return _as_trajectory(manifold, solve(manifold, field_fn, x0, _with(cfg, "ts"), reference), cfg)


def solve_exp(manifold, field_fn, x0, cfg):
    return _as_trajectory(manifold, solve(manifold, field_fn, x0, _with(cfg, "exp")), cfg)


def solve_dc(manifold, field_fn, x0, cfg):
    return _as_trajectory(manifold, solve(manifold, field_fn, x0, _with(cfg, "dc")), cfg)


def _with(cfg, method):
    if cfg.method == method:
        return cfg
    return SolveConfig(
        method, cfg.stepper, cfg.n_steps, cfg.horizon, cfg.reference, cfg.switch_radius, cfg.substeps, cfg.pullback
    )


def _as_trajectory(manifold, pts, cfg):
    if pts.ndim != 2:
        raise ValueError("a Trajectory holds a single rollout; use solve() for batches")
    return Trajectory(manifold, pts, cfg.dt)


# -- closed-form test fields -------------------------------------------------------


def sphere_pull_field(c):
    """``f(x) = P_x(c)`` on S^3: flow along great circles towards ``c / |c|``."""
    c = np.asarray(c, dtype=np.float64)

    def f(x):
        return c - x * np.sum(x * c, axis=-1, keepdims=True)

    return f


def sphere_pull_solution(c, x0, t):
    """Exact flow of :func:`sphere_pull_field` at time ``t``.

    The angle ``phi`` to ``c`` obeys ``phi' = -|c| sin(phi)``, hence
    ``tan(phi / 2) = tan(phi0 / 2) exp(-|c| t)`` within the plane of ``x0`` and ``c``.
    """
    c = np.asarray(c, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    k = np.linalg.norm(c)
    ch = c / k
    cos0 = np.clip(np.sum(x0 * ch, axis=-1, keepdims=True), -1.0, 1.0)
    perp = x0 - cos0 * ch
    pn = np.linalg.norm(perp, axis=-1, keepdims=True)
    e = perp / np.where(pn > 0, pn, 1.0)
    phi0 = np.arctan2(pn, cos0)
    phi = 2.0 * np.arctan(np.tan(0.5 * phi0) * np.exp(-k * t))
    return np.cos(phi) * ch + np.sin(phi) * e


def rotation_field(omega):
    """Constant-speed great-circle rotation ``f(x) = x A`` with skew ``A``."""
    a = np.asarray(omega, dtype=np.float64)
    a = a - a.T

    def f(x):
        return x @ a

    return f


def convergence_order(
    method,
    stepper,
    manifold=None,
    field_fn=None,
    exact=None,
    x0=None,
    horizon=1.0,
    ns=(100, 200, 400),
    reference=None,
):
    """Empirical order ``log2(e(N) / e(2N))`` against a closed-form solution.

    Defaults to the S^3 pull field ``P_x(c)``.  Returns ``(orders, errors)``.
    """
    from .geometry import UnitQuaternion

    if manifold is None:
        manifold = UnitQuaternion()
        c = np.array([0.3, 1.2, -0.4, 0.5])
        field_fn = sphere_pull_field(c)
        exact = lambda x, t: sphere_pull_solution(c, x, t)  # noqa: E731
        if x0 is None:
            x0 = np.array([0.6, -0.2, 0.7, -0.33])
            x0 = x0 / np.linalg.norm(x0)
    x0 = np.asarray(x0, dtype=np.float64)
    target = exact(x0, horizon)
    errors = []
    for n in ns:
        cfg = SolveConfig(method, stepper, n, horizon, reference=reference)
        end = solve(manifold, field_fn, x0, cfg, reference)[-1]
        errors.append(float(np.max(np.asarray(manifold.dist(end, target)))))
    errors = np.array(errors)
    orders = np.log(errors[:-1] / errors[1:]) / np.log(np.array(ns[1:]) / np.array(ns[:-1]))
    return orders, errors


# -- file format --------------------------------------------------------------------

TRAJ_FORMAT = "sndoe-traj-v1"


def _sidecar(path):
    return Path(path).with_suffix(".json")


def save_trajectory(traj: Trajectory, path):
    """CSV ``t,c0,...`` (round-trip float repr) plus a JSON sidecar."""
    path = Path(path)
    m = traj.manifold.ambient_dim
    lines = [",".join(["t"] + [f"c{j}" for j in range(m)])]
    for t, row in zip(traj.times, traj.points):
        lines.append(",".join(repr(float(v)) for v in (t, *row)))
    path.write_text("\n".join(lines) + "\n")
    meta = {
        "format": TRAJ_FORMAT,
        "manifold": traj.manifold.to_dict(),
        "dt": traj.dt,
        "t0": traj.t0,
        "n_points": len(traj),
    }
    meta.update({k: v for k, v in traj.meta.items() if k not in meta})
    _sidecar(path).write_text(json.dumps(meta, indent=2))


def load_trajectory(path, manifold=None):
    path = Path(path)
    side = _sidecar(path)
    if not side.exists():
        raise ValueError(f"missing sidecar {side}")
    meta = json.loads(side.read_text())
    if meta.get("format") != TRAJ_FORMAT:
        raise ValueError(f"{side}: unexpected format {meta.get('format')!r}")
    kind = manifold_from_dict(meta["manifold"])
    if manifold is not None and kind != manifold:
        raise ValueError(f"{path}: manifold {kind} does not match expected {manifold}")
    text = path.read_text().strip().splitlines()
    header = [h.strip() for h in text[0].split(",")]
    m = kind.ambient_dim
    if header != ["t"] + [f"c{j}" for j in range(m)]:
        raise ValueError(f"{path}: bad header {text[0]!r}")
    try:
        rows = np.array([[float(v) for v in line.split(",")] for line in text[1:]])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed number ({exc})") from None
    if rows.ndim != 2 or rows.shape[1] != m + 1:
        raise ValueError(f"{path}: expected {m + 1} columns")
    if len(rows) != meta.get("n_points", len(rows)):
        raise ValueError(f"{path}: {len(rows)} rows but sidecar says {meta['n_points']}")
    dt = float(meta["dt"])
    expect = float(meta.get("t0", 0.0)) + dt * np.arange(len(rows))
    if not np.allclose(rows[:, 0], expect, rtol=0, atol=1e-9 * max(1.0, abs(expect[-1]))):
        raise ValueError(f"{path}: time column is not a uniform grid with step {dt}")
    extra = {k: v for k, v in meta.items() if k not in ("format", "manifold", "dt", "t0", "n_points")}
    return Trajectory(kind, rows[:, 1:], dt, float(meta.get("t0", 0.0)), extra)


class Timer:
    """Wall-clock stopwatch used by benchmarks."""

    def __enter__(self):
        self.start = _time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = _time.perf_counter() - self.start
