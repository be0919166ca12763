"""Demonstration datasets: synthetic planar shapes and their transfer to manifolds.

A planar demo is turned into a manifold demo by estimating its velocities,
amplifying them, integrating the time-reversed velocity field from the goal
with the dynamic-chart RK4 solver, and reversing the result so that every
demo ends exactly at the goal.  The planar velocity (zero-padded to R^3) is
read in the chart frame of the solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Euclidean, Manifold, Product, Spd2, UnitQuaternion, manifold_from_dict
from .solve import SolveConfig, Trajectory, load_trajectory, rollout_dc, save_trajectory

DATA_FORMAT = "sndoe-data-v1"
AMPLIFICATION = 20.0
DEFAULT_SCALE = 0.05
DEFAULT_DT = 0.01
GOAL_TOL = 1e-6


class DatasetError(ValueError):
    """Dataset files or contents failed validation."""


@dataclass
class PlanarShape:
    name: str
    demos: list

    def __post_init__(self):
        self.demos = [np.asarray(dm, dtype=np.float64) for dm in self.demos]
        for dm in self.demos:
            if dm.ndim != 2 or dm.shape[1] != 2 or len(dm) < 2:
                raise ValueError("planar demos must be (n >= 2, 2) arrays")
        ends = np.array([dm[-1] for dm in self.demos])
        if np.max(np.abs(ends - ends[0])) > 1e-9:
            raise ValueError(f"shape {self.name!r}: demos do not share their final point")

    @property
    def goal(self):
        return self.demos[0][-1]

    def diameter(self):
        pts = np.concatenate(self.demos)
        diff = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt(np.max(np.sum(diff * diff, axis=-1))))

    def normalized(self, scale=1.0):
        """Goal moved to the origin and joint diameter set to ``scale``."""
        dia = self.diameter()
        k = scale / dia if dia > 0 else 0.0
        return PlanarShape(self.name, [(dm - self.goal) * k for dm in self.demos])


@dataclass
class Dataset:
    """Demonstrations on one manifold sharing length, step and goal."""

    manifold: Manifold
    demos: list
    goal: np.ndarray
    name: str = "dataset"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.goal = np.asarray(self.goal, dtype=np.float64)

    @property
    def dt(self):
        return self.demos[0].dt

    @property
    def n_points(self):
        return len(self.demos[0])

    def array(self):
        """Stacked points ``(n_demos, N + 1, ambient_dim)``."""
        return np.stack([dm.points for dm in self.demos])

    def validate(self, tol=GOAL_TOL):
        if not self.demos:
            raise DatasetError("dataset has no demonstrations")
        problems = []
        for k, dm in enumerate(self.demos):
            if dm.manifold != self.manifold:
                problems.append(f"demo {k}: manifold {dm.manifold} differs from {self.manifold}")
            if len(dm) != self.n_points:
                problems.append(f"demo {k}: {len(dm)} points, expected {self.n_points}")
            if abs(dm.dt - self.dt) > 1e-12 * self.dt:
                problems.append(f"demo {k}: dt {dm.dt} differs from {self.dt}")
            if not dm.is_valid():
                problems.append(f"demo {k}: points violate the manifold invariants")
        if problems:
            raise DatasetError("; ".join(problems))
        dists = [float(np.asarray(self.manifold.dist(dm.points[-1], self.goal))) for dm in self.demos]
        if max(dists) > tol:
            listing = ", ".join(f"demo {k}: {dd:.3e}" for k, dd in enumerate(dists))
            raise DatasetError(f"demos do not end at the common goal within {tol:g} ({listing})")
        return self

    def downsample(self, factor):
        """Every ``factor``-th sample; the final sample must stay on the grid."""
        factor = int(factor)
        if factor < 1 or (self.n_points - 1) % factor:
            raise ValueError(f"cannot downsample {self.n_points} points by {factor}")
        demos = [Trajectory(dm.manifold, dm.points[::factor], dm.dt * factor, dm.t0, dict(dm.meta)) for dm in self.demos]
        return Dataset(self.manifold, demos, self.goal, self.name, dict(self.meta, downsample=factor))

    def subset(self, idx):
        return Dataset(self.manifold, [self.demos[i] for i in idx], self.goal, self.name, dict(self.meta))


# -- synthetic planar shapes ----------------------------------------------------------

SHAPES = ("s-curve", "w-curve", "bent-line", "spiral", "multi")


def _progress(n, rate=3.0):
    """Path parameter ``u`` from 1 (start) to 0 (goal), decaying exponentially in time."""
    tau = np.linspace(0.0, 1.0, n)
    return (np.exp(-rate * tau) - np.exp(-rate)) / (1.0 - np.exp(-rate))


def _base_curve(name, u, branch=0):
    if name == "s-curve":
        return np.stack([0.4 * np.sin(2.0 * np.pi * u), u], axis=-1)
    if name == "w-curve":
        return np.stack([u, 0.15 * np.sin(4.0 * np.pi * u)], axis=-1)
    if name == "bent-line":
        return np.stack([u, 0.35 * u * u], axis=-1)
    if name == "spiral":
        r = 0.5 * u
        phi = 3.0 * np.pi * u
        return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)
    if name == "multi":
        sign = 1.0 if branch == 0 else -1.0
        return np.stack([u, sign * 0.3 * np.sin(np.pi * u)], axis=-1)
    raise ValueError(f"unknown shape {name!r}; expected one of {SHAPES}")


def make_shape(name, n_samples=1001, seed=0, n_demos=4):
    """Four deterministic variations of a base curve sharing the goal (0, 0).

    Variations rotate and scale the curve about the goal and add a smooth
    perturbation that vanishes at both ends of the path.
    """
    rng = np.random.default_rng([seed, SHAPES.index(name) if name in SHAPES else 99])
    u = _progress(n_samples)
    demos = []
    for j in range(n_demos):
        base = _base_curve(name, u, branch=j // 2)
        ang = rng.uniform(-0.08, 0.08)
        scl = 1.0 + rng.uniform(-0.06, 0.06)
        rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
        amp = rng.normal(scale=0.015, size=2)
        bump = np.sin(np.pi * u)[:, None] * u[:, None] * amp
        dm = scl * base @ rot.T + bump
        dm[-1] = 0.0  # u = 0 exactly, kept explicit against rounding
        demos.append(dm)
    return PlanarShape(name, demos)


def synth_shapes(n_samples=1001, seed=0):
    return [make_shape(name, n_samples, seed) for name in SHAPES]


# -- transfer to manifolds ---------------------------------------------------------------


def estimate_velocity_field(demo):
    """Piecewise-linear ``v(s)`` through ``v_i = x_{i+1} - x_i`` on ``[0, N - 1]``.

    Planar demos are zero-padded to R^3.  Outside the node range ``v`` is
    clamped to the end values.
    """
    demo = np.asarray(demo, dtype=np.float64)
    if demo.ndim != 2 or len(demo) < 2:
        raise ValueError("a demo needs at least two points")
    if demo.shape[1] < 3:
        demo = np.concatenate([demo, np.zeros((len(demo), 3 - demo.shape[1]))], axis=1)
    vel = np.diff(demo, axis=0)
    last = len(vel) - 1

    def v(s):
        s = np.clip(float(s), 0.0, float(last))
        i = min(int(np.floor(s)), max(last - 1, 0))
        w = s - i
        if last == 0:
            return vel[0].copy()
        return (1.0 - w) * vel[i] + w * vel[i + 1]

    v.nodes = vel
    return v


def default_goal(manifold):
    return manifold.identity()


def _chart_dims(manifold):
    return [f.dim for f in manifold.factors]


def transfer_to_manifold(
    shape: PlanarShape,
    manifold: Manifold,
    goal=None,
    scale=DEFAULT_SCALE,
    amplification=AMPLIFICATION,
    dt=DEFAULT_DT,
    task_shapes=None,
):
    """Integrate the reversed, amplified planar velocities from the goal.

    Each chart factor of ``manifold`` receives one planar demo padded to R^3;
    for products ``task_shapes`` supplies one shape per factor (default: the
    same shape for all).  Every demo gets ``len(shape demo)`` samples with
    time step ``dt``.
    """
    goal = default_goal(manifold) if goal is None else np.asarray(goal, dtype=np.float64)
    if not np.all(manifold.check_point(goal)):
        raise ValueError("goal is not a valid point of the manifold")
    dims = _chart_dims(manifold)
    if any(dd != 3 for dd in dims):
        raise ValueError("transfer needs three-dimensional factors (S3, SPD(2) or R3)")
    shapes = task_shapes or [shape] * len(dims)
    if len(shapes) != len(dims):
        raise ValueError("need one planar shape per manifold factor")
    shapes = [s.normalized(scale) for s in shapes]
    n_demos = len(shapes[0].demos)
    if any(len(s.demos) != n_demos for s in shapes):
        raise ValueError("task shapes must have equal demo counts")
    ids = manifold.best_chart(goal)
    demos = []
    for k in range(n_demos):
        fields = [estimate_velocity_field(s.demos[k]) for s in shapes]
        n = len(shapes[0].demos[k])
        if any(len(s.demos[k]) != n for s in shapes):
            raise ValueError("task demos must have equal lengths")
        n_steps = n - 1

        def reversed_velocity(t, z, _ids, fields=fields, n_steps=n_steps):
            return -amplification * np.concatenate([f(n_steps - t) for f in fields])

        cfg = SolveConfig("dc", "rk4", n_steps, float(n_steps))
        stats = {}
        pts = rollout_dc_from(manifold, goal, ids, cfg, reversed_velocity, stats)
        if stats.get("chart_switches", 0):
            raise ValueError("transfer left the goal chart; reduce the planar scale")
        pts = pts[::-1].copy()
        pts[-1] = goal
        demos.append(
            Trajectory(manifold, pts, dt, meta={"shape": shape.name, "demo": k, "chart_ids": ids.tolist()})
        )
    meta = {
        "shape": shape.name,
        "scale": scale,
        "amplification": amplification,
        "chart_ids": ids.tolist(),
        "tasks": [s.name for s in shapes],
    }
    return Dataset(manifold, demos, goal, shape.name, meta).validate()


def rollout_dc_from(manifold, x0, ids, cfg, chart_velocity, stats=None):
    """DC rollout with a fixed initial chart and a chart-frame velocity."""
    return rollout_dc(manifold, None, x0, cfg, chart_velocity=chart_velocity, stats=stats, chart_ids=ids)


def reintegrate(dataset: Dataset, shape: PlanarShape, scale=None, amplification=None, task_shapes=None):
    """Integrate the forward planar field from each demo start; returns end points."""
    scale = dataset.meta.get("scale", DEFAULT_SCALE) if scale is None else scale
    amplification = dataset.meta.get("amplification", AMPLIFICATION) if amplification is None else amplification
    shapes = [s.normalized(scale) for s in (task_shapes or [shape] * dataset.manifold.n_chart_factors)]
    ids = np.asarray(dataset.meta["chart_ids"])
    ends = []
    for k, dm in enumerate(dataset.demos):
        fields = [estimate_velocity_field(s.demos[k]) for s in shapes]
        n_steps = len(dm) - 1

        def forward_velocity(t, z, _ids, fields=fields):
            return amplification * np.concatenate([f(t) for f in fields])

        cfg = SolveConfig("dc", "rk4", n_steps, float(n_steps))
        ends.append(rollout_dc_from(dataset.manifold, dm.points[0], ids, cfg, forward_velocity)[-1])
    return np.array(ends)


def generate(shape_name, manifold, seed=0, n_samples=1001, scale=DEFAULT_SCALE, goal=None):
    """Dataset for a named synthetic shape; products use distinct shapes per factor."""
    shape = make_shape(shape_name, n_samples, seed)
    tasks = None
    if manifold.n_chart_factors > 1:
        others = [s for s in SHAPES if s != shape_name]
        tasks = [shape] + [make_shape(others[i % len(others)], n_samples, seed) for i in range(manifold.n_chart_factors - 1)]
    return transfer_to_manifold(shape, manifold, goal, scale, task_shapes=tasks)


# -- hemisphere continuity ------------------------------------------------------------------------


def _sphere_blocks(manifold):
    out = []
    start = 0
    for f in manifold.factors:
        if isinstance(f, UnitQuaternion):
            out.append((start, start + 4))
        start += f.ambient_dim
    return out


def enforce_hemisphere(points, goal, manifold):
    """Flip quaternion signs so consecutive samples (and the last and the goal) agree.

    Returns the repaired copy and the number of flips.
    """
    pts = np.array(points, dtype=np.float64)
    flips = 0
    for a, b in _sphere_blocks(manifold):
        q = pts[:, a:b]
        if np.dot(q[-1], goal[a:b]) < 0:
            q[-1] = -q[-1]
            flips += 1
        for i in range(len(q) - 2, -1, -1):
            if np.dot(q[i], q[i + 1]) < 0:
                q[i] = -q[i]
                flips += 1
        pts[:, a:b] = q
    return pts, flips


# -- files ---------------------------------------------------------------------------------------------


def export_trajectories(dataset: Dataset, directory):
    """Write one CSV + sidecar per demo and a ``dataset.json`` index; returns its path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for k, dm in enumerate(dataset.demos):
        name = f"demo_{k}.csv"
        save_trajectory(dm, directory / name)
        files.append(name)
    manifest = {
        "format": DATA_FORMAT,
        "shape": dataset.name,
        "manifold": dataset.manifold.to_dict(),
        "goal": dataset.goal.tolist(),
        "dt": dataset.dt,
        "demos": files,
        "meta": dataset.meta,
    }
    path = directory / "dataset.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_trajectories(path, tol=GOAL_TOL):
    """Load a dataset from its manifest (or the directory holding ``dataset.json``)."""
    path = Path(path)
    if path.is_dir():
        path = path / "dataset.json"
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read dataset manifest {path}: {exc}") from None
    if manifest.get("format") != DATA_FORMAT:
        raise DatasetError(f"{path}: expected format {DATA_FORMAT!r}, got {manifest.get('format')!r}")
    try:
        manifold = manifold_from_dict(manifest["manifold"])
        goal = np.asarray(manifest["goal"], dtype=np.float64)
        files = list(manifest["demos"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{path}: malformed manifest ({exc})") from None
    if goal.shape != (manifold.ambient_dim,):
        raise DatasetError(f"{path}: goal has shape {goal.shape}")
    demos = []
    for name in files:
        try:
            traj = load_trajectory(path.parent / name, manifold)
        except (OSError, ValueError) as exc:
            raise DatasetError(str(exc)) from None
        pts, flips = enforce_hemisphere(traj.points, goal, manifold)
        meta = dict(traj.meta)
        if flips:
            meta["hemisphere_flips"] = flips
        demos.append(Trajectory(manifold, pts, traj.dt, traj.t0, meta))
    ds = Dataset(manifold, demos, goal, manifest.get("shape", path.parent.name), manifest.get("meta", {}))
    return ds.validate(tol)


def product_manifold(k=1):
    """``(R^3 x S^3)^k``."""
    return Product([Euclidean(3), UnitQuaternion()] * k)


MANIFOLDS = {"s3": UnitQuaternion, "spd2": Spd2}
