"""Three-stage training of the stable field, plus direct training for comparison.

Stage 1 fits the base field ``g``: first to finite-difference tangents, then
by multiple shooting with a shot length ramped from ``shot_min`` to
``shot_max``.  Stage 2 fits the Lyapunov function to decay along the demos
and along rollouts of ``g``.  Stage 3 fine-tunes the assembled field ``f``
by multiple shooting.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import Dataset
from .diff import adamw_step, grad, value
from .diff import ops as d
from .field import StableField
from .solve import SolveConfig, rollout


class NonFiniteError(FloatingPointError):
    """A loss or gradient became NaN/Inf; carries the offending batch."""

    def __init__(self, message, stage=None, epoch=None, batch=None):
        super().__init__(message)
        self.stage = stage
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    seed: int = 0
    # model
    alpha: float = 0.5
    eps: float = 0.05
    smoothing: float = 0.1
    lipschitz: float = 2.0
    h_hidden: tuple = (128, 128)
    H_hidden: tuple = (64, 64)
    feature_dim: int = 16
    C_hidden: tuple = (64, 64)
    h_out_gain: float = 0.1
    # data
    downsample: int = 4
    batch_size: int = 4
    # solver used inside the losses
    method: str = "exp"
    stepper: str = "euler"
    # stage 1
    tangent_epochs: int = 300
    tangent_lr: float = 3e-3
    ms_epochs: int = 300
    ms_lr: float = 1e-3
    shot_min: int = 5
    shot_max: int = 50
    lambda_ms: float = 1.0
    # stage 2
    lyap_epochs: int = 300
    lyap_lr: float = 3e-3
    rollout_refresh: int = 10
    # stage 3
    finetune_epochs: int = 100
    finetune_lr: float = 3e-4
    # direct training
    direct_epochs: int = 300
    direct_lr: float = 1e-3
    # optimizer
    weight_decay: float = 0.0
    grad_clip: float = 10.0
    check_points: int = 256  # points probed for the Lie certificate per stage-3 epoch

    def __post_init__(self):
        for name in ("h_hidden", "H_hidden", "C_hidden"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))
        if not 2 <= self.shot_min <= self.shot_max:
            raise ValueError("need 2 <= shot_min <= shot_max")
        if self.lambda_ms < 0:
            raise ValueError("lambda_ms must be nonnegative")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    def solver(self, n_steps, dt):
        return SolveConfig(self.method, self.stepper, n_steps, n_steps * dt)


def make_field(dataset: Dataset, cfg: TrainConfig):
    return StableField.create(
        dataset.manifold,
        dataset.goal,
        seed=cfg.seed,
        eps=cfg.eps,
        alpha=cfg.alpha,
        smoothing=cfg.smoothing,
        lipschitz=cfg.lipschitz,
        h_hidden=cfg.h_hidden,
        H_hidden=cfg.H_hidden,
        feature_dim=cfg.feature_dim,
        C_hidden=cfg.C_hidden,
        h_out_gain=cfg.h_out_gain,
    )


# -- losses ------------------------------------------------------------------------


def loss_tangents(g, manifold, demos, dt):
    """Mean of ``|g(x_i) dt - log_{x_i}(x_{i+1})|^2`` over steps, averaged over demos.

    ``demos`` is ``(B, N + 1, m)``; ``g`` maps point batches to tangents.
    """
    demos = np.asarray(demos, dtype=np.float64)
    if demos.shape[-2] < 2:
        raise ValueError("a demo needs at least two samples")
    x = demos[:, :-1]
    u = np.asarray(manifold.log(x, demos[:, 1:]))
    r = g(x) * dt - u
    return d.sum(r * r) / float(x.shape[0] * x.shape[1])


def fragments(n_steps, shot):
    """``(start, length)`` of each fragment of a demo with ``n_steps`` steps."""
    if shot < 1:
        raise ValueError("shot length must be positive")
    return [(s, min(shot, n_steps - s)) for s in range(0, n_steps, shot)]


def loss_multishoot(field_fn, manifold, demos, dt, shot, lambda_ms, solver: SolveConfig | None = None, reference=None):
    """Multiple-shooting loss.

    Each demo is cut into ``K`` fragments of ``shot`` steps (the last may be
    shorter) started at the demo samples.  The data term averages squared
    distances over all ``N`` predicted samples; the penalty adds
    ``lambda / (K - 1)`` times the summed distances between each fragment's
    end and the next fragment's start.  Averaged over demos.
    """
    demos = np.asarray(demos, dtype=np.float64)
    b, n1, m = demos.shape
    n = n1 - 1
    frags = fragments(n, shot)
    k = len(frags)
    starts = np.array([s for s, _ in frags])
    lengths = np.array([ln for _, ln in frags])
    steps = int(lengths.max())
    if solver is None:
        solver = SolveConfig("exp", "euler", steps, steps * dt)
    else:
        solver = SolveConfig(solver.method, solver.stepper, steps, steps * dt, solver.reference, substeps=solver.substeps, pullback=solver.pullback)
    x0 = demos[:, starts]  # (B, K, m)
    pts = rollout(manifold, field_fn, x0, solver, reference)
    data = 0.0
    for i in range(1, steps + 1):
        idx = np.minimum(starts + i, n)
        target = demos[:, idx]
        d2 = manifold.dist2(pts[i], target)  # (B, K)
        mask = (i <= lengths).astype(np.float64)
        data = data + d.sum(d2 * mask)
    data = data / float(b * n)
    if k == 1 or lambda_ms == 0:
        return data
    # the end of fragment j lies at step ``shot`` and meets fragment j + 1's start
    end = d.getitem(pts[steps], (slice(None), slice(0, k - 1)))
    gap = manifold.dist(end, demos[:, starts[1:]])
    return data + (lambda_ms / (k - 1)) * d.sum(gap) / float(b)


def loss_lyapunov(v_fn, trajs, alpha, dt):
    """``(1/N) sum_i relu(V(x_i) - exp(-alpha i dt) V(x_0))``, averaged over trajectories."""
    trajs = np.asarray(trajs, dtype=np.float64)
    n = trajs.shape[-2] - 1
    if n < 1:
        raise ValueError("need at least two samples")
    v = v_fn(trajs)  # (B, N + 1)
    w = np.exp(-alpha * dt * np.arange(1, n + 1))
    v0 = d.getitem(v, (slice(None), slice(0, 1)))
    vi = d.getitem(v, (slice(None), slice(1, None)))
    return d.sum(d.relu(vi - v0 * w)) / float(n * trajs.shape[0])


def decay_fraction(v_values):
    """Per trajectory, the fraction of steps along which V does not increase."""
    v = np.asarray(v_values)
    return np.mean(np.diff(v, axis=-1) <= 0.0, axis=-1)


# -- optimisation plumbing -------------------------------------------------------------------


@dataclass
class History:
    rows: list = field(default_factory=list)
    stage_times: dict = field(default_factory=dict)

    def add(self, **row):
        self.rows.append(row)

    def write_csv(self, path):
        keys = ["stage", "epoch", "loss", "wall_time", "shot", "lie_violations", "decay_fraction"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
            w.writeheader()
            for row in self.rows:
                w.writerow({k: row.get(k, "") for k in keys})

    def losses(self, stage):
        return [r["loss"] for r in self.rows if r["stage"] == stage]


def _check_finite(loss, grads, stage, epoch, batch):
    bad = not np.isfinite(value(loss))
    bad = bad or any(not np.all(np.isfinite(g)) for g in grads.values())
    if bad:
        raise NonFiniteError(
            f"non-finite loss or gradient in {stage} at epoch {epoch} (demos {list(batch)})", stage, epoch, list(batch)
        )


def _clip(grads, max_norm):
    if not max_norm:
        return grads
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm:
        return grads
    k = max_norm / total
    return {n: g * k for n, g in grads.items()}


def gradient_step(sf, names, loss_fn, lr, cfg: TrainConfig, stage="", epoch=0, batch=()):
    """Evaluate ``loss_fn(bound)`` with leaves for ``names``, then take one AdamW step."""
    leaves = sf.store.leaves(names)
    bound = sf.bind(leaves)
    loss = loss_fn(bound)
    if not hasattr(loss, "value"):
        return float(loss)
    gl = grad(loss, [leaves[n] for n in names])
    grads = {n: np.asarray(value(g)) for n, g in zip(names, gl)}
    _check_finite(loss, grads, stage, epoch, batch)
    if lr > 0:
        adamw_step(sf.store, _clip(grads, cfg.grad_clip), lr, cfg.weight_decay)
        if any(n.startswith(sf.icnn.prefix + ".") for n in names):
            # projected step: keep F(x_e) a minimizer of C so s(.) cannot go flat on the data
            sf.center_icnn()
    return float(value(loss))


def _batches(rng, n_demos, size):
    order = rng.permutation(n_demos)
    size = min(size, n_demos)
    return [order[i : i + size] for i in range(0, n_demos, size)]


def shot_schedule(epoch, epochs, shot_min, shot_max):
    """Linear ramp ``round(shot_min + p (shot_max - shot_min))`` with ``p = e / (E - 1)``."""
    p = epoch / max(1, epochs - 1)
    return int(round(shot_min + p * (shot_max - shot_min)))


def _prepared(dataset, cfg):
    """Apply the configured downsampling once (datasets record it in their meta)."""
    if cfg.downsample > 1 and "downsample" not in dataset.meta:
        return dataset.downsample(cfg.downsample)
    return dataset


# -- stages -----------------------------------------------------------------------------------------


def run_stage1(sf: StableField, dataset: Dataset, cfg: TrainConfig, history: History | None = None):
    history = History() if history is None else history
    demos = dataset.array()
    dt = dataset.dt
    m = sf.manifold
    rng = np.random.default_rng([cfg.seed, 1])
    names = sf.g_names()
    n_steps = demos.shape[1] - 1
    t_start = time.perf_counter()
    for epoch in range(cfg.tangent_epochs):
        t0 = time.perf_counter()
        losses = []
        for batch in _batches(rng, len(demos), cfg.batch_size):
            losses.append(
                gradient_step(
                    sf, names, lambda b: loss_tangents(b.g, m, demos[batch], dt), cfg.tangent_lr, cfg, "tangent", epoch, batch
                )
            )
        history.add(stage="tangent", epoch=epoch, loss=float(np.mean(losses)), wall_time=time.perf_counter() - t0)
    for epoch in range(cfg.ms_epochs):
        t0 = time.perf_counter()
        shot = min(shot_schedule(epoch, cfg.ms_epochs, cfg.shot_min, cfg.shot_max), n_steps)
        losses = []
        for batch in _batches(rng, len(demos), cfg.batch_size):
            losses.append(
                gradient_step(
                    sf,
                    names,
                    lambda b: loss_multishoot(
                        b.g, m, demos[batch], dt, shot, cfg.lambda_ms, cfg.solver(1, dt), sf.x_e
                    ),
                    cfg.ms_lr,
                    cfg,
                    "multishoot_g",
                    epoch,
                    batch,
                )
            )
        history.add(stage="multishoot_g", epoch=epoch, loss=float(np.mean(losses)), wall_time=time.perf_counter() - t0, shot=shot)
    history.stage_times["stage1"] = time.perf_counter() - t_start
    return sf, history


def g_rollouts(sf, starts, n_steps, dt, cfg: TrainConfig):
    """Rollouts of the base field from ``starts`` (plain arrays)."""
    bound = sf.bind()
    pts = rollout(sf.manifold, bound.g, np.asarray(starts), cfg.solver(n_steps, dt), sf.x_e)
    return np.stack([np.asarray(value(p)) for p in pts], axis=-2)


def run_stage2(sf: StableField, dataset: Dataset, cfg: TrainConfig, history: History | None = None):
    history = History() if history is None else history
    demos = dataset.array()
    dt = dataset.dt
    rng = np.random.default_rng([cfg.seed, 2])
    names = sf.v_names()
    n_steps = demos.shape[1] - 1
    t_start = time.perf_counter()
    rolls = None
    for epoch in range(cfg.lyap_epochs):
        t0 = time.perf_counter()
        if rolls is None or (cfg.rollout_refresh and epoch % cfg.rollout_refresh == 0):
            rolls = g_rollouts(sf, demos[:, 0], n_steps, dt, cfg)
        losses = []
        for batch in _batches(rng, len(demos), cfg.batch_size):
            trajs = np.concatenate([demos[batch], rolls[batch]])
            losses.append(
                gradient_step(
                    sf, names, lambda b: loss_lyapunov(b.V, trajs, sf.alpha, dt), cfg.lyap_lr, cfg, "lyapunov", epoch, batch
                )
            )
        frac = float(np.mean(decay_fraction(sf.bind().V(demos))))
        history.add(
            stage="lyapunov", epoch=epoch, loss=float(np.mean(losses)), wall_time=time.perf_counter() - t0, decay_fraction=frac
        )
    history.stage_times["stage2"] = time.perf_counter() - t_start
    return sf, history


def lie_violations(sf, points, tol=1e-9):
    """Count of points where ``L_f V + alpha V > tol max(1, V)``."""
    points = np.asarray(points)
    keep = ~sf.degenerate(points)
    lie, v = sf.bind().lie_f(points[keep])
    lie, v = np.asarray(value(lie)), np.asarray(value(v))
    return int(np.count_nonzero(lie + sf.alpha * v > tol * np.maximum(1.0, v)))


def _finetune(sf, dataset, cfg, epochs, lr, stage, names, history, shot_min, shot_max):
    demos = dataset.array()
    dt = dataset.dt
    rng = np.random.default_rng([cfg.seed, 3 if stage == "finetune" else 4])
    n_steps = demos.shape[1] - 1
    flat = demos.reshape(-1, demos.shape[-1])
    for epoch in range(epochs):
        t0 = time.perf_counter()
        shot = min(shot_schedule(epoch, epochs, shot_min, shot_max), n_steps)
        losses = []
        for batch in _batches(rng, len(demos), cfg.batch_size):
            losses.append(
                gradient_step(
                    sf,
                    names,
                    lambda b: loss_multishoot(b.f, sf.manifold, demos[batch], dt, shot, cfg.lambda_ms, cfg.solver(1, dt), sf.x_e),
                    lr,
                    cfg,
                    stage,
                    epoch,
                    batch,
                )
            )
        probe = flat[rng.choice(len(flat), size=min(cfg.check_points, len(flat)), replace=False)]
        viol = lie_violations(sf, probe)
        history.add(stage=stage, epoch=epoch, loss=float(np.mean(losses)), wall_time=time.perf_counter() - t0, shot=shot, lie_violations=viol)
    return sf, history


def run_stage3(sf: StableField, dataset: Dataset, cfg: TrainConfig, history: History | None = None):
    history = History() if history is None else history
    t_start = time.perf_counter()
    names = sf.g_names() + sf.v_names()
    _finetune(sf, dataset, cfg, cfg.finetune_epochs, cfg.finetune_lr, "finetune", names, history, cfg.shot_max, cfg.shot_max)
    history.stage_times["stage3"] = time.perf_counter() - t_start
    return sf, history


def run_direct(sf: StableField, dataset: Dataset, cfg: TrainConfig, history: History | None = None):
    """Multiple shooting on ``f`` from the initial parameters, with the shot ramp."""
    history = History() if history is None else history
    t_start = time.perf_counter()
    names = sf.g_names() + sf.v_names()
    _finetune(sf, dataset, cfg, cfg.direct_epochs, cfg.direct_lr, "direct", names, history, cfg.shot_min, cfg.shot_max)
    history.stage_times["direct"] = time.perf_counter() - t_start
    return sf, history


def train(dataset: Dataset, cfg: TrainConfig, mode="three-stage", sf: StableField | None = None):
    """Full pipeline; returns ``(field, history)``."""
    data = _prepared(dataset, cfg)
    sf = make_field(data, cfg) if sf is None else sf
    history = History()
    if mode == "three-stage":
        run_stage1(sf, data, cfg, history)
        run_stage2(sf, data, cfg, history)
        run_stage3(sf, data, cfg, history)
    elif mode == "direct":
        run_direct(sf, data, cfg, history)
    else:
        raise ValueError(f"unknown training mode {mode!r}")
    return sf, history


# -- evaluation and timing ---------------------------------------------------------------------------


def evaluate(field_fn, manifold, dataset: Dataset, solver: SolveConfig | None = None, reference=None):
    """Per-demo RMSE of geodesic distances between rollouts and demos.

    Rollouts start at each demo's first sample and run for its duration on
    the demo's time grid.  Returns ``(rmse_per_demo, rollouts)``.
    """
    demos = dataset.array()
    n = demos.shape[1] - 1
    dt = dataset.dt
    solver = SolveConfig("exp", "euler", n, n * dt) if solver is None else SolveConfig(
        solver.method, solver.stepper, n, n * dt, solver.reference, solver.switch_radius, solver.substeps, solver.pullback
    )
    pts = rollout(manifold, field_fn, demos[:, 0], solver, reference)
    traj = np.stack([np.asarray(value(p)) for p in pts], axis=1) if isinstance(pts, list) else np.swapaxes(pts, 0, 1)
    d2 = np.asarray(manifold.dist2(traj, demos))
    return np.sqrt(np.mean(d2, axis=-1)), traj


def time_objectives(sf, dataset: Dataset, cfg: TrainConfig, shot=None, reps=100):
    """Per-gradient-step wall times of the stage-1 (g) and stage-3 (f) objectives."""
    data = _prepared(dataset, cfg)
    demos = data.array()[: cfg.batch_size]
    dt = data.dt
    shot = cfg.shot_max if shot is None else shot
    out = {}
    for label, names, attr in (("stage1", sf.g_names(), "g"), ("stage3", sf.g_names() + sf.v_names(), "f")):
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            gradient_step(
                sf,
                names,
                lambda b: loss_multishoot(getattr(b, attr), sf.manifold, demos, dt, shot, cfg.lambda_ms, cfg.solver(1, dt), sf.x_e),
                0.0,
                cfg,
            )
            times.append(time.perf_counter() - t0)
        out[label] = np.array(times)
    return out


def save_metrics(history: History, path):
    history.write_csv(path)
