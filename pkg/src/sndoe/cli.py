"""Command-line interface: ``sndoe <command> [options]``.

Exit codes: 0 success, 2 usage or validation error, 3 numerical abort.
Every command writes a ``manifest.json`` run record into its output directory.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from . import __version__, svg
from .data import SHAPES, DatasetError, export_trajectories, generate, load_trajectories
from .diff import value
from .field import StableField
from .geometry import CutLocus, Euclidean, UnitQuaternion, parse_manifold
from .solve import (
    SolveConfig,
    Trajectory,
    rotation_field,
    save_trajectory,
    solve,
    sphere_pull_field,
    sphere_pull_solution,
)
from .train import NonFiniteError, TrainConfig, _prepared, evaluate, make_field, save_metrics, time_objectives, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
START_TOL = 1e-6

# published RMSE values for comparable shapes, reported next to ours as annotations only
REFERENCE_RMSE = {
    ("s3", "w-curve"): {"ts": 0.06, "exp": 0.10, "dc": 0.10},
    ("s3", "bent-line"): {"ts": 0.41, "exp": 0.33, "dc": 0.27},
    ("s3", "multi"): {"ts": 0.15, "exp": 0.11, "dc": 0.15},
}


class UsageError(ValueError):
    pass


# -- run manifest ------------------------------------------------------------------


def _version():
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class RunManifest:
    """Run record: command, stored config and its hash, seed, version, timestamps, outputs."""

    def __init__(self, out_dir, command, config, seed):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.config_bytes = (json.dumps(config, sort_keys=True, indent=2) + "\n").encode()
        self.seed = seed
        self.started = _now()
        self.outputs = []
        (self.out_dir / "config.json").write_bytes(self.config_bytes)
        self.add("config.json")

    @property
    def config_hash(self):
        return hashlib.sha256(self.config_bytes).hexdigest()

    def add(self, path):
        path = Path(path)
        rel = str(path.relative_to(self.out_dir)) if path.is_absolute() else str(path)
        if rel not in self.outputs:
            self.outputs.append(rel)
        return self.out_dir / rel

    def write(self):
        doc = {
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "version": _version(),
            "started": self.started,
            "finished": _now(),
            "outputs": sorted(self.outputs),
        }
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(doc, indent=2) + "\n")
        return path


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else repr(float(v)) if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _manifold(spec):
    try:
        return parse_manifold(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _solver(spec, n_steps, horizon):
    try:
        method, stepper = spec.split("-")
    except ValueError:
        raise UsageError(f"solver must look like 'exp-euler' or 'dc-rk4', got {spec!r}") from None
    try:
        return SolveConfig(method, stepper, n_steps, horizon)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _projected(manifold, points, x_e):
    """Tangent coordinates ``log_{x_e}(x)``: a flat view for plots."""
    return np.asarray(manifold.log(np.broadcast_to(x_e, points.shape), points, check=False))


def _pca2(vectors):
    flat = vectors.reshape(-1, vectors.shape[-1])
    _, _, vt = np.linalg.svd(flat - flat.mean(axis=0), full_matrices=False)
    basis = vt[:2] if vt.shape[0] >= 2 else np.vstack([vt, np.zeros_like(vt)])
    return vectors @ basis.T


# -- commands ----------------------------------------------------------------------


def cmd_gen_dataset(args):
    if args.shape not in SHAPES:
        raise UsageError(f"unknown shape {args.shape!r}; choose from {', '.join(SHAPES)}")
    manifold = _manifold(args.manifold)
    config = {"shape": args.shape, "manifold": manifold.to_dict(), "seed": args.seed, "n_samples": args.n_samples}
    run = RunManifest(args.out, "gen-dataset", config, args.seed)
    ds = generate(args.shape, manifold, seed=args.seed, n_samples=args.n_samples)
    export_trajectories(ds, run.out_dir)
    run.add("dataset.json")
    for k in range(len(ds.demos)):
        run.add(f"demo_{k}.csv")
        run.add(f"demo_{k}.json")
    xy = _pca2(_projected(manifold, ds.array(), ds.goal))
    panel = svg.Panel(title=f"{args.shape} on {args.manifold}", xlabel="pc1 of log at goal", ylabel="pc2", equal=True)
    for k, demo in enumerate(xy):
        panel.add(demo[:, 0], demo[:, 1], f"demo {k}")
    panel.add([0.0], [0.0], "goal", color="black", marker=True)
    svg.write(run.add("preview.svg"), [panel])
    run.write()
    print(f"wrote {len(ds.demos)} demos of {ds.n_points} samples to {run.out_dir}")
    return EXIT_OK


def _load_dataset(path):
    try:
        return load_trajectories(path)
    except DatasetError as exc:
        raise UsageError(f"invalid dataset: {exc}") from None


def _load_model(path):
    try:
        return StableField.load(path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot load model {path}: {exc}") from None


def cmd_train(args):
    ds = _load_dataset(args.dataset)
    try:
        cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
        if args.seed is not None:
            cfg.seed = args.seed
    except (OSError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"invalid config: {exc}") from None
    config = {"train": cfg.to_dict(), "mode": args.mode, "dataset": str(Path(args.dataset).resolve())}
    run = RunManifest(args.out, "train", config, cfg.seed)
    try:
        sf, history = train(ds, cfg, args.mode)
    except NonFiniteError as exc:
        dump = {"error": str(exc), "stage": exc.stage, "epoch": exc.epoch, "batch": [int(i) for i in np.atleast_1d(exc.batch)]}
        (run.out_dir / "nonfinite.json").write_text(json.dumps(dump, indent=2) + "\n")
        run.add("nonfinite.json")
        run.write()
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    sf.save(run.add("model.json"))
    save_metrics(history, run.add("metrics.csv"))
    rmse, _ = evaluate(sf.bind().f, sf.manifold, _prepared(ds, cfg))
    summary = {
        "stage_seconds": history.stage_times,
        "total_seconds": float(sum(history.stage_times.values())),
        "rmse_per_demo": [float(r) for r in rmse],
        "rmse_mean": float(np.mean(rmse)),
        "small_denominator_events": sf.diagnostics.small_denominator,
    }
    (run.out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    run.add("summary.json")
    run.write()
    for stage, secs in history.stage_times.items():
        print(f"{stage}: {secs:.1f} s")
    print(f"evaluation rmse: {summary['rmse_mean']:.4f}")
    return EXIT_OK


def _parse_start(spec, sf, dataset):
    m = sf.manifold
    if spec.startswith("demo:") or spec.startswith("perturb:"):
        if dataset is None:
            raise UsageError(f"--start {spec} needs --dataset")
        parts = spec.split(":")
        try:
            k = int(parts[1])
            r = float(parts[2]) if parts[0] == "perturb" else 0.0
        except (IndexError, ValueError):
            raise UsageError(f"bad --start {spec!r}; use demo:k or perturb:k:r") from None
        if not 0 <= k < len(dataset.demos):
            raise UsageError(f"demo index {k} out of range")
        x0 = dataset.demos[k].points[0]
        if r > 0:
            rng = np.random.default_rng(k)
            u = np.asarray(m.random_tangent(rng, x0))
            x0 = np.asarray(m.exp(x0, u * (r / float(m.norm(x0, u)))))
        return x0
    try:
        x0 = np.array([float(v) for v in spec.split(",")])
    except ValueError:
        raise UsageError(f"bad --start {spec!r}; expected comma-separated coordinates") from None
    if x0.shape != (m.ambient_dim,):
        raise UsageError(f"--start needs {m.ambient_dim} coordinates, got {x0.size}")
    if not bool(m.check_point(x0, tol=START_TOL)):
        raise UsageError(f"start point is off the manifold by more than {START_TOL}")
    return np.asarray(m.normalize(x0))


def cmd_rollout(args):
    sf = _load_model(args.model)
    dataset = _load_dataset(args.dataset) if args.dataset else None
    x0 = _parse_start(args.start, sf, dataset)
    cfg = _solver(args.solver, args.steps, args.steps * args.dt)
    b = sf.bind()
    pts = np.asarray(solve(sf.manifold, b.f, x0, cfg, sf.x_e))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    run = RunManifest(
        out.parent, "rollout", {"model": str(args.model), "start": args.start, "solver": args.solver, "steps": args.steps, "dt": args.dt}, 0
    )
    traj = Trajectory(sf.manifold, pts, args.dt, 0.0, {"solver": args.solver})
    save_trajectory(traj, out)
    run.add(out.resolve())
    run.add(out.with_suffix(".json").resolve())
    run.write()
    v = np.asarray(value(b.V(pts)))
    for i, vi in enumerate(v):
        print(f"step {i} t={i * args.dt:.6g} V={vi:.10e}")
    print(f"final distance to x_e: {float(sf.manifold.dist(pts[-1], sf.x_e)):.10e}")
    return EXIT_OK


def cmd_evaluate(args):
    sf = _load_model(args.model)
    ds = _load_dataset(args.dataset)
    if ds.manifold != sf.manifold:
        raise UsageError(f"manifold mismatch: model on {sf.manifold}, dataset on {ds.manifold}")
    if args.downsample > 1:
        ds = ds.downsample(args.downsample)
    method = args.solver.split("-")[0]
    cfg = _solver(args.solver, 1, ds.dt)
    rmse, traj = evaluate(sf.bind().f, sf.manifold, ds, cfg, sf.x_e)
    run = RunManifest(args.out, "evaluate", {"model": str(args.model), "dataset": str(args.dataset), "solver": args.solver}, 0)
    rows = [(k, float(r)) for k, r in enumerate(rmse)] + [("mean", float(np.mean(rmse)))]
    _write_csv(run.add("rmse.csv"), ["demo", "rmse"], rows)
    kind = sf.manifold.to_dict().get("kind")
    ref = REFERENCE_RMSE.get((kind, ds.name), {}).get(method)
    summary = {"rmse_per_demo": [float(r) for r in rmse], "rmse_mean": float(np.mean(rmse))}
    if ref is not None:
        summary["published_reference_rmse"] = ref
    (run.out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    run.add("summary.json")
    demos = ds.array()
    t = np.arange(demos.shape[1]) * ds.dt
    panels = []
    for k in range(len(demos)):
        a, b = _projected(sf.manifold, demos[k], sf.x_e), _projected(sf.manifold, traj[k], sf.x_e)
        p = svg.Panel(title=f"demo {k} (rmse {rmse[k]:.3g})", xlabel="t", ylabel="log at x_e")
        for j in range(a.shape[1]):
            color = svg.PALETTE[j % len(svg.PALETTE)]
            p.add(t, a[:, j], f"c{j}", color=color)
            p.add(t, b[:, j], color=color, dashed=True)
        panels.append(p)
    svg.write(run.add("overlay.svg"), panels, columns=2)
    run.write()
    for k, r in enumerate(rmse):
        print(f"demo {k}: rmse {r:.6f}")
    print(f"mean rmse: {np.mean(rmse):.6f}" + (f" (published reference {ref})" if ref is not None else ""))
    return EXIT_OK


def _bench_problem(manifold_spec, field_spec):
    """Closed-form test problems: ``(manifold, field, exact(x0, t), x0)``."""
    name, _, params = field_spec.partition(":")
    vals = [float(v) for v in params.split(",")] if params else []
    if manifold_spec in ("s3", "quat"):
        m = UnitQuaternion()
        x0 = np.array([0.6, -0.2, 0.7, -0.33])
        x0 /= np.linalg.norm(x0)
        if name == "pull":
            c = np.array(vals or [0.3, 1.2, -0.4, 0.5])
            if c.shape != (4,):
                raise UsageError("pull field needs 4 coefficients")
            return m, sphere_pull_field(c), lambda x, t: sphere_pull_solution(c, x, t), x0
        if name == "rotation":
            w = np.array(vals or [0.4, -0.7, 1.1, 0.2, -0.3, 0.9])
            if w.shape != (6,):
                raise UsageError("rotation field needs 6 coefficients (upper triangle of a 4x4 generator)")
            upper = np.zeros((4, 4))
            upper[np.triu_indices(4, 1)] = w
            skew = upper - upper.T
            return m, rotation_field(upper), lambda x, t: x @ expm(skew * t), x0
    elif manifold_spec.startswith("euclidean") or manifold_spec.startswith("r"):
        m = _manifold(manifold_spec)
        if name == "linear":
            k = vals[0] if vals else 1.0
            x0 = np.linspace(1.0, -0.5, m.ambient_dim)
            return m, (lambda x: -k * np.asarray(x)), (lambda x, t: x * np.exp(-k * t)), x0
    raise UsageError(f"unsupported field {field_spec!r} on {manifold_spec!r} (s3: pull, rotation; euclidean: linear)")


def cmd_solver_bench(args):
    m, fn, exact, x0 = _bench_problem(args.manifold, args.field)
    ns = [int(n) for n in args.ns.split(",")]
    config = {"manifold": args.manifold, "field": args.field, "horizon": args.horizon, "ns": ns}
    run = RunManifest(args.out, "solver-bench", config, 0)
    target = exact(x0, args.horizon)
    rows, curves = [], {}
    for method in ("ts", "exp", "dc"):
        for stepper in ("euler", "rk4"):
            errs = []
            for n in ns:
                cfg = SolveConfig(method, stepper, n, args.horizon)
                t0 = time.perf_counter()
                try:
                    end = np.asarray(solve(m, fn, x0, cfg, target if method == "ts" else None)[-1])
                    err = float(m.dist(end, target))
                except CutLocus:
                    # the solution leaves the tangent-space chart; the method does not apply
                    err = float("nan")
                wall = time.perf_counter() - t0
                errs.append(err)
                rows.append((method, stepper, n, err, wall))
            curves[(method, stepper)] = errs
    _write_csv(run.add("bench.csv"), ["method", "stepper", "n", "error", "wall_seconds"], rows)
    orders = []
    for (method, stepper), errs in curves.items():
        e = np.array(errs)
        o = np.log(e[:-1] / e[1:]) / np.log(np.array(ns[1:]) / np.array(ns[:-1]))
        orders.append((method, stepper, float(o[-1]) if o.size else float("nan")))
    _write_csv(run.add("orders.csv"), ["method", "stepper", "order"], orders)
    panels = []
    for stepper in ("euler", "rk4"):
        p = svg.Panel(title=f"error vs N ({stepper})", xlabel="N", ylabel="endpoint error", logx=True, logy=True)
        for method in ("ts", "exp", "dc"):
            p.add(ns, curves[(method, stepper)], method, marker=True)
        panels.append(p)
    svg.write(run.add("bench.svg"), panels)
    run.write()
    for method, stepper, o in orders:
        print(f"{method}-{stepper}: order {o:.3f}")
    return EXIT_OK


def defect_field(seed, correction_enabled, manifold=None, gain=5.0):
    """Small random stable field whose ``h(x_e)`` is far from zero.

    The ICNN is left uncentred: the reproduction uses raw random parameters,
    as in the formulation without the equilibrium correction.
    """
    manifold = Euclidean(2) if manifold is None else manifold
    x_e = np.asarray(manifold.identity())
    return StableField.create(
        manifold,
        x_e,
        seed=seed,
        h_hidden=(32, 32),
        H_hidden=(16, 16),
        feature_dim=4,
        C_hidden=(16, 16),
        h_out_gain=gain,
        correction_enabled=correction_enabled,
        center=False,
    )


def defect_rollout(sf, x0=None, n_steps=100, dt=0.01):
    """Exp-Euler rollout of ``f``; returns the visited points ``(n + 1, m)``."""
    x = np.array(sf.x_e if x0 is None else x0, dtype=np.float64)
    b = sf.bind()
    pts = [x]
    for _ in range(n_steps):
        x = np.asarray(sf.manifold.exp(x, np.asarray(value(b.f(x))) * dt))
        pts.append(x)
    return np.array(pts)


def cmd_defect_demo(args):
    config = {"seed": args.seed, "steps": args.steps, "dt": args.dt, "gain": args.gain}
    run = RunManifest(args.out, "defect-demo", config, args.seed)
    rng = np.random.default_rng(args.seed)
    report = {}
    panels = []
    for label, corrected in (("uncorrected", False), ("corrected", True)):
        sf = defect_field(args.seed, corrected, gain=args.gain)
        h_e = np.asarray(value(sf.h(sf.store.params, sf.x_e)))
        f_e = np.asarray(sf.stable_field(sf.x_e))
        starts = [sf.x_e] + [sf.x_e + 0.05 * rng.normal(size=sf.x_e.shape) for _ in range(4)]
        p = svg.Panel(title=f"{label}: |f(x_e)| = {np.linalg.norm(f_e):.3g}", xlabel="x1", ylabel="x2", equal=True)
        from_eq = None
        for i, x0 in enumerate(starts):
            pts = defect_rollout(sf, x0, args.steps, args.dt)
            if i == 0:
                from_eq = pts
            p.add(pts[:, 0], pts[:, 1], "from x_e" if i == 0 else "", dashed=i > 0)
        p.add([sf.x_e[0]], [sf.x_e[1]], "x_e", color="black", marker=True)
        panels.append(p)
        report[label] = {
            "h_x_e_norm": float(np.linalg.norm(h_e)),
            "f_x_e_norm": float(np.linalg.norm(f_e)),
            "max_distance_from_x_e": float(np.max(np.linalg.norm(from_eq - sf.x_e, axis=-1))),
            "stays_bitwise_at_x_e": bool(np.all(from_eq == sf.x_e)),
        }
    svg.write(run.add("defect.svg"), panels)
    (run.out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    run.add("report.json")
    run.write()
    for label, r in report.items():
        print(f"{label}: |f(x_e)| = {r['f_x_e_norm']:.6g}, max excursion {r['max_distance_from_x_e']:.6g}")
    return EXIT_OK


def cmd_timing(args):
    ds = _load_dataset(args.dataset)
    try:
        cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    except (OSError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"invalid config: {exc}") from None
    run = RunManifest(args.out, "timing", {"train": cfg.to_dict(), "shot": args.shot, "reps": args.reps}, cfg.seed)
    sf = make_field(_prepared(ds, cfg), cfg)
    times = time_objectives(sf, ds, cfg, shot=args.shot, reps=args.reps)
    rows = []
    for label, t in times.items():
        q1, med, q3 = np.percentile(t, [25, 50, 75])
        rows.append((label, float(med), float(q1), float(q3), len(t)))
    ratio = rows[0][1] / rows[1][1]
    _write_csv(run.add("timing.csv"), ["objective", "median_seconds", "q1_seconds", "q3_seconds", "reps"], rows)
    run.write()
    for label, med, q1, q3, _ in rows:
        print(f"{label}: median {med * 1e3:.2f} ms (IQR {q1 * 1e3:.2f}-{q3 * 1e3:.2f})")
    print(f"stage1 / stage3 median ratio: {ratio:.3f}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="sndoe", description="Stable neural ODEs on Riemannian manifolds.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-dataset", help="synthesize demonstrations on a manifold")
    g.add_argument("--shape", required=True)
    g.add_argument("--manifold", required=True, help="s3, spd2, euclidean:N, or a product such as r3xs3")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-samples", type=int, default=1001)
    g.set_defaults(func=cmd_gen_dataset)

    t = sub.add_parser("train", help="train a stable field on a dataset")
    t.add_argument("--dataset", required=True)
    t.add_argument("--config", help="JSON file with training options")
    t.add_argument("--out", required=True)
    t.add_argument("--mode", choices=("three-stage", "direct"), default="three-stage")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("rollout", help="integrate a trained field from a start point")
    r.add_argument("--model", required=True)
    r.add_argument("--start", required=True, help="comma-separated coordinates, demo:k, or perturb:k:r")
    r.add_argument("--dataset", help="dataset for demo:k and perturb:k:r starts")
    r.add_argument("--solver", default="exp-euler", help="method-stepper, e.g. exp-euler, dc-rk4, ts-rk4")
    r.add_argument("--steps", type=int, default=1000)
    r.add_argument("--dt", type=float, default=0.01)
    r.add_argument("--out", required=True, help="trajectory CSV path")
    r.set_defaults(func=cmd_rollout)

    e = sub.add_parser("evaluate", help="RMSE of rollouts against the demonstrations")
    e.add_argument("--model", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--solver", default="exp-euler")
    e.add_argument("--downsample", type=int, default=1)
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("solver-bench", help="error and cost of the solvers on closed-form fields")
    b.add_argument("--manifold", default="s3")
    b.add_argument("--field", default="pull", help="s3: pull[:c0,c1,c2,c3] or rotation[:a01,a02,a03,a12,a13,a23]; euclidean: linear[:k]")
    b.add_argument("--horizon", type=float, default=3.0)
    b.add_argument("--ns", default="100,200,400")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_solver_bench)

    dd = sub.add_parser("defect-demo", help="rollouts from x_e with and without the equilibrium correction")
    dd.add_argument("--out", required=True)
    dd.add_argument("--seed", type=int, default=0)
    dd.add_argument("--steps", type=int, default=100)
    dd.add_argument("--dt", type=float, default=0.01)
    dd.add_argument("--gain", type=float, default=5.0, help="output gain of h, sets the size of h(x_e)")
    dd.set_defaults(func=cmd_defect_demo)

    tm = sub.add_parser("timing", help="per-step cost of the stage-1 and stage-3 objectives")
    tm.add_argument("--dataset", required=True)
    tm.add_argument("--config")
    tm.add_argument("--out", required=True)
    tm.add_argument("--shot", type=int)
    tm.add_argument("--reps", type=int, default=100)
    tm.set_defaults(func=cmd_timing)
    return p


def _thread_limit():
    raw = os.environ.get("SNDOE_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"SNDOE_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("SNDOE_THREADS must be positive")
    return n


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        limit = _thread_limit()
        if limit is None:
            return args.func(args)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=limit):
            return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
