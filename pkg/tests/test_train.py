import numpy as np
import pytest

from sndoe.data import Dataset
from sndoe.diff import value
from sndoe.field import StableField
from sndoe.geometry import Euclidean, UnitQuaternion
from sndoe.solve import SolveConfig, Trajectory, solve
from sndoe.train import (
    NonFiniteError,
    TrainConfig,
    decay_fraction,
    evaluate,
    fragments,
    gradient_step,
    lie_violations,
    loss_lyapunov,
    loss_multishoot,
    loss_tangents,
    make_field,
    run_direct,
    run_stage1,
    run_stage2,
    run_stage3,
    shot_schedule,
    train,
)

R1, R2 = Euclidean(1), Euclidean(2)
S3 = UnitQuaternion()
TINY = dict(h_hidden=(16, 16), H_hidden=(16,), feature_dim=4, C_hidden=(16, 16), downsample=1)


def _cfg(**kw):
    base = dict(TINY, tangent_epochs=0, ms_epochs=0, lyap_epochs=0, finetune_epochs=0, direct_epochs=0)
    base.update(kw)
    return TrainConfig(**base)


def _linear_dataset(a, starts, n=40, dt=0.05):
    """Demos of ``x' = A x`` towards 0 in R^2, integrated with exp-Euler (plain Euler)."""
    a = np.asarray(a, dtype=np.float64)
    pts = solve(R2, lambda x: x @ a.T, np.asarray(starts, dtype=np.float64), SolveConfig("exp", "euler", n, n * dt))
    goal = np.zeros(2)
    demos = []
    for k in range(len(starts)):
        p = pts[:, k].copy()
        p[-1] = goal
        demos.append(Trajectory(R2, p, dt))
    return Dataset(R2, demos, goal, "linear")


STARTS = [[1.0, 0.5], [-0.8, 1.0], [0.6, -1.0], [-1.0, -0.4]]


# -- losses: closed-form examples -------------------------------------------------------------


def test_tangent_loss_examples():
    dt = 0.1
    c = np.array([0.3, -0.2])
    demo = np.arange(6)[:, None] * c * dt
    demos = demo[None]
    assert value(loss_tangents(lambda x: np.broadcast_to(c, x.shape), R2, demos, dt)) == pytest.approx(0.0, abs=1e-30)
    want = np.mean(np.sum(np.diff(demo, axis=0) ** 2, axis=-1))
    assert value(loss_tangents(np.zeros_like, R2, demos, dt)) == pytest.approx(want, rel=1e-14)
    x0, x1 = S3.random_point(np.random.default_rng(0), 2)
    x1 = S3.exp(x0, 0.2 * S3.log(x0, x1))
    g = lambda x: S3.project_tangent(x, np.ones(4))  # noqa: E731
    r = g(x0) * dt - S3.log(x0, x1)
    assert value(loss_tangents(g, S3, np.stack([x0, x1])[None], dt)) == pytest.approx(r @ r, rel=1e-14)
    with pytest.raises(ValueError):
        loss_tangents(g, S3, x0[None, None], dt)


def test_multishoot_zero_for_exact_field():
    a = np.array([[-0.5, 1.0], [-1.0, -0.5]])
    f = lambda x: x @ a.T  # noqa: E731
    demos = np.swapaxes(solve(R2, f, np.array(STARTS), SolveConfig("exp", "euler", 40, 2.0)), 0, 1)
    for shot in (1, 7, 40):
        assert value(loss_multishoot(f, R2, demos, 0.05, shot, 1.0)) == pytest.approx(0.0, abs=1e-24)


def test_multishoot_single_fragment_has_no_penalty():
    rng = np.random.default_rng(1)
    demos = rng.normal(size=(2, 9, 1))
    f = lambda x: -2.0 * x  # noqa: E731
    a = value(loss_multishoot(f, R1, demos, 0.1, 8, 0.0))
    b = value(loss_multishoot(f, R1, demos, 0.1, 8, 100.0))
    assert a == b


def test_multishoot_two_fragments_by_hand():
    dt, a, lam = 0.1, -1.5, 0.7
    demo = np.array([1.0, 0.9, 0.7, 0.6, 0.3])
    r = 1.0 + a * dt
    # fragment 0 starts at demo[0], fragment 1 at demo[2]; two Euler steps each
    pred = [demo[0] * r, demo[0] * r * r, demo[2] * r, demo[2] * r * r]
    target = demo[[1, 2, 3, 4]]
    data = np.sum((np.array(pred) - target) ** 2) / 4
    penalty = lam * abs(demo[0] * r * r - demo[2])
    got = value(loss_multishoot(lambda x: a * x, R1, demo[None, :, None], dt, 2, lam))
    assert got == pytest.approx(data + penalty, rel=1e-14)


def test_multishoot_ragged_fragment():
    assert fragments(10, 4) == [(0, 4), (4, 4), (8, 2)]
    assert fragments(10, 20) == [(0, 10)]
    with pytest.raises(ValueError):
        fragments(10, 0)


def test_multishoot_invariant_under_demo_order():
    rng = np.random.default_rng(2)
    demos = rng.normal(size=(4, 13, 2))
    f = lambda x: np.tanh(x) - 0.3 * x  # noqa: E731
    a = value(loss_multishoot(f, R2, demos, 0.05, 5, 0.5))
    b = value(loss_multishoot(f, R2, demos[::-1], 0.05, 5, 0.5))
    assert a == pytest.approx(b, rel=1e-14)


def test_lyapunov_loss_examples():
    dt, alpha = 0.1, 0.5
    v = lambda x: np.sum(x * x, axis=-1)  # noqa: E731
    fast = np.exp(-2.0 * dt * np.arange(11))[:, None] * np.array([1.0, 0.0])
    assert value(loss_lyapunov(v, fast[None], alpha, dt)) == 0.0
    bump = np.array([[1.0], [1.2], [0.9]])
    assert value(loss_lyapunov(v, bump[None], 0.0, dt)) == pytest.approx((1.44 - 1.0) / 2)
    const = np.tile([0.5, 0.5], (6, 1))
    want = 0.5 * np.mean(1 - np.exp(-alpha * dt * np.arange(1, 6)))
    assert value(loss_lyapunov(v, const[None], alpha, dt)) == pytest.approx(want, rel=1e-14)


def test_decay_fraction():
    np.testing.assert_allclose(decay_fraction([[3.0, 2.0, 2.5, 1.0], [1.0, 1.0, 0.5, 0.0]]), [2 / 3, 1.0])


# -- schedule and config ------------------------------------------------------------------------------


def test_shot_schedule_linear_ramp():
    for e in range(11):
        assert shot_schedule(e, 11, 5, 50) == round(5 + e / 10 * 45)
    assert shot_schedule(0, 1, 5, 50) == 5


def test_config_validation(tmp_path):
    for bad in [dict(shot_min=1), dict(shot_min=10, shot_max=5), dict(lambda_ms=-1.0), dict(alpha=-0.1), dict(batch_size=0)]:
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"sed": 1})
    cfg = TrainConfig(seed=3, h_hidden=[8, 8])
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


# -- stages ---------------------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def spiral():
    return _linear_dataset([[-0.5, 1.5], [-1.5, -0.5]], STARTS)


def test_zero_epochs_leave_parameters(spiral):
    cfg = _cfg()
    sf = make_field(spiral, cfg)
    before = {k: v.copy() for k, v in sf.store.params.items()}
    sf2, hist = train(spiral, cfg)
    for k, v in sf2.store.params.items():
        assert np.array_equal(v, before[k])
    assert hist.rows == []


def test_stage1_fits_linear_system():
    ds = _linear_dataset([[-1.0, 0.0], [0.0, -1.0]], STARTS)
    cfg = _cfg(tangent_epochs=300, tangent_lr=1e-2, ms_epochs=60, ms_lr=3e-3, shot_min=5, shot_max=20, h_out_gain=0.1)
    sf = make_field(ds, cfg)
    run_stage1(sf, ds, cfg)
    rmse, _ = evaluate(sf.bind().g, R2, ds)
    scale = np.max(np.linalg.norm(ds.array(), axis=-1))
    assert np.max(rmse) <= 0.05 * scale


def test_stage2_learns_decay_along_spiral(spiral):
    cfg = _cfg(tangent_epochs=150, tangent_lr=1e-2, lyap_epochs=150, lyap_lr=1e-2)
    sf = make_field(spiral, cfg)
    run_stage1(sf, spiral, cfg)
    _, hist = run_stage2(sf, spiral, cfg)
    assert "decay_fraction" in hist.rows[-1]
    frac = decay_fraction(sf.lyapunov(spiral.array()))
    assert np.all(frac >= 0.95)


def test_lyapunov_loss_vanishes_on_decaying_demos(spiral):
    # |x|^2 decays like exp(-t) along the spiral, faster than exp(-alpha t)
    sf = make_field(spiral, _cfg())
    for name in sf.v_names():
        sf.store.set(name, np.zeros_like(sf.store[name]))
    assert value(loss_lyapunov(sf.bind().V, spiral.array(), sf.alpha, spiral.dt)) <= 1e-12


def test_stage3_with_zero_lr_keeps_loss(spiral):
    cfg = _cfg(finetune_epochs=1, finetune_lr=0.0, shot_max=8)
    sf = make_field(spiral, cfg)
    before = value(loss_multishoot(sf.bind().f, R2, spiral.array(), spiral.dt, 8, cfg.lambda_ms, cfg.solver(1, spiral.dt), sf.x_e))
    _, hist = run_stage3(sf, spiral, cfg)
    assert hist.losses("finetune")[0] <= before + 1e-9


def test_finetune_keeps_certificate(spiral):
    cfg = _cfg(finetune_epochs=5, finetune_lr=3e-3, shot_max=8, h_out_gain=1.0)
    sf = make_field(spiral, cfg)
    _, hist = run_stage3(sf, spiral, cfg)
    assert all(r["lie_violations"] == 0 for r in hist.rows)
    pts = np.random.default_rng(0).normal(size=(2000, 2))
    assert lie_violations(sf, pts) == 0


def test_direct_training_deterministic(spiral):
    cfg = _cfg(direct_epochs=4, shot_min=2, shot_max=6)
    runs = []
    for _ in range(2):
        sf, hist = train(spiral, cfg, mode="direct")
        runs.append((hist.losses("direct"), sf.store.params))
    assert runs[0][0] == runs[1][0]
    for k in runs[0][1]:
        assert np.array_equal(runs[0][1][k], runs[1][1][k])
    with pytest.raises(ValueError):
        train(spiral, cfg, mode="other")


def test_three_stage_deterministic(spiral):
    cfg = _cfg(tangent_epochs=3, ms_epochs=3, lyap_epochs=3, finetune_epochs=2, shot_min=2, shot_max=6)
    a, ha = train(spiral, cfg)
    b, hb = train(spiral, cfg)
    assert [r["loss"] for r in ha.rows] == [r["loss"] for r in hb.rows]
    assert a.to_dict() == b.to_dict()


def test_icnn_stays_centred_during_training(spiral):
    cfg = _cfg(tangent_epochs=20, lyap_epochs=20, lyap_lr=3e-2)
    sf, _ = train(spiral, cfg)
    b = sf.bind()
    fw, zw, c_e = b._v()
    x = np.random.default_rng(1).normal(size=(500, 2)) * 2
    assert np.all(value(sf.icnn(b.p, sf.feature(b.p, x, fw), zw)) >= value(c_e) - 1e-10)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_gradient_aborts(spiral):
    cfg = _cfg()
    sf = make_field(spiral, cfg)
    w = sf.store["h.W0"].copy()
    w[0, 0] = np.nan
    sf.store.set("h.W0", w)
    with pytest.raises(NonFiniteError) as info:
        gradient_step(sf, sf.g_names(), lambda b: loss_tangents(b.g, R2, spiral.array(), spiral.dt), 1e-3, cfg, "tangent", 3, [0, 1])
    assert info.value.stage == "tangent" and info.value.epoch == 3 and info.value.batch == [0, 1]


def test_run_direct_records_wall_time(spiral):
    cfg = _cfg(direct_epochs=2, shot_min=2, shot_max=4)
    sf = make_field(spiral, cfg)
    _, hist = run_direct(sf, spiral, cfg)
    assert all(r["wall_time"] > 0 for r in hist.rows) and "direct" in hist.stage_times


def test_field_matches_store_after_reload(spiral, tmp_path):
    cfg = _cfg(tangent_epochs=2)
    sf, _ = train(spiral, cfg)
    sf.save(tmp_path / "m.json")
    back = StableField.load(tmp_path / "m.json")
    x = spiral.array()[0]
    assert np.array_equal(back.stable_field(x), sf.stable_field(x))
