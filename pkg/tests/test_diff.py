import math

import numpy as np
import pytest
from conftest import central_fd

from sndoe.diff import ParamStore, Tape, Var, adamw_step, backward, forward, grad, value
from sndoe.diff import ops as d
from sndoe.geometry import UnitQuaternion

SEEDS = range(50)


def check_grad(fn, x, tol=1e-5, h=1e-4):
    """Autodiff gradient of a scalar ``fn`` vs central differences."""
    xv = Var(np.array(x, dtype=np.float64))
    ad = np.asarray(grad(fn(xv), xv))
    fd = central_fd(lambda z: float(value(fn(z))), x, h)
    err = np.max(np.abs(ad - fd) / np.maximum(1.0, np.abs(ad)))
    assert err <= tol, f"max relative error {err:.3e}"


# (name, scalarized function, sampler) for elementwise primitives
UNARY = [
    ("exp", d.exp, lambda r: r.normal(size=5)),
    ("log", d.log, lambda r: r.uniform(0.2, 3.0, 5)),
    ("sqrt", d.sqrt, lambda r: r.uniform(0.2, 3.0, 5)),
    ("sin", d.sin, lambda r: r.normal(size=5) * 2),
    ("cos", d.cos, lambda r: r.normal(size=5) * 2),
    ("sigmoid", d.sigmoid, lambda r: r.normal(size=5) * 3),
    ("softplus", d.softplus, lambda r: r.normal(size=5) * 3),
    ("relu", d.relu, lambda r: np.sign(r.normal(size=5)) * r.uniform(0.01, 2, 5)),
    ("safe_sqrt", d.safe_sqrt, lambda r: r.uniform(0.2, 3.0, 5)),
    ("neg", d.neg, lambda r: r.normal(size=5)),
    ("smoothed_relu", lambda x: d.smoothed_relu(x, d=0.3), lambda r: r.uniform(-1, 1, 5)),
    ("smoothed_relu_grad", lambda x: d.smoothed_relu_grad(x, d=0.3), lambda r: r.uniform(-1, 1, 5)),
    ("sinc_sqrt", d.sinc_sqrt, lambda r: r.uniform(0, 9, 5)),
    ("sinc_sqrt_small", d.sinc_sqrt, lambda r: r.uniform(0, 0.9, 5)),
    ("sinhc_sqrt", d.sinhc_sqrt, lambda r: r.uniform(0, 9, 5)),
    ("cos_sqrt", d.cos_sqrt, lambda r: r.uniform(0.01, 9, 5)),
    ("cosh_sqrt", d.cosh_sqrt, lambda r: r.uniform(0.01, 9, 5)),
    ("atanhc_sq", d.atanhc_sq, lambda r: r.uniform(0, 0.9, 5)),
    ("atanhc_sq_small", d.atanhc_sq, lambda r: r.uniform(0, 0.09, 5)),
    ("theta_over_sin", d.theta_over_sin, lambda r: r.uniform(-2.8, 2.8, 5)),
    ("theta_over_sin_small", d.theta_over_sin, lambda r: r.uniform(-0.09, 0.09, 5)),
    ("cotc_sq", d.cotc_sq, lambda r: r.uniform(0, 8.5, 5)),
    ("tos_sqrt", d.tos_sqrt, lambda r: r.uniform(0, 8.5, 5)),
    ("coshm_sq", d.coshm_sq, lambda r: r.uniform(0, 9, 5)),
]


@pytest.mark.parametrize("name,fn,sample", UNARY, ids=[u[0] for u in UNARY])
def test_unary_primitive_gradients(name, fn, sample):
    for seed in SEEDS:
        r = np.random.default_rng(seed)
        w = r.normal(size=5)
        check_grad(lambda x: d.sum(fn(x) * w), sample(r))


SECOND = [
    ("sinc_sqrt", d.sinc_sqrt, lambda r: r.uniform(0, 9, 5)),
    ("sinhc_sqrt", d.sinhc_sqrt, lambda r: r.uniform(0, 9, 5)),
    ("atanhc_sq", d.atanhc_sq, lambda r: r.uniform(0, 0.9, 5)),
    ("theta_over_sin", d.theta_over_sin, lambda r: r.uniform(-2.8, 2.8, 5)),
    ("softplus", d.softplus, lambda r: r.normal(size=5)),
    ("smoothed_relu", lambda x: d.smoothed_relu(x, d=0.3), lambda r: r.uniform(-1, 1, 5)),
]


@pytest.mark.parametrize("name,fn,sample", SECOND, ids=[s[0] for s in SECOND])
def test_second_derivatives(name, fn, sample):
    for seed in range(20):
        r = np.random.default_rng(seed)
        w = r.normal(size=5)

        def first(x):
            xv = x if isinstance(x, Var) else Var(x)
            return d.sum(grad(d.sum(fn(xv) * w), xv, create_graph=True) * w)

        check_grad(first, sample(r))


def test_binary_and_structural_gradients():
    for seed in SEEDS:
        r = np.random.default_rng(seed)
        a = r.normal(size=(3, 4))
        b = r.uniform(0.5, 2.0, size=(3, 4))
        w = r.normal(size=(4, 2))
        v = r.normal(size=4)
        cond = r.random((3, 4)) > 0.5
        check_grad(lambda x: d.sum(d.add(x, b) * d.sub(b, x) + d.div(x, b) * d.mul(x, x)), a)
        check_grad(lambda x: d.sum(d.div(a, x)), b)
        check_grad(lambda x: d.sum(d.matmul(x, w) ** 2), a)
        check_grad(lambda x: d.sum(d.sin(d.matmul(a, x))), w)
        check_grad(lambda x: d.sum(d.matmul(x, v) ** 2), a)
        check_grad(lambda x: d.matmul(x, x), v)
        check_grad(lambda x: d.sum(d.atan2(x, b)), a)
        check_grad(lambda x: d.sum(d.norm(x) * d.sum(x, axis=-1)), a)
        check_grad(lambda x: d.sum(d.reshape(x, (4, 3)) @ a), a)
        check_grad(lambda x: d.sum(d.getitem(x, (slice(None), [0, 2, 2])) ** 2), a)
        check_grad(lambda x: d.sum(d.concat([x, x * 2.0], axis=0) ** 2), a)
        check_grad(lambda x: d.sum(d.where(x * x, d.sin(x), cond=cond)), a)
        check_grad(lambda x: d.sum(d.broadcast_to(d.sum(x, axis=0), (5, 4)) * 1.5), a)
        check_grad(lambda x: d.sum(d.swapaxes(x) @ a), a)


def test_forward_examples():
    val, tape, leaves = forward(lambda x: x * x, 3.0)
    assert val == 9.0
    assert backward(tape)[0] == 6.0
    val, _, _ = forward(lambda u: d.matmul(u, u), [1.0, 2.0, 2.0])
    assert val == 9.0


def test_mlp_forward_matches_hand_rolled():
    r = np.random.default_rng(0)
    w1, b1, w2 = r.normal(size=(3, 5)), r.normal(size=5), r.normal(size=(5, 2))
    x = r.normal(size=(7, 3))
    got, _, _ = forward(lambda z: d.softplus(z @ w1 + b1) @ w2, x)
    want = np.log1p(np.exp(x @ w1 + b1)) @ w2
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_grad_of_wx_squared():
    r = np.random.default_rng(3)
    w, x = r.normal(size=(3, 4)), r.normal(size=4)
    wv = Var(w)
    g = grad(d.sum((wv @ x) ** 2), wv)
    np.testing.assert_allclose(g, 2.0 * np.outer(w @ x, x), rtol=1e-13)
    check_grad(lambda m: d.sum((m @ x) ** 2), w)


def test_sphere_distance_after_exp_gradient():
    s3 = UnitQuaternion()
    for seed in SEEDS:
        r = np.random.default_rng(seed)
        x, y = s3.random_point(r), s3.random_point(r)
        u = np.asarray(s3.random_tangent(r, x, 0.7))
        uv = Var(u)
        g = np.asarray(grad(s3.dist2(s3.exp(x, uv), y), uv))
        for _ in range(3):
            w = np.asarray(s3.random_tangent(r, x))
            h = 1e-4
            fd = (float(s3.dist2(s3.exp(x, u + h * w), y)) - float(s3.dist2(s3.exp(x, u - h * w), y))) / (2 * h)
            assert abs(g @ w - fd) / max(1.0, abs(g @ w)) <= 1e-5


def test_backward_needs_scalar_root():
    x = Var(np.ones(3))
    with pytest.raises(ValueError):
        Tape(x * 2.0).backward()


def test_tape_reuse_and_determinism():
    r = np.random.default_rng(7)
    a = r.normal(size=(4, 4))

    def build():
        x = Var(a)
        return x, d.sum(d.softplus(x @ x) * d.sin(x))

    x, root = build()
    tape = Tape(root)
    g1 = tape.backward([x])[0]
    g2 = tape.backward([x])[0]
    assert np.array_equal(g1, g2)
    x2, root2 = build()
    assert np.array_equal(value(root), value(root2))
    assert np.array_equal(Tape(root2).backward([x2])[0], g1)


def test_unused_leaf_gets_zero():
    x, y = Var(np.ones(2)), Var(np.ones(3))
    gx, gy = grad(d.sum(x * 3.0), [x, y])
    assert np.array_equal(gx, [3.0, 3.0]) and np.array_equal(gy, np.zeros(3))


# -- AdamW ---------------------------------------------------------------------


def _store(val):
    s = ParamStore()
    s.add("p", np.array([val]))
    return s


def test_adamw_zero_gradient_no_decay():
    s = _store(1.5)
    for _ in range(5):
        adamw_step(s, {"p": np.zeros(1)}, lr=0.1)
    assert s["p"][0] == 1.5
    assert s.step == 5


def test_adamw_scalar_oracle():
    lr, wd, b1, b2, eps, g = 0.01, 0.02, 0.9, 0.999, 1e-8, 0.37
    s = _store(2.0)
    p, m, v = 2.0, 0.0, 0.0
    for k in range(1, 26):
        adamw_step(s, {"p": np.array([g])}, lr, wd, b1, b2, eps)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p * (1 - lr * wd) - lr * (m / (1 - b1**k)) / (math.sqrt(v / (1 - b2**k)) + eps)
        assert s["p"][0] == pytest.approx(p, rel=1e-14)


def test_adamw_decay_only():
    s = _store(3.0)
    for k in range(1, 11):
        adamw_step(s, {"p": np.zeros(1)}, lr=0.1, weight_decay=0.5)
        assert s["p"][0] == pytest.approx(3.0 * 0.95**k, rel=1e-14)


def test_adamw_deterministic_and_shape_checked():
    a, b = _store(1.0), _store(1.0)
    for _ in range(3):
        adamw_step(a, {"p": np.array([0.3])}, 0.01)
        adamw_step(b, {"p": np.array([0.3])}, 0.01)
    assert np.array_equal(a["p"], b["p"])
    with pytest.raises(ValueError):
        adamw_step(a, {"p": np.zeros(2)}, 0.01)
