import numpy as np
import pytest

from guess_guide.dcopt import OptimizeSpec, lambda_at, objective, optimize, prox_data
from guess_guide.errors import DegenerateScheduleError, DivergenceError, UnsupportedSolverError
from guess_guide.operators import Chain, CircularBlur, ClipScale, Decimate, DenseLinear, ForwardTask, Mask
from guess_guide.schedule import NoiseSchedule
from oracles import central_difference_grad, rel_err


def _task(op, rng, sigma_y=0.5):
    return ForwardTask(op, sigma_y, rng.standard_normal(op.out_dim))


def test_equal_weight_average():
    task = ForwardTask(DenseLinear([[1.0]]), 1.0, [3.0])
    spec = OptimizeSpec(lam=1.0, solver="closed_form")
    assert optimize(task, np.array([1.0]), np.array([0.0]), spec)[0] == pytest.approx(2.0, abs=1e-14)


def test_gd_converges_monotonically_to_y():
    task = ForwardTask(DenseLinear(np.eye(3)), 0.5, [1.0, -2.0, 0.5])
    x = np.zeros(3)
    dist = [np.linalg.norm(x - task.y)]
    for _ in range(30):
        # lr < 2 sigma_y^2
        x = optimize(task, None, x, OptimizeSpec(iterations=1, learning_rate=0.4))
        dist.append(np.linalg.norm(x - task.y))
    assert all(b < a for a, b in zip(dist, dist[1:]))
    assert dist[-1] < 1e-6


def test_gd_agrees_with_closed_form_8x12():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((8, 12))
    task = ForwardTask(DenseLinear(A), 0.5, rng.standard_normal(8))
    anchor = rng.standard_normal(12)
    # step about 1 / L of the objective's curvature
    lr = 1.0 / (np.linalg.norm(A, 2) ** 2 / task.sigma_y**2 + 0.3)
    gd = optimize(task, anchor, anchor, OptimizeSpec(iterations=5000, learning_rate=lr, lam=0.3))
    cf = optimize(task, anchor, anchor, OptimizeSpec(lam=0.3, solver="closed_form"))
    assert rel_err(gd, cf) <= 1e-6


def test_closed_form_is_stationary():
    rng = np.random.default_rng(1)
    task = _task(CircularBlur([0.25, 0.5, 0.25], 10), rng)
    anchor = rng.standard_normal(10)
    spec = OptimizeSpec(lam=0.7, solver="closed_form")
    x = optimize(task, anchor, anchor, spec)
    g = central_difference_grad(lambda z: float(objective(task, z, anchor, spec)), x)
    assert np.max(np.abs(g)) <= 1e-6


def test_unweighted_objective():
    task = ForwardTask(DenseLinear([[1.0]]), 0.1, [3.0])
    spec = OptimizeSpec(lam=1.0, solver="closed_form", absorb_sigma_y=False)
    # argmin (3 - x)^2 + (x - 1)^2 = 2
    assert optimize(task, np.array([1.0]), np.array([0.0]), spec)[0] == pytest.approx(2.0)


def test_momentum_reaches_same_point():
    rng = np.random.default_rng(2)
    task = _task(DenseLinear(rng.standard_normal((4, 4))), rng)
    a = rng.standard_normal(4)
    lr = 0.5 / (np.linalg.norm(task.operator.A, 2) ** 2 / 0.25 + 1.0)
    heavy = optimize(task, a, a, OptimizeSpec(iterations=3000, learning_rate=lr, lam=1.0, momentum=0.5))
    cf = optimize(task, a, a, OptimizeSpec(lam=1.0, solver="closed_form"))
    assert rel_err(heavy, cf) <= 1e-8


def test_zero_lambda_closed_form_is_gd_limit():
    rng = np.random.default_rng(3)
    op = Mask([0, 2, 3], 5)
    task = _task(op, rng)
    init = rng.standard_normal(5)
    cf = optimize(task, None, init, OptimizeSpec(solver="closed_form"))
    gd = optimize(task, None, init, OptimizeSpec(iterations=200, learning_rate=0.1))
    np.testing.assert_allclose(cf, gd, atol=1e-10)
    # unobserved coordinates keep their initial values
    np.testing.assert_array_equal(cf[[1, 4]], init[[1, 4]])


def test_batched_optimize_matches_rows():
    rng = np.random.default_rng(4)
    task = _task(Decimate(2, 8), rng)
    X = rng.standard_normal((5, 8))
    spec = OptimizeSpec(iterations=20, learning_rate=0.05, lam=0.2)
    batched = optimize(task, X, X, spec)
    rows = np.stack([optimize(task, x, x, spec) for x in X])
    np.testing.assert_allclose(batched, rows, rtol=1e-14)


def test_deterministic():
    rng = np.random.default_rng(5)
    task = _task(ClipScale(1.2, -1, 1, 6), rng)
    x = rng.standard_normal(6)
    spec = OptimizeSpec(iterations=40, learning_rate=0.01)
    np.testing.assert_array_equal(optimize(task, x, x, spec), optimize(task, x, x, spec))


def test_closed_form_rejects_nonlinear():
    task = ForwardTask(ClipScale(1.0, 0.0, 1.0, 2), 0.1, [0.5, 0.5])
    with pytest.raises(UnsupportedSolverError):
        optimize(task, None, np.zeros(2), OptimizeSpec(solver="closed_form"))


def test_divergence_is_detected():
    task = ForwardTask(DenseLinear(np.eye(2)), 0.1, [1.0, 1.0])
    with pytest.raises(DivergenceError) as info:
        optimize(task, None, np.zeros(2), OptimizeSpec(iterations=100, learning_rate=1.0))
    assert info.value.iteration is not None


@pytest.mark.parametrize(
    "kwargs",
    [dict(iterations=-1), dict(learning_rate=0.0), dict(lam=-1.0), dict(solver="lbfgs"), dict(lambda_mode="x"), dict(momentum=1.0)],
)
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        OptimizeSpec(**kwargs)


def test_prox_heavy_anchor():
    rng = np.random.default_rng(6)
    task = _task(DenseLinear(rng.standard_normal((3, 5))), rng)
    v = rng.standard_normal(5)
    np.testing.assert_allclose(prox_data(task, v, 1e9), v, atol=1e-7)


def test_prox_identity_closed_form():
    y, v, sigma_y, lam = np.array([1.0, 2.0]), np.array([-1.0, 0.5]), 0.5, 3.0
    task = ForwardTask(DenseLinear(np.eye(2)), sigma_y, y)
    want = (y / sigma_y**2 + lam * v) / (1 / sigma_y**2 + lam)
    np.testing.assert_allclose(prox_data(task, v, lam), want, rtol=1e-14)


def test_prox_nonexpansive_pairs():
    rng = np.random.default_rng(7)
    task = _task(Chain([CircularBlur([0.2, 0.6, 0.2], 9), Mask([0, 3, 5, 8], 9)]), rng)
    for _ in range(100):
        v, w = 3 * rng.standard_normal((2, 9))
        assert np.linalg.norm(prox_data(task, v, 0.4) - prox_data(task, w, 0.4)) <= np.linalg.norm(v - w) + 1e-9


def test_prox_nonlinear_is_stationary():
    rng = np.random.default_rng(8)
    op = ClipScale(1.5, -1.0, 1.0, 4)
    task = ForwardTask(op, 0.5, [0.2, -0.3, 0.9, 0.0])
    v = 0.2 * rng.standard_normal(4)
    x = prox_data(task, v, 2.0)
    spec = OptimizeSpec(lam=2.0)
    g = central_difference_grad(lambda z: float(objective(task, z, v, spec)), x)
    assert np.max(np.abs(g)) <= 1e-6


def test_prox_requires_positive_lambda():
    task = ForwardTask(DenseLinear([[1.0]]), 1.0, [0.0])
    with pytest.raises(ValueError):
        prox_data(task, np.zeros(1), 0.0)


def test_lambda_at():
    assert lambda_at((0.3, 0.7), "constant", 0.0) == 0.0
    assert lambda_at((0.6, 0.8), "snr_scaled", 1.0) == pytest.approx(0.5625)
    with pytest.raises(DegenerateScheduleError):
        lambda_at((1.0, 0.0), "snr_scaled", 1.0)


def test_snr_lambda_increases_towards_clean():
    s = NoiseSchedule("linear")
    lams = [lambda_at(s(i), "snr_scaled", 1.0) for i in range(1, 1001)]
    assert all(a > b for a, b in zip(lams, lams[1:]))
