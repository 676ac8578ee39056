import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from guess_guide.errors import AllocationError
from guess_guide.schedule import (
    STRATEGIES,
    NoiseSchedule,
    WeightStrategy,
    allocate_grid,
    build_grid,
    cumulative_decrements,
    eval_schedule,
    schedule_weights,
)
from oracles import integer_allocation


def test_linear_boundary_and_interior():
    s = NoiseSchedule("linear")
    assert eval_schedule(s, 0) == (1.0, 0.0)
    assert eval_schedule(s, 250) == (0.75, 0.25)
    assert eval_schedule(s, 1000) == (0.0, 1.0)


def test_trig_vp_midpoint():
    a, s = eval_schedule(NoiseSchedule("trig_vp"), 500)
    assert a == pytest.approx(0.70711, abs=1e-5)
    assert s == pytest.approx(0.70711, abs=1e-5)
    assert a * a + s * s == pytest.approx(1.0, abs=1e-15)


def test_trig_vp_endpoints_are_exact():
    s = NoiseSchedule("trig_vp")
    assert s(0) == (1.0, 0.0)
    assert s(1000) == (0.0, 1.0)


@pytest.mark.parametrize("kind", ["linear", "trig_vp"])
def test_schedule_monotone(kind):
    s = NoiseSchedule(kind)
    pts = np.array([s(i) for i in range(1001)])
    assert np.all(np.diff(pts[:, 0]) < 0)
    assert np.all(np.diff(pts[:, 1]) > 0)


@pytest.mark.parametrize("idx", [-1, 1001])
def test_out_of_range(idx):
    with pytest.raises(IndexError):
        eval_schedule(NoiseSchedule(), idx)


def test_non_integer_index():
    with pytest.raises(TypeError):
        eval_schedule(NoiseSchedule(), 2.5)


def test_index_of():
    assert NoiseSchedule().index_of(0.5) == 500
    assert NoiseSchedule(T_max=10).index_of(0.26) == 3
    with pytest.raises(ValueError):
        NoiseSchedule().index_of(1.5)


def test_bad_schedule_kind():
    with pytest.raises(ValueError):
        NoiseSchedule("cosine")


def test_weight_tables():
    assert schedule_weights(WeightStrategy("uniform"), 4).tolist() == [1, 1, 1, 1]
    assert schedule_weights(WeightStrategy("linear"), 3).tolist() == [2, 3, 4]
    assert schedule_weights(WeightStrategy("polynomial", p=2), 3).tolist() == [4, 9, 16]
    assert schedule_weights(WeightStrategy("exponential", k=2), 3).tolist() == [2, 4, 8]


def test_gaussian_weights_formula():
    w = schedule_weights(WeightStrategy("gaussian", mu=0.3, sigma=0.2), 5)
    want = [math.exp(-((i / 5 - 0.3) ** 2) / (2 * 0.04)) for i in range(1, 6)]
    np.testing.assert_allclose(w, want, rtol=1e-15)


def test_beta_weights_are_reciprocal_density_at_midpoints():
    from scipy.stats import beta

    w = schedule_weights(WeightStrategy("beta", a=0.5, b=0.5), 4)
    mids = (np.arange(1, 5) - 0.5) / 4
    np.testing.assert_allclose(w, 1 / beta.pdf(mids, 0.5, 0.5), rtol=1e-14)
    assert np.all(np.isfinite(w))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind="polynomial", p=1.0),
        dict(kind="exponential", k=0.9),
        dict(kind="gaussian", mu=1.5),
        dict(kind="gaussian", sigma=0.0),
        dict(kind="beta", a=0.0),
        dict(kind="spline"),
    ],
)
def test_invalid_strategy_parameters(kwargs):
    with pytest.raises(ValueError):
        WeightStrategy(**kwargs)


def test_schedule_weights_needs_M():
    with pytest.raises(ValueError):
        schedule_weights(WeightStrategy("uniform"), 0)


def test_uniform_allocation_example():
    g = allocate_grid([1, 1, 1, 1], 100)
    assert g.deltas == (24, 25, 25, 25)
    assert g.steps == (25, 50, 75, 100)
    assert g.M == 4 and g.t_start == 100


def test_single_weight():
    g = allocate_grid([1.0], 10)
    assert g.deltas == (9,)
    assert g.steps == (10,)


def test_gaussian_allocation_matches_integer_oracle():
    g = build_grid(WeightStrategy("gaussian", mu=0.5, sigma=10), 30, 440)
    w = schedule_weights(WeightStrategy("gaussian", mu=0.5, sigma=10), 30)
    deltas, steps = integer_allocation(w, 440)
    assert sum(g.deltas) == 439
    assert list(g.deltas) == deltas
    assert list(g.steps) == steps


def test_too_small_T_start():
    with pytest.raises(AllocationError):
        allocate_grid([1, 1, 1], 3)


def test_degenerate_allocation_names_index():
    # the first two weights are tiny, so the second position gets no decrement
    with pytest.raises(AllocationError) as info:
        allocate_grid([1e-9, 1e-9, 1.0], 10)
    assert info.value.index == 1
    assert "t_1" in str(info.value)


def test_uniform_deltas_differ_by_at_most_one():
    for M in range(1, 30):
        for T in (M + 1, 97, 500, 1000):
            if T < M + 1:
                continue
            d = build_grid(WeightStrategy("uniform"), M, T).deltas
            assert max(d) - min(d) <= 1


@pytest.mark.parametrize("mu", [0.0, 0.21, 0.5, 0.77, 1.0])
def test_gaussian_argmax(mu):
    M = 17
    w = schedule_weights(WeightStrategy("gaussian", mu=mu, sigma=0.15), M)
    i = np.arange(1, M + 1)
    assert np.argmax(w) == np.argmin(np.abs(i / M - mu))
    assert np.argmax(3.7 * w) == np.argmax(w)


strategy_st = st.sampled_from(STRATEGIES).map(lambda k: WeightStrategy(k))


@settings(max_examples=200, deadline=None)
@given(strategy=strategy_st, M=st.integers(1, 40), data=st.data())
def test_telescoping_and_monotone(strategy, M, data):
    T = data.draw(st.integers(M + 1, 1000))
    w = schedule_weights(strategy, M)
    deltas = cumulative_decrements(w, T)
    assert sum(deltas) == T - 1
    assert deltas == integer_allocation(w, T)[0]
    try:
        g = allocate_grid(w, T)
    except AllocationError as err:
        assert 1 <= err.index < M and deltas[err.index] == 0
        return
    assert g.steps[0] >= 1
    assert all(a < b for a, b in zip(g.steps, g.steps[1:]))
    assert g.t_start == T
    for k in range(M):
        assert g.steps[k] == T - sum(g.deltas[k + 1:])
