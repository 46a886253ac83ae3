import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slicebridge.schedule import ScheduleParams, build_schedule, posterior_mean, subsequence
from slicebridge.verify import scalar_bayes_posterior


@pytest.fixture(scope="module")
def table():
    return build_schedule(ScheduleParams(T=1000, s=1.0))


def test_params_validation():
    with pytest.raises(ValueError):
        ScheduleParams(T=1)
    with pytest.raises(ValueError):
        ScheduleParams(T=1000, s=0.0)
    with pytest.raises(ValueError):
        ScheduleParams(T=1000, s=-1.0)


def test_endpoints(table):
    assert table.m[0] == 0.0
    assert table.m[1000] == 1.0
    assert table.delta[0] == 0.0
    assert table.delta[1000] == 0.0


def test_midpoint_variance(table):
    # delta_t = 2s(m_t - m_t^2) at t=500: 2*1*(0.5 - 0.25)
    assert table.m[500] == 0.5
    assert table.delta[500] == pytest.approx(0.5, abs=1e-15)


def test_degenerate_posterior_first_step(table):
    assert table.tilde_delta[1] == 0.0


def test_m_strictly_increasing(table):
    assert np.all(np.diff(table.m) > 0)


def test_delta_positive_interior(table):
    assert np.all(table.delta[1:1000] > 0)
    assert np.all(table.delta_cond[1:1000] >= 0)


def test_all_finite(table):
    for arr in (table.m, table.delta, table.delta_cond, table.tilde_delta,
                table.c_x, table.c_y, table.c_eps):
        assert np.all(np.isfinite(arr))


def test_tilde_delta_identity(table):
    t = np.arange(2, 1000)
    expected = table.delta_cond[t] * table.delta[t - 1] / table.delta[t]
    np.testing.assert_allclose(table.tilde_delta[t], expected, rtol=1e-12)


def test_posterior_mean_constant_fixed_point(table):
    c = np.full((4, 4), 0.37)
    out = posterior_mean(table, 500, c, c, c)
    np.testing.assert_allclose(out, c, atol=1e-12)


def test_posterior_mean_frozen_scalar(table):
    # scalar instance x_t=0.7, x0_hat=0.2, y=0.9, t=500; value from the
    # conjugate-Bayes oracle, frozen
    out = posterior_mean(table, 500, np.float64(0.7), np.float64(0.2),
                         np.float64(0.9))
    assert out == pytest.approx(0.699, abs=1e-12)
    ref, _ = scalar_bayes_posterior(0.7, 0.2, 0.9, 500, 1000, 1.0)
    assert out == pytest.approx(ref, abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(t=st.integers(min_value=1, max_value=999),
       x_t=st.floats(-2, 2), x0=st.floats(-2, 2), y=st.floats(-2, 2))
def test_bayes_consistency_property(t, x_t, x0, y):
    table = build_schedule(ScheduleParams(T=1000, s=1.0))
    impl = float(posterior_mean(table, t, np.float64(x_t), np.float64(x0),
                                np.float64(y)))
    ref_mean, ref_var = scalar_bayes_posterior(x_t, x0, y, t, 1000, 1.0)
    assert impl == pytest.approx(ref_mean, rel=1e-10, abs=1e-10)
    assert table.tilde_delta[t] == pytest.approx(ref_var, rel=1e-10, abs=1e-12)


def test_posterior_mean_at_T_recovers_x0_hat(table):
    x_t, x0_hat, y = np.float64(0.9), np.float64(0.3), np.float64(0.9)
    # at t=T the deterministic path collapses onto the predicted x0
    assert posterior_mean(table, 1000, x_t, x0_hat, y) == pytest.approx(0.3)


def test_posterior_mean_shape_mismatch(table):
    with pytest.raises(ValueError, match="shape"):
        posterior_mean(table, 500, np.zeros((2, 2)), np.zeros((3, 2)),
                       np.zeros((2, 2)))


def test_posterior_mean_t_out_of_range(table):
    with pytest.raises(ValueError):
        posterior_mean(table, 0, np.zeros(2), np.zeros(2), np.zeros(2))


def test_subsequence_full_grid():
    assert subsequence(1000, 1000) == list(range(1000, -1, -1))


def test_subsequence_uniform_stride():
    seq = subsequence(1000, 100)
    assert seq[0] == 1000 and seq[-1] == 0
    assert seq == list(range(1000, -1, -10))


def test_subsequence_two_jumps():
    assert subsequence(10, 2) == [10, 5, 0]


def test_subsequence_invalid():
    with pytest.raises(ValueError):
        subsequence(10, 11)
    with pytest.raises(ValueError):
        subsequence(10, 0)


def test_monte_carlo_composition(table):
    # sample x_{t-1} from the marginal, push through the transition kernel,
    # compare moments against the closed-form marginal at t
    rng = np.random.default_rng(3)
    x0, y, t, n = 0.2, 0.9, 500, 100_000
    m_prev, m_t = table.m[t - 1], table.m[t]
    a = (1 - m_t) / (1 - m_prev)
    b = m_t - m_prev * a
    x_prev = ((1 - m_prev) * x0 + m_prev * y
              + np.sqrt(table.delta[t - 1]) * rng.standard_normal(n))
    x_t = a * x_prev + b * y + np.sqrt(table.delta_cond[t]) * rng.standard_normal(n)
    mean_true = (1 - m_t) * x0 + m_t * y
    assert abs(x_t.mean() - mean_true) / abs(mean_true) < 0.01
    assert abs(x_t.var() - table.delta[t]) / table.delta[t] < 0.02


def test_build_schedule_deterministic():
    a = build_schedule(ScheduleParams(T=50, s=2.0))
    b = build_schedule(ScheduleParams(T=50, s=2.0))
    np.testing.assert_array_equal(a.c_x, b.c_x)
    np.testing.assert_array_equal(a.delta_cond, b.delta_cond)
