import numpy as np
import numpy.testing as npt
import pytest

from geomflow.ode import (
    DegenerateOrder,
    IntegratorConfig,
    MaxStepsExceeded,
    ODESystem,
    PositivityLost,
    convergence_order,
    integrate_adaptive,
    integrate_fixed,
    log_sample_times,
    rk4_step,
)

DECAY = ODESystem(1, lambda t, y: -y)
GROWTH = ODESystem(1, lambda t, y: y)


class TestRK4Step:
    def test_zero_rhs(self):
        sys = ODESystem(2, lambda t, y: np.zeros(2))
        npt.assert_array_equal(rk4_step(sys, 0.0, np.array([3.0, -1.0]), 0.1),
                               [3.0, -1.0])

    def test_constant_rhs_exact(self):
        sys = ODESystem(1, lambda t, y: np.ones(1))
        npt.assert_allclose(rk4_step(sys, 0.0, np.array([2.0]), 0.25), [2.25])

    def test_exponential_one_step(self):
        out = rk4_step(GROWTH, 0.0, np.array([1.0]), 0.1)
        assert abs(out[0] - np.e**0.1) <= 1e-7

    def test_invalid_step(self):
        with pytest.raises(ValueError):
            rk4_step(GROWTH, 0.0, np.array([1.0]), -0.1)


class TestLogSampling:
    def test_endpoints(self):
        t = log_sample_times(0.0, 1e4, 32)
        assert t[0] == 0.0
        assert t[-1] == 1e4
        assert np.all(np.diff(t) > 0)

    def test_samples_per_decade(self):
        t = log_sample_times(0.0, 99.0, 10)
        assert len(t) == 21  # two decades in 1 + t


class TestAdaptive:
    def test_degenerate_interval(self):
        traj = integrate_adaptive(DECAY, 2.0, 2.0, [5.0])
        assert len(traj.times) == 1
        npt.assert_array_equal(traj.states, [[5.0]])

    def test_exponential_decay_endpoint(self):
        cfg = IntegratorConfig(rtol=1e-9, atol=1e-12)
        traj = integrate_adaptive(DECAY, 0.0, 10.0, [1.0], cfg)
        assert abs(traj.states[-1, 0] - np.exp(-10.0)) <= 1e-9

    def test_tolerance_tightening(self):
        # halving rtol must not grow the endpoint error by more than 2x
        errs = []
        for rtol in (1e-7, 5e-8):
            cfg = IntegratorConfig(rtol=rtol, atol=1e-14)
            traj = integrate_adaptive(DECAY, 0.0, 5.0, [1.0], cfg)
            errs.append(abs(traj.states[-1, 0] - np.exp(-5.0)))
        assert errs[1] <= 2.0 * errs[0] + 1e-15

    def test_deterministic(self):
        cfg = IntegratorConfig()
        a = integrate_adaptive(DECAY, 0.0, 3.0, [1.0], cfg)
        b = integrate_adaptive(DECAY, 0.0, 3.0, [1.0], cfg)
        npt.assert_array_equal(a.states, b.states)
        npt.assert_array_equal(a.times, b.times)

    def test_dense_output_accuracy(self):
        cfg = IntegratorConfig(rtol=1e-9, atol=1e-12, samples_per_decade=64)
        traj = integrate_adaptive(DECAY, 0.0, 20.0, [1.0], cfg)
        npt.assert_allclose(traj.states[:, 0], np.exp(-traj.times),
                            rtol=1e-7, atol=1e-12)

    def test_max_steps_reported(self):
        cfg = IntegratorConfig(max_steps=5)
        with pytest.raises(MaxStepsExceeded):
            integrate_adaptive(DECAY, 0.0, 1e6, [1.0], cfg)

    def test_positivity_guard(self):
        # y' = -1 crosses zero at t = 1; the flagged component must trigger
        sys = ODESystem(1, lambda t, y: -np.ones(1), positive_components=(0,))
        with pytest.raises(PositivityLost) as info:
            integrate_adaptive(sys, 0.0, 5.0, [1.0], IntegratorConfig(h_init=0.1))
        assert info.value.t <= 1.0 + 1e-6

    def test_config_validation(self):
        with pytest.raises(ValueError):
            IntegratorConfig(rtol=0.0)
        with pytest.raises(ValueError):
            IntegratorConfig(h_init=2.0, h_max=1.0)
        with pytest.raises(ValueError):
            IntegratorConfig(safety=1.5)


class TestConvergenceOrder:
    def test_exponential_order_four(self):
        slope = convergence_order(
            GROWTH, lambda t: np.array([np.exp(t)]), 1.0, [0.1, 0.05, 0.025, 0.0125]
        )
        assert 3.8 <= slope <= 4.2

    def test_degenerate_constant_rhs(self):
        sys = ODESystem(1, lambda t, y: np.full(1, 2.0))
        with pytest.raises(DegenerateOrder):
            convergence_order(sys, lambda t: np.array([2.0 * t]), 1.0,
                              [0.1, 0.05, 0.025])

    def test_needs_three_steps(self):
        with pytest.raises(ValueError):
            convergence_order(GROWTH, lambda t: np.array([np.exp(t)]), 1.0, [0.1, 0.05])


def test_integrate_fixed_lands_on_endpoint():
    out = integrate_fixed(DECAY, 0.0, 1.0, np.array([1.0]), 0.3)
    assert abs(out[0] - np.exp(-1.0)) <= 1e-4
