import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blochdamp.analysis import (
    FitResult,
    autocorrelation_prediction,
    burst_times,
    classical_mean_velocity,
    classical_velocity_exact,
    compare_cycle_maxima,
    envelope_maxima,
    fit_depletion,
    fit_diffusion,
    fit_envelope_decay,
    fit_exponential_decay,
    green_kubo_diffusion,
    oscillation_timing,
    simulate_classical,
    velocity_autocorrelation,
)
from blochdamp.lindblad import diffusion_coefficient
from blochdamp.tight_binding import TBParams

FIG1 = TBParams(force=-0.1, gamma=0.05)


class TestExponentialFit:
    def test_exact(self):
        t = np.linspace(0, 300, 100)
        fit = fit_exponential_decay(t, np.exp(-0.01 * t))
        assert abs(fit.estimate - 0.01) < 1e-6
        assert fit.n_points == 100

    def test_constant(self):
        t = np.linspace(0, 10, 20)
        assert fit_exponential_decay(t, np.full(20, 0.7)).estimate == pytest.approx(0.0, abs=1e-14)

    def test_window(self):
        t = np.linspace(0, 100, 101)
        y = np.where(t < 50, np.exp(-0.2 * t), np.exp(-10 - 0.03 * (t - 50)))
        assert fit_exponential_decay(t, y, (60, 100)).estimate == pytest.approx(0.03)

    @given(st.floats(1e-4, 0.5), st.floats(0.1, 10))
    @settings(max_examples=30)
    def test_rate_recovered(self, rate, amp):
        t = np.linspace(0, 5 / rate, 40)
        assert fit_exponential_decay(t, amp * np.exp(-rate * t)).estimate == pytest.approx(rate, rel=1e-8)

    def test_weighted_error(self):
        rng = np.random.default_rng(1)
        t = np.linspace(0, 50, 60)
        sig = 0.01 * np.exp(-0.05 * t)
        fits = [fit_exponential_decay(t, np.exp(-0.05 * t) + sig * rng.standard_normal(60), sigma=sig)
                for _ in range(300)]
        est = np.array([f.estimate for f in fits])
        assert est.std() == pytest.approx(np.mean([f.stderr for f in fits]), rel=0.15)

    @pytest.mark.parametrize("y", [[1, 2, 3], [1, 0, 1, 1], [1, -1, 1, 1]])
    def test_rejects(self, y):
        with pytest.raises(ValueError):
            fit_exponential_decay(np.arange(len(y)), np.array(y, float))


class TestDiffusionFit:
    def test_exact_line(self):
        t = np.linspace(0, 200, 201)
        fit = fit_diffusion(t, 4.877 * t + 3.0, gamma=0.05)
        assert fit.estimate == pytest.approx(4.877)
        assert fit.window[0] == pytest.approx(60.0)

    @pytest.mark.parametrize("window", [(10, 200), (60, 80)])
    def test_rejects_short_or_early_window(self, window):
        t = np.linspace(0, 200, 201)
        with pytest.raises(ValueError):
            fit_diffusion(t, t, 0.05, window)

    def test_needs_noise(self):
        with pytest.raises(ValueError):
            fit_diffusion(np.arange(10.0), np.arange(10.0), 0.0)


def test_depletion_window():
    t = np.linspace(0, 1000, 501)
    P = np.where(t < 100, 1.0, np.exp(-2.5e-4 * (t - 100)))
    fit = fit_depletion(t, P, 80.0)
    assert fit.window == (160.0, 800.0)
    assert fit.estimate == pytest.approx(2.5e-4, rel=1e-9)


class TestEnvelope:
    def test_damped_sine(self):
        t = np.linspace(0, 120, 4801)
        v = -math.pi * np.exp(-0.05 * t) * np.sin(0.1 * math.pi * t)
        idx = envelope_maxima(t, v, 10.0)
        assert len(idx) == 12
        fit = fit_envelope_decay(t, v, 20.0)
        assert fit.estimate == pytest.approx(0.05, rel=2e-3)

    def test_compare_cycle_maxima(self):
        t = np.linspace(0, 80, 801)
        a = np.sin(0.1 * math.pi * t)
        b = 0.5 * np.sin(0.1 * math.pi * t + 0.1)
        out = compare_cycle_maxima(t, a, np.full_like(t, 0.01), b, 10.0, t_min=20)
        assert len(out["t"]) == 6
        np.testing.assert_allclose(out["value"], 1.0, atol=1e-3)
        np.testing.assert_allclose(out["ref"], 0.5, atol=1e-3)


class TestTiming:
    def test_sine_is_symmetric(self):
        t = np.linspace(0, 400, 8001)
        timing = oscillation_timing(t, np.sin(2 * math.pi * t / 80))
        assert timing.period == pytest.approx(80.0, abs=0.05)
        assert timing.asymmetry < 0.01

    def test_sawtooth(self):
        t = np.linspace(0, 400, 8001)
        phase = (t / 80) % 1
        # slow rise (75% of the cycle) then fast fall
        v = np.where(phase < 0.75, phase / 0.75, (1 - phase) / 0.25)
        timing = oscillation_timing(t, v, min_separation=40)
        assert timing.asymmetry == pytest.approx(0.5, abs=0.01)

    def test_needs_two_maxima(self):
        with pytest.raises(ValueError):
            oscillation_timing(np.linspace(0, 1, 50), np.sin(np.linspace(0, 3, 50)))

    def test_bursts(self):
        t = np.linspace(0, 400, 4001)
        flux = sum(np.exp(-((t - c) ** 2) / 4) for c in (66, 146, 226, 306, 386)) + 1e-3
        np.testing.assert_allclose(burst_times(t, flux), [66, 146, 226, 306, 386])


class TestClassical:
    def test_mean_velocity_at_rest(self):
        assert classical_mean_velocity(np.zeros(10), FIG1) == 0.0

    def test_envelope(self):
        run = simulate_classical(FIG1, 100_000, 60.0, 0.025, seed=1, record_every=40)
        exact = classical_velocity_exact(FIG1, run.t)
        assert np.all(np.abs(run.v - exact) < 4 * run.v_err + 1e-12)
        # amplitude pi: the first maximum sits near t = T_B / 4
        assert np.abs(run.v).max() == pytest.approx(math.pi * math.exp(-0.05 * 5), rel=0.02)

    def test_strong_noise_kills_velocity(self):
        p = TBParams(force=-0.1, gamma=20.0)
        run = simulate_classical(p, 20_000, 1.0, 0.0025, seed=2, record_every=100)
        assert np.all(np.abs(run.v[1:]) < 4 * run.v_err[1:] + 1e-3)

    def test_initial_spread(self):
        run = simulate_classical(FIG1, 50_000, 20.0, 0.025, seed=3, p_std=0.1, record_every=40)
        exact = classical_velocity_exact(FIG1, run.t, p_std=0.1)
        assert np.all(np.abs(run.v - exact) < 4 * run.v_err + 1e-12)

    def test_guard(self):
        with pytest.raises(ValueError):
            simulate_classical(TBParams(force=-0.1, gamma=5.0), 10, 1.0, 0.02)

    def test_autocorrelation_and_green_kubo(self):
        p = TBParams(force=0.1, gamma=0.05)
        dt = 0.1
        run = simulate_classical(p, 4000, 300.0, dt, seed=4, keep_samples=True)
        start = 1000  # t = 100 = 5/gamma: stationary
        tau, R, R_err = velocity_autocorrelation(run.v_samples, dt, 1500, start=start)
        assert R[0] == pytest.approx(p.v0**2 / 2, rel=0.03)
        pred = autocorrelation_prediction(p, tau)
        assert np.abs(R - pred).max() < 5 * R_err.max()
        assert abs(R[-1]) < 0.05 * R[0]
        d = green_kubo_diffusion(tau, pred)
        assert d == pytest.approx(diffusion_coefficient(p.v0**2 / 2, p.gamma, p.bloch_frequency), rel=1e-3)

    def test_autocorrelation_input_checks(self):
        with pytest.raises(ValueError):
            velocity_autocorrelation(np.zeros((3, 10)), 0.1, 10)
        with pytest.raises(ValueError):
            velocity_autocorrelation(np.zeros((1, 10)), 0.1, 2)


def test_fit_result_validation():
    with pytest.raises(ValueError):
        FitResult(1.0, -1.0, (0, 1), 0.0, 3)
    assert FitResult(1.0, 0.1, (0, 1), 0.0, 3).as_dict()["window"] == [0, 1]
