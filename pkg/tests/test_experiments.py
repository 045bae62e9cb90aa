import math

import numpy as np
import pytest

from blochdamp.analysis import classical_velocity_exact
from blochdamp.config import ConfigError, ExperimentConfig
from blochdamp.experiments import (
    TABLE1_GAMMAS,
    TABLE1_REFERENCE,
    CheckResult,
    RunResult,
    check_preset,
    diffusion_reference,
    preset_configs,
    run_experiment,
    run_preset,
)
from blochdamp.lindblad import diffusion_coefficient
from blochdamp.tight_binding import TBParams

SMALL_GRID = {"z_min": "-16pi", "z_max": "16pi", "n_grid": 1024, "mask_width": "4pi", "window": "4pi"}


def _result(name, fits, series=None):
    return RunResult(ExperimentConfig(name, "bands"), series, {"fits": fits})


class TestRunners:
    def test_classical_matches_closed_form(self):
        cfg = ExperimentConfig("c", "classical", params={"force": -0.1, "gamma": 0.05},
                               run={"dt": 0.025, "t_total": 40.0, "n_traj": 20000, "seed": 1, "output_every": 40})
        res = run_experiment(cfg)
        exact = classical_velocity_exact(cfg.tb_params(), res.series.t)
        assert np.all(np.abs(res.series.v - exact) <= 4 * res.series.v_err + 1e-12)

    def test_lindblad_summary(self):
        cfg = ExperimentConfig("l", "lindblad", params={"force": -0.1, "gamma": 0.05, "n_sites": 41},
                               run={"dt": 0.025, "t_total": 40.0, "snapshot_every": 0.5},
                               initial={"width2": 16.0}, analysis={"decay": True})
        res = run_experiment(cfg)
        f = res.summary["fits"]
        assert f["profile_final"][0] == 1.0 and len(f["profile_final"]) == 8
        assert f["min_eigenvalue"] > -1e-8
        assert f["gamma_fit"]["estimate"] == pytest.approx(0.05, rel=0.1)
        np.testing.assert_allclose(res.series.P, 1.0, atol=1e-10)

    def test_continuum_damped_small(self):
        cfg = ExperimentConfig("c", "continuum", params={"U": 4.0, "force": 0.025, "gamma": 0.05, **SMALL_GRID},
                               run={"dt": 0.0625, "t_total": 40.0, "n_traj": 8, "seed": 2, "output_every": 16},
                               analysis={"tb_prediction": True})
        res = run_experiment(cfg)
        assert res.series.n_traj == 8
        assert "v_tb" in res.extra and "cycle_maxima" in res.summary["fits"]
        assert np.all(res.series.P <= 1 + 1e-9)

    def test_seeds_differ(self):
        base = dict(params={"force": -0.1, "gamma": 0.05, "n_sites": 31},
                    initial={"width2": 9.0})
        a = run_experiment(ExperimentConfig("a", "tight-binding", run={"dt": 0.025, "t_total": 5.0, "n_traj": 8,
                                                                       "seed": 1, "edge_sites": 0}, **base))
        b = run_experiment(ExperimentConfig("a", "tight-binding", run={"dt": 0.025, "t_total": 5.0, "n_traj": 8,
                                                                       "seed": 2, "edge_sites": 0}, **base))
        assert not np.array_equal(a.series.v, b.series.v)

    def test_short_coherent_run_skips_timing(self):
        cfg = ExperimentConfig("c", "continuum", params={"U": 1.0, "force": 0.025, **SMALL_GRID},
                               run={"dt": 0.0625, "t_total": 8.0, "output_every": 16},
                               analysis={"timing": True})
        res = run_experiment(cfg)
        assert res.summary["fits"]["timing"] is None
        res.summary["fits"]["emission"] = {"left": 0.0, "right": 0.0, "bursts": []}
        with pytest.raises(KeyError):
            check_preset("fig5", {"fig5": res})

    def test_preset_validates_all_before_running(self):
        bad = preset_configs("fig3") + [ExperimentConfig("x", "tight-binding", params={"n_sites": 1})]
        with pytest.raises(ConfigError):
            run_preset("fig3", configs=bad)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset_configs("fig9")


class TestChecks:
    def test_fig1_thresholds(self):
        ok = _result("fig1", {"gamma_fit": {"estimate": 0.058}, "v2_late": {"value": 4.9}})
        assert all(c.passed for c in check_preset("fig1", {"fig1": ok}))
        bad = _result("fig1", {"gamma_fit": {"estimate": 0.061}, "v2_late": {"value": 5.2}})
        assert [c.passed for c in check_preset("fig1", {"fig1": bad})] == [False, False]

    def test_fig2_reference(self):
        p = TBParams(force=0.1, gamma=0.05)
        assert diffusion_reference(0.1) == pytest.approx(
            diffusion_coefficient(p.v0**2 / 2, 0.05, p.bloch_frequency))

    def test_fig2_monotonicity(self):
        res = {f"fig2_F{f:g}": _result("x", {"D_fit": {"estimate": diffusion_reference(f)}})
               for f in (0.05, 0.1, 0.2)}
        assert all(c.passed for c in check_preset("fig2", res))
        res["fig2_F0.2"] = _result("x", {"D_fit": {"estimate": 1.1 * diffusion_reference(0.1)}})
        assert not check_preset("fig2", res)[-1].passed

    def test_table1(self):
        res = {}
        for U in (1.0, 4.0):
            for g in TABLE1_GAMMAS:
                v = TABLE1_REFERENCE[(U, g)] if g > 0 or U == 1.0 else 1e-7
                res[f"table1_U{U:g}_g{g:g}"] = _result("x", {"nu_fit": {"estimate": v}})
        checks = check_preset("table1", res)
        assert len(checks) == 10 and all(c.passed for c in checks)
        res["table1_U1_g0.01"] = _result("x", {"nu_fit": {"estimate": 7e-3}})
        names = {c.name for c in check_preset("table1", res) if not c.passed}
        assert names == {"nu(U=1, g=0.01)"}

    def test_table1_quick_checks_ordering_only(self):
        res = {f"table1-quick_U{U:g}_g{g:g}": _result("x", {"nu_fit": {"estimate": 10.0 * (i + 1)}})
               for U in (1.0, 4.0) for i, g in enumerate(TABLE1_GAMMAS)}
        checks = check_preset("table1-quick", res)
        assert len(checks) == 2 and all(c.passed for c in checks)

    def test_missing_fit_is_an_error(self):
        with pytest.raises(KeyError):
            check_preset("fig1", {"fig1": _result("fig1", {"gamma_fit": {"estimate": 0.05}})})

    def test_line_format(self):
        assert CheckResult("a", True, "b").line() == "[PASS] a: b"
        assert CheckResult("a", False, "b").line() == "[FAIL] a: b"

    def test_no_checks_for_unknown(self):
        assert check_preset("nothing", {}) == []


def test_fig2_reference_ordering():
    d = [diffusion_reference(f) for f in (0.05, 0.1, 0.2)]
    assert d[0] > d[1] > d[2]
    assert d[1] == pytest.approx(4.877, abs=1e-3)
    # high-force limit ~ 1/F^2
    assert diffusion_reference(1.0) * 1.0 == pytest.approx(
        diffusion_reference(2.0) * 4.0, rel=0.01)
    assert math.isfinite(diffusion_reference(0.01))
