"""Experiment orchestration: run a config, write its files, check presets.

Each run writes ``<name>.csv`` (observable series) and ``<name>.json``
(fits and metadata) into the output directory, plus any requested dumps.
Outputs never contain wall-clock data, so a rerun with the same config and
seed reproduces every file byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
import os

import numpy as np

from . import __version__
from .analysis import (
    burst_times,
    compare_cycle_maxima,
    fit_depletion,
    fit_diffusion,
    fit_envelope_decay,
    oscillation_timing,
    simulate_classical,
)
from .config import ConfigError, ExperimentConfig
from .continuum import (
    ContinuumModel,
    band_spectrum,
    cosine_fit_residual,
    evolve_grid,
    prepare_ground_band_packet,
    tb_parameters_from_band,
    tb_velocity_prediction,
)
from .io import write_json, write_series_csv, write_table
from .lindblad import (
    evolve_master_equation,
    observables_from_rho,
    offdiagonal_mass_profile,
    predicted_nearest_coherence,
    pure_density_matrix,
    write_density_matrix,
)
from .stochastic import ObservableSeries, run_ensemble
from .tight_binding import TightBindingModel, gaussian_wannier_state

__all__ = [
    "RunResult",
    "CheckResult",
    "run_experiment",
    "PRESETS",
    "preset_configs",
    "run_preset",
    "check_preset",
]

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    config: ExperimentConfig
    series: ObservableSeries | None
    summary: dict
    extra: dict = field(default_factory=dict)
    files: list = field(default_factory=list)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _zeros_like(t):
    return np.zeros(len(t))


def _plain_series(t, P, v, z, disp, v2, norm, meta=None) -> ObservableSeries:
    zero = _zeros_like(t)
    return ObservableSeries(
        t=np.asarray(t, float), P=np.asarray(P, float), v=np.asarray(v, float),
        z=np.asarray(z, float), disp=np.asarray(disp, float), v2=np.asarray(v2, float),
        norm=np.asarray(norm, float), P_err=zero, v_err=zero, z_err=zero,
        disp_err=zero, v2_err=zero, norm_err=zero.copy(), n_traj=1, meta=meta or {},
    )


def _fit_dict(fit):
    return None if fit is None else fit.as_dict()


def _try(fn, label):
    try:
        return fn()
    except ValueError as exc:
        log.warning("%s fit skipped: %s", label, exc)
        return None


def _late_mean(t, y, y_err, span):
    sel = t >= t[-1] - span - 1e-9
    err = None if y_err is None else float(np.sqrt(np.mean(y_err[sel] ** 2)))
    return {"value": float(np.mean(y[sel])), "err": err, "window": [float(t[-1] - span), float(t[-1])]}


def _series_fits(cfg, series, bloch_period, gamma):
    """Decay, diffusion and late-time averages requested in ``cfg.analysis``."""
    an = cfg.analysis
    fits = {}
    t = series.t
    if an.get("decay") and bloch_period:
        t_min = float(an.get("decay_t_min", 0.0))
        err = series.v_err if np.any(series.v_err > 0) else None
        fits["gamma_fit"] = _fit_dict(_try(
            lambda: fit_envelope_decay(t, series.v, bloch_period, err, t_min=t_min), "decay"))
    if an.get("diffusion") and gamma > 0:
        win = an["diffusion"]
        window = None if win is True else tuple(win)
        fits["D_fit"] = _fit_dict(_try(lambda: fit_diffusion(t, series.disp, gamma, window), "diffusion"))
    if an.get("v2_late"):
        span = float(an["v2_late"]) if not isinstance(an["v2_late"], bool) else (bloch_period or t[-1] / 10)
        fits["v2_late"] = _late_mean(t, series.v2, series.v2_err, span)
    return fits


# -- model runners ------------------------------------------------------------


def _run_tight_binding(cfg: ExperimentConfig):
    params = cfg.tb_params()
    init = cfg.initial
    psi0 = gaussian_wannier_state(params, init.get("width2", 100.0), init.get("center", 0))
    model = TightBindingModel(params, psi0, edge_sites=cfg.run.get("edge_sites", 10))
    series = run_ensemble(cfg.sde_config(), model)
    tb = params.bloch_period if params.force else None
    return series, _series_fits(cfg, series, tb, params.gamma), {}


def _run_lindblad(cfg: ExperimentConfig, out_dir):
    params = cfg.tb_params()
    init = cfg.initial
    rho0 = pure_density_matrix(gaussian_wannier_state(params, init.get("width2", 100.0), init.get("center", 0)))
    run = cfg.run
    res = evolve_master_equation(rho0, params, run["t_total"], run["dt"],
                                 snapshot_every=run.get("snapshot_every"),
                                 check_positivity=run.get("check_positivity", True))
    obs = observables_from_rho(res.rho, params)
    trace = np.einsum("kii->k", res.rho).real
    series = _plain_series(res.t, trace, obs["v"], obs["z"], obs["disp"], obs["v2"], trace)
    tb = params.bloch_period if params.force else None
    fits = _series_fits(cfg, series, tb, params.gamma)
    rho_end = res.rho[-1]
    profile = offdiagonal_mass_profile(rho_end)
    fits["profile_final"] = (profile[:8] / profile[0]).tolist()
    fits["min_eigenvalue"] = float(np.nanmin(res.min_eigenvalue))
    frac = float(cfg.analysis.get("central_fraction", 0.2))
    fits["nearest_coherence"] = _coherence_agreement(rho_end, params, frac)
    files = []
    dumps = cfg.output.get("rho_times", []) if out_dir is not None else []
    for t_dump in dumps:
        path = os.path.join(out_dir, f"{cfg.name}_rho_t{t_dump:g}.txt")
        write_density_matrix(path, res.at(t_dump), float(res.t[np.argmin(abs(res.t - t_dump))]))
        files.append(path)
    extra = {"rho_final": rho_end, "profile_final": profile, "result": res}
    return series, fits, extra, files


def _coherence_agreement(rho, params, frac):
    """Relative L2 error of the quasi-stationary nearest coherence on central sites."""
    pops = np.diagonal(rho).real
    pred = predicted_nearest_coherence(rho, params)
    actual = np.diagonal(rho, -1)
    central = np.minimum(pops[1:], pops[:-1]) >= frac * pops.max()
    err = np.linalg.norm(actual[central] - pred[central]) / np.linalg.norm(actual[central])
    return {"relative_l2": float(err), "central_fraction": frac, "n_pairs": int(central.sum())}


def _run_continuum(cfg: ExperimentConfig, out_dir):
    params = cfg.continuum_params()
    sigma = float(cfg.initial.get("sigma", 2 * math.pi))
    sde = cfg.sde_config()
    tb_period = params.bloch_period if params.force else None
    files, extra = [], {}
    if params.gamma == 0:
        psi0 = prepare_ground_band_packet(params, sigma)
        every = sde.cadence(tb_period)
        snap = cfg.output.get("snapshots", False)
        run = evolve_grid(params, psi0, sde.t_total, sde.dt, record_every=every, keep_snapshots=bool(snap))
        series = _plain_series(run.t, run.P, run.v, run.z, run.disp, run.v2, run.norm)
        extra["absorbed_left"] = run.absorbed_left
        extra["absorbed_right"] = run.absorbed_right
        if snap and out_dir is not None:
            stride = max(1, int(snap)) if not isinstance(snap, bool) else 1
            cols = {"z": run.z_grid}
            for k in range(0, len(run.t), stride):
                cols[f"t={run.t[k]:g}"] = run.snapshots[k]
            path = os.path.join(out_dir, f"{cfg.name}_density.txt")
            write_table(path, cols, cfg.metadata())
            files.append(path)
    else:
        model = ContinuumModel(params, sigma=sigma)
        series = run_ensemble(sde, model)
    fits = _series_fits(cfg, series, tb_period, params.gamma)
    an = cfg.analysis
    if an.get("depletion") and tb_period:
        err = series.P_err if np.any(series.P_err > 0) else None
        fits["nu_fit"] = _fit_dict(_try(lambda: fit_depletion(series.t, series.P, tb_period, err), "depletion"))
    if an.get("timing") and tb_period:
        timing = _try(lambda: oscillation_timing(series.t, series.v, min_separation=0.5 * tb_period), "timing")
        fits["timing"] = None if timing is None else {
            "period": timing.period, "period_spread": timing.period_spread,
            "asymmetry": timing.asymmetry, "maxima": timing.maxima.tolist()}
    if "absorbed_left" in extra:
        left, right = extra["absorbed_left"], extra["absorbed_right"]
        bursts = burst_times(series.t, left)
        fits["emission"] = {"left": float(left.sum()), "right": float(right.sum()),
                            "bursts": bursts.tolist()}
    if an.get("tb_prediction") and tb_period:
        v_tb = tb_velocity_prediction(params, series.t, sigma)
        extra["v_tb"] = v_tb
        cmp = compare_cycle_maxima(series.t, series.v, series.v_err, v_tb, 0.5 * tb_period)
        fits["cycle_maxima"] = {k: v.tolist() for k, v in cmp.items()}
        if out_dir is not None:
            path = os.path.join(out_dir, f"{cfg.name}_tb_prediction.txt")
            write_table(path, {"t": series.t, "v_tb": v_tb}, cfg.metadata())
            files.append(path)
    return series, fits, extra, files


def _run_classical(cfg: ExperimentConfig):
    params = cfg.tb_params()
    sde = cfg.sde_config()
    tb = params.bloch_period if params.force else None
    every = sde.cadence(tb)
    run = simulate_classical(params, sde.n_traj, sde.t_total, sde.dt, seed=sde.seed,
                             p_std=float(cfg.initial.get("p_std", 0.0)), record_every=every)
    ones = np.ones(len(run.t))
    series = _plain_series(run.t, ones, run.v, run.z, run.disp, run.v2, ones)
    series.v_err = run.v_err
    return series, _series_fits(cfg, series, tb, params.gamma), {}


def _run_bands(cfg: ExperimentConfig, out_dir):
    p = cfg.params
    us = p.get("U", [1.0, 4.0])
    us = us if isinstance(us, list) else [us]
    fits, extra, files = {}, {}, []
    for U in us:
        spec = band_spectrum(float(U), int(p.get("n_bands", 4)), int(p.get("n_kappa", 201)),
                             int(p.get("n_planewaves", 41)))
        extra[f"U={U:g}"] = spec
        fit = cosine_fit_residual(spec)
        offset, hop = tb_parameters_from_band(spec)
        fits[f"U={U:g}"] = {
            "delta": fit.delta, "rms_ratio": fit.rms_ratio,
            "unexplained_variance": fit.unexplained_variance,
            "gap01": spec.gap(0) if spec.n_bands > 1 else None,
            "width0": spec.width(0), "offset": offset, "hoppings": list(hop[:6]),
        }
        if out_dir is not None:
            cols = {"kappa": spec.kappa}
            for n in range(spec.n_bands):
                cols[f"eps{n}"] = spec.energies[n]
            path = os.path.join(out_dir, f"{cfg.name}_U{U:g}.txt")
            write_table(path, cols, cfg.metadata())
            files.append(path)
    return None, fits, extra, files


def run_experiment(config: ExperimentConfig, out_dir=None) -> RunResult:
    """Validate ``config``, run it, and write its outputs into ``out_dir``.

    With ``out_dir=None`` nothing is written; the result still carries the
    series and fits.
    """
    config.validate()
    out_dir = out_dir if out_dir is not None else config.output.get("dir")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    files = []
    if config.model == "tight-binding":
        series, fits, extra = _run_tight_binding(config)
    elif config.model == "classical":
        series, fits, extra = _run_classical(config)
    elif config.model == "lindblad":
        series, fits, extra, files = _run_lindblad(config, out_dir)
    elif config.model == "continuum":
        series, fits, extra, files = _run_continuum(config, out_dir)
    elif config.model == "bands":
        series, fits, extra, files = _run_bands(config, out_dir)
    else:  # pragma: no cover - guarded by ExperimentConfig
        raise ConfigError(config.model)
    meta = config.metadata()
    summary = {**meta, "name": config.name, "model": config.model, "config": config.to_dict(), "fits": fits}
    if series is not None:
        summary["n_traj"] = series.n_traj
    if out_dir is not None:
        if series is not None:
            path = os.path.join(out_dir, f"{config.name}.csv")
            write_series_csv(path, series, {**meta, "model": config.model, "name": config.name,
                                            "config": config.canonical_json()})
            files.append(path)
        path = os.path.join(out_dir, f"{config.name}.json")
        write_json(path, summary)
        files.append(path)
    return RunResult(config, series, summary, extra, files)


# -- presets ------------------------------------------------------------------

_REDUCED_GRID = {"z_min": "-40pi", "z_max": "40pi", "n_grid": 2048}


def _fig1(seed=1, dt=0.025, n_traj=2000):
    return [ExperimentConfig(
        "fig1", "tight-binding",
        params={"hopping": 1.0, "period": math.pi, "force": -0.1, "gamma": 0.05, "n_sites": 127},
        run={"dt": dt, "t_total": 120.0, "n_traj": n_traj, "seed": seed, "batch_size": 500,
             "resample_every": round(1.0 / dt)},
        initial={"width2": 100.0},
        analysis={"decay": True, "v2_late": 20.0},
    )]


_FIG2_SITES = {0.05: 241, 0.1: 141, 0.2: 81}


def _fig2(seed=2, dt=0.025, n_traj=4000):
    return [ExperimentConfig(
        f"fig2_F{force:g}", "tight-binding",
        params={"hopping": 1.0, "period": math.pi, "force": force, "gamma": 0.05, "n_sites": n},
        run={"dt": dt, "t_total": 160.0, "n_traj": n_traj, "seed": seed, "batch_size": 500,
             "resample_every": round(1.0 / dt), "output_every": round(0.5 / dt)},
        initial={"width2": 2.0},
        analysis={"diffusion": [60.0, 160.0]},
    ) for force, n in _FIG2_SITES.items()]


def _fig3():
    return [ExperimentConfig(
        "fig3", "bands", params={"U": [0.0, 1.0, 4.0], "n_bands": 4, "n_kappa": 201, "n_planewaves": 41},
    )]


def _coherent(name, U, t_total, snapshots, dt=0.0625):
    return ExperimentConfig(
        name, "continuum",
        params={"U": U, "force": 0.025, "gamma": 0.0},
        run={"dt": dt, "t_total": t_total, "seed": 0},
        initial={"sigma": 2 * math.pi},
        analysis={"timing": True, "depletion": t_total >= 800},
        output={"snapshots": snapshots},
    )


def _fig4(dt=0.0625):
    return [_coherent("fig4", 1.0, 400.0, 1, dt)]


def _fig5(dt=0.0625):
    return [_coherent("fig5", 1.0, 400.0, False, dt)]


def _damped(name, U, seed, dt, n_traj, t_total=480.0):
    return ExperimentConfig(
        name, "continuum",
        params={"U": U, "force": 0.025, "gamma": 0.01, **_REDUCED_GRID},
        run={"dt": dt, "t_total": t_total, "n_traj": n_traj, "seed": seed, "batch_size": 100,
             "resample_every": round(1.0 / dt)},
        initial={"sigma": 2 * math.pi},
        analysis={"tb_prediction": True},
    )


def _fig6(seed=6, dt=0.0625, n_traj=200):
    return [_damped("fig6", 1.0, seed, dt, n_traj)]


def _fig7(seed=7, dt=0.0625, n_traj=200):
    return [_damped("fig7", 4.0, seed, dt, n_traj), _damped("fig6", 1.0, seed - 1, dt, n_traj)]


def _fig8(dt=0.025):
    return [ExperimentConfig(
        "fig8", "lindblad",
        params={"hopping": 1.0, "period": math.pi, "force": -0.1, "gamma": 0.05, "n_sites": 127},
        run={"dt": dt, "t_total": 100.0, "snapshot_every": 1.0},
        initial={"width2": 100.0},
        analysis={"central_fraction": 0.2},
        output={"rho_times": [0.0, 100.0]},
    )]


TABLE1_GAMMAS = (0.0, 0.001, 0.01, 0.05)
TABLE1_REFERENCE = {
    (1.0, 0.0): 2.5e-4, (1.0, 0.001): 6.0e-4, (1.0, 0.01): 3.0e-3, (1.0, 0.05): 1.0e-2,
    (4.0, 0.0): 1e-6, (4.0, 0.001): 1.5e-4, (4.0, 0.01): 1.5e-3, (4.0, 0.05): 0.9e-2,
}


def _table1(seed=10, dt=0.0625, n_traj=200, name="table1"):
    cfgs = []
    for U in (1.0, 4.0):
        for g in TABLE1_GAMMAS:
            cfgs.append(ExperimentConfig(
                f"{name}_U{U:g}_g{g:g}", "continuum",
                params={"U": U, "force": 0.025, "gamma": g, **_REDUCED_GRID},
                run={"dt": dt, "t_total": 800.0, "n_traj": n_traj if g > 0 else 1, "seed": seed,
                     "batch_size": 100, **({"resample_every": round(1.0 / dt)} if g > 0 else {})},
                initial={"sigma": 2 * math.pi},
                analysis={"depletion": True},
            ))
    return cfgs


def _table1_quick(seed=10, dt=0.0625, n_traj=50):
    return _table1(seed, dt, n_traj, name="table1-quick")


def _oracle8(seed=3, dt=0.025, n_traj=10000):
    common = {"hopping": 1.0, "period": math.pi, "force": -0.1, "gamma": 0.05, "n_sites": 8}
    return [
        ExperimentConfig(
            "oracle8_sse", "tight-binding", params=common,
            run={"dt": dt, "t_total": 40.0, "n_traj": n_traj, "seed": seed, "batch_size": 2500,
                 "edge_sites": 0, "output_every": round(4.0 / dt)},
            initial={"width2": 4.0}),
        ExperimentConfig(
            "oracle8_exact", "lindblad", params=common,
            run={"dt": dt, "t_total": 40.0, "snapshot_every": 4.0},
            initial={"width2": 4.0}),
    ]


PRESETS = {
    "fig1": (_fig1, "tight-binding damped Bloch oscillation, gamma=0.05, F=-0.1"),
    "fig2": (_fig2, "tight-binding recoil-heating diffusion for F in {0.05, 0.1, 0.2}"),
    "fig3": (_fig3, "Bloch bands for U = 0, 1, 4"),
    "fig4": (_fig4, "coherent continuum run U=1, F=0.025 with density snapshots"),
    "fig5": (_fig5, "coherent continuum velocity U=1, F=0.025"),
    "fig6": (_fig6, "damped continuum run U=1, gamma=0.01 vs single-band prediction"),
    "fig7": (_fig7, "damped continuum run U=4 (and U=1 for comparison), gamma=0.01"),
    "fig8": (_fig8, "single-band master equation at the fig1 parameters"),
    "table1": (_table1, "depletion constants, U in {1, 4}, gamma in {0, 0.001, 0.01, 0.05}, M=200"),
    "table1-quick": (_table1_quick, "table1 at M=50 (ordering check only)"),
    "oracle8": (_oracle8, "8-site trajectory ensemble vs exact master equation"),
}


def preset_configs(name: str, **kwargs) -> list[ExperimentConfig]:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return PRESETS[name][0](**kwargs)


def run_preset(name: str, out_dir=None, configs=None, **kwargs) -> dict:
    """Run every config of a preset; returns ``{config name: RunResult}``.

    All configs are validated before the first one starts.
    """
    configs = configs if configs is not None else preset_configs(name, **kwargs)
    for cfg in configs:
        cfg.validate()
    return {cfg.name: run_experiment(cfg, out_dir) for cfg in configs}


# -- acceptance checks --------------------------------------------------------


def _fit(summary, key):
    f = summary["fits"].get(key)
    if f is None:
        raise KeyError(f"fit {key} missing")
    return f


def check_preset(name: str, results: dict) -> list[CheckResult]:
    """Evaluate a preset's acceptance thresholds on its run results."""
    fn = _CHECKS.get(name)
    if fn is None:
        return []
    return fn(results)


def _check_fig1(res):
    s = res["fig1"].summary
    g = _fit(s, "gamma_fit")["estimate"]
    v2 = _fit(s, "v2_late")["value"]
    target = math.pi**2 / 2
    return [
        CheckResult("envelope decay rate", abs(g / 0.05 - 1) <= 0.2, f"{g:.4f} vs 0.05 +-20%"),
        CheckResult("late <v^2>", abs(v2 / target - 1) <= 0.05, f"{v2:.4f} vs pi^2/2={target:.4f} +-5%"),
    ]


def diffusion_reference(force, gamma=0.05, hopping=1.0, period=math.pi):
    from .lindblad import diffusion_coefficient
    v_st2 = 0.5 * (period * hopping) ** 2
    return diffusion_coefficient(v_st2, gamma, period * force)


def _check_fig2(res):
    out, ds = [], []
    for force in _FIG2_SITES:
        r = res[f"fig2_F{force:g}"]
        d = _fit(r.summary, "D_fit")["estimate"]
        ref = diffusion_reference(force)
        ds.append(d)
        out.append(CheckResult(f"D(F={force:g})", abs(d / ref - 1) <= 0.15, f"{d:.4f} vs {ref:.4f} +-15%"))
    mono = all(a > b for a, b in zip(ds, ds[1:]))
    out.append(CheckResult("D decreases with |F|", mono, " > ".join(f"{d:.3f}" for d in ds)))
    return out


def _check_fig3(res):
    f = res["fig3"].summary["fits"]
    spec0 = res["fig3"].extra["U=0"]
    u0 = float(np.abs(spec0.energies[0] - spec0.kappa**2).max())
    r4, r1 = f["U=4"]["unexplained_variance"], f["U=1"]["unexplained_variance"]
    return [
        CheckResult("U=4 cosine residual", r4 < 0.02, f"{r4:.4f} < 0.02 (rms ratio {f['U=4']['rms_ratio']:.4f})"),
        CheckResult("U=1 residual > 5x U=4", r1 > 5 * r4, f"{r1:.4f} > {5 * r4:.4f}"),
        CheckResult("U=0 free band", u0 < 1e-8, f"max|eps0-kappa^2| = {u0:.1e}"),
    ]


def _check_coherent(res, name):
    f = res[name].summary["fits"]
    timing = f["timing"]
    if timing is None:
        raise KeyError("timing")
    em = f["emission"]
    bursts = np.array(em["bursts"])
    gaps = np.diff(bursts)
    per_ok = abs(timing["period"] / 80 - 1) <= 0.02 and timing["period_spread"] <= 0.04 * 80
    burst_ok = len(gaps) >= 2 and np.all(np.abs(gaps / 80 - 1) <= 0.02)
    return [
        CheckResult("Bloch period", per_ok, f"{timing['period']:.3f} (spread {timing['period_spread']:.2f}) vs 80 +-2%"),
        CheckResult("asymmetric oscillation", timing["asymmetry"] > 0.1, f"rise/fall asymmetry {timing['asymmetry']:.3f} > 0.1"),
        CheckResult("emission toward -z", em["left"] > 100 * max(em["right"], 1e-300),
                    f"absorbed left {em['left']:.3e}, right {em['right']:.3e}"),
        CheckResult("one burst per cycle", burst_ok, f"burst spacing {np.round(gaps, 2).tolist()}"),
    ]


def _cycle_stats(summary, t_min):
    c = summary["fits"]["cycle_maxima"]
    t = np.array(c["t"])
    sel = t >= t_min
    return (t[sel], np.array(c["value"])[sel], np.array(c["err"])[sel], np.array(c["ref"])[sel])


def _check_fig6(res, k=3.0):
    r = res["fig6"]
    t_min = 2 * r.config.continuum_params().bloch_period
    t, val, err, ref = _cycle_stats(r.summary, t_min)
    ok = bool(len(t) >= 3 and np.all(val + k * err >= ref))
    z = (val - ref) / np.where(err > 0, err, np.inf)
    return [CheckResult("U=1 continuum maxima >= single-band prediction from cycle 3", ok,
                        f"{len(t)} maxima, min (cont-tb)/err = {z.min():.2f}")]


def _deviation(r):
    t_min = 2 * r.config.continuum_params().bloch_period
    _, val, _, ref = _cycle_stats(r.summary, t_min)
    return float(np.linalg.norm(val - ref) / math.sqrt(len(val)))


def _check_fig7(res):
    d4, d1 = _deviation(res["fig7"]), _deviation(res["fig6"])
    return [CheckResult("U=4 closer to single band than U=1", d4 < d1, f"rms deviation {d4:.4f} (U=4) < {d1:.4f} (U=1)")]


def _check_fig8(res):
    f = res["fig8"].summary["fits"]
    prof = np.array(f["profile_final"])
    coh = f["nearest_coherence"]
    return [
        CheckResult("off-diagonal profile", bool(np.all(prof[2:] < 0.05)),
                    f"max_k>=2 profile/profile0 = {prof[2:].max():.4f} < 0.05"),
        CheckResult("stationary nearest coherence", coh["relative_l2"] < 0.15,
                    f"relative L2 {coh['relative_l2']:.4f} < 0.15 on {coh['n_pairs']} central pairs"),
    ]


def table1_values(res, prefix="table1"):
    nu = {}
    for U in (1.0, 4.0):
        for g in TABLE1_GAMMAS:
            r = res[f"{prefix}_U{U:g}_g{g:g}"]
            nu[(U, g)] = _fit(r.summary, "nu_fit")["estimate"]
    return nu


def _check_table1(res, prefix="table1", quick=False):
    nu = table1_values(res, prefix)
    out = []
    if not quick:
        v = nu[(1.0, 0.0)]
        out.append(CheckResult("nu(U=1, g=0)", 0.5 <= v / 2.5e-4 <= 2, f"{v:.3e} vs 2.5e-4 (factor 2)"))
        v = nu[(4.0, 0.0)]
        out.append(CheckResult("nu(U=4, g=0)", v < 1e-5, f"{v:.3e} < 1e-5"))
        for U in (1.0, 4.0):
            for g in TABLE1_GAMMAS[1:]:
                v, ref = nu[(U, g)], TABLE1_REFERENCE[(U, g)]
                out.append(CheckResult(f"nu(U={U:g}, g={g:g})", 0.5 <= v / ref <= 2, f"{v:.3e} vs {ref:.1e} (factor 2)"))
    for U in (1.0, 4.0):
        seq = [nu[(U, g)] for g in TABLE1_GAMMAS]
        ok = all(a < b for a, b in zip(seq, seq[1:]))
        out.append(CheckResult(f"nu increasing in gamma (U={U:g})", ok, " < ".join(f"{x:.2e}" for x in seq)))
    return out


def _check_oracle8(res, k=3.0):
    s = res["oracle8_sse"].series
    e = res["oracle8_exact"].series
    out = []
    idx_e = [int(np.argmin(abs(e.t - tt))) for tt in s.t[1:]]
    for key in ("v", "z", "v2"):
        a = getattr(s, key)[1:]
        err = getattr(s, f"{key}_err")[1:]
        b = getattr(e, key)[idx_e]
        z = np.abs(a - b) / err
        out.append(CheckResult(f"<{key}> vs master equation", bool(np.all(z <= k)),
                               f"{len(a)} checkpoints, max |diff|/stderr = {z.max():.2f}"))
    return out


_CHECKS = {
    "fig1": _check_fig1,
    "fig2": _check_fig2,
    "fig3": _check_fig3,
    "fig4": lambda r: _check_coherent(r, "fig4"),
    "fig5": lambda r: _check_coherent(r, "fig5"),
    "fig6": _check_fig6,
    "fig7": _check_fig7,
    "fig8": _check_fig8,
    "table1": _check_table1,
    "table1-quick": lambda r: _check_table1(r, "table1-quick", quick=True),
    "oracle8": _check_oracle8,
}
