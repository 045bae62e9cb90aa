"""Classical recoil-kick oracle and the fitters used on simulated series.

The classical model treats the quasimomentum as a random walk driven by
the static force, ``dp = -F dt + (hbar/d) sqrt(2 gamma) dW``, with the
velocity fixed by the band, ``v = (d Delta/hbar) sin(d p/hbar)``.  The sign of
the drift matches the Stark term ``+d F l`` of the lattice Hamiltonian, so
quantum and classical velocities can be compared directly.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .stochastic import DT_GUARD
from .tight_binding import TBParams

__all__ = [
    "FitResult",
    "fit_exponential_decay",
    "fit_diffusion",
    "fit_depletion",
    "envelope_maxima",
    "fit_envelope_decay",
    "OscillationTiming",
    "oscillation_timing",
    "burst_times",
    "compare_cycle_maxima",
    "ClassicalRun",
    "simulate_classical",
    "classical_mean_velocity",
    "classical_velocity_exact",
    "velocity_autocorrelation",
    "autocorrelation_prediction",
    "green_kubo_diffusion",
]


@dataclass(frozen=True)
class FitResult:
    """Outcome of a one-parameter-of-interest least-squares fit."""

    estimate: float
    stderr: float
    window: tuple
    residual_norm: float
    n_points: int
    intercept: float = 0.0

    def __post_init__(self):
        if not self.stderr >= 0:
            raise ValueError("standard error must be non-negative")
        if not self.window[1] >= self.window[0]:
            raise ValueError("empty fit window")

    def as_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "stderr": self.stderr,
            "window": list(self.window),
            "residual_norm": self.residual_norm,
            "n_points": self.n_points,
        }


def _select(t, y, window, sigma=None):
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape:
        raise ValueError("t and y must have the same shape")
    if window is None:
        window = (t.min(), t.max())
    lo, hi = window
    sel = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    s = None if sigma is None else np.asarray(sigma, dtype=float)[sel]
    return t[sel], y[sel], (float(lo), float(hi)), s


def _linear_fit(x, y, sigma=None):
    """Weighted straight line; returns slope, intercept, their errors and residual norm.

    With ``sigma`` the errors are taken as absolute; otherwise they are
    scaled by the residual variance.
    """
    n = len(x)
    w = np.ones(n) if sigma is None else 1.0 / np.asarray(sigma) ** 2
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("uncertainties must be positive and finite")
    a = np.column_stack([x, np.ones(n)])
    aw = a * np.sqrt(w)[:, None]
    yw = y * np.sqrt(w)
    coef, *_ = np.linalg.lstsq(aw, yw, rcond=None)
    resid = y - a @ coef
    cov = np.linalg.pinv(aw.T @ aw)
    if sigma is None:
        dof = max(n - 2, 1)
        cov = cov * float(resid @ resid) / dof
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    return coef[0], coef[1], err[0], err[1], float(np.linalg.norm(resid))


def fit_exponential_decay(t, y, window=None, sigma=None) -> FitResult:
    """Fit ``y ~ A exp(-rate t)`` by least squares on ``ln y``.

    Parameters
    ----------
    t, y : array_like
        Samples; ``y`` must be strictly positive inside the window.
    window : (float, float), optional
        Closed time interval to fit; defaults to the whole series.
    sigma : array_like, optional
        Standard errors of ``y``.  When given, each point is weighted by
        ``(y / sigma)^2`` and the reported error is absolute.

    Returns
    -------
    FitResult
        ``estimate`` is the decay rate (positive for decay).
    """
    t, y, window, s = _select(t, y, window, sigma)
    if len(t) < 4:
        raise ValueError(f"need at least 4 points in the window, got {len(t)}")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("y must be strictly positive and finite in the fit window")
    slope, icpt, err, _, res = _linear_fit(t, np.log(y), None if s is None else s / y)
    return FitResult(-float(slope), float(err), window, res, len(t), float(icpt))


def fit_diffusion(t, disp, gamma: float, window=None, sigma=None) -> FitResult:
    """Slope of the dispersion ``<dz^2>(t)`` in the stationary regime.

    The default window runs from ``3/gamma`` to the last sample.  Windows that
    start before ``3/gamma`` or span less than ``2/gamma`` are rejected.
    """
    if gamma <= 0:
        raise ValueError("diffusion fits need a positive emission rate")
    t = np.asarray(t, dtype=float)
    if window is None:
        window = (3.0 / gamma, float(t.max()))
    lo, hi = window
    if lo < 3.0 / gamma * (1 - 1e-12):
        raise ValueError(f"window starts at {lo:.4g}, before the stationary regime t >= {3 / gamma:.4g}")
    if hi - lo < 2.0 / gamma * (1 - 1e-12):
        raise ValueError(f"window length {hi - lo:.4g} shorter than 2/gamma = {2 / gamma:.4g}")
    t, y, window, s = _select(t, disp, window, sigma)
    if len(t) < 3:
        raise ValueError("need at least 3 points in the window")
    slope, icpt, err, _, res = _linear_fit(t, y, s)
    return FitResult(float(slope), float(err), window, res, len(t), float(icpt))


def fit_depletion(t, P, bloch_period: float, sigma=None, first: int = 2, last: int = 10) -> FitResult:
    """Depletion constant: exponential fit of ``P(t)`` over ``[2 T_B, 10 T_B]``."""
    return fit_exponential_decay(t, P, (first * bloch_period, last * bloch_period), sigma)


def envelope_maxima(t, v, half_period: float, t_max: float | None = None):
    """Largest ``|v|`` within each half-cycle ``[k T/2, (k+1) T/2)``.

    Returns the sample indices of the maxima; half-cycles whose maximum sits
    on a window edge (a monotone stretch, not a turning point) are dropped.
    """
    t = np.asarray(t, dtype=float)
    a = np.abs(np.asarray(v, dtype=float))
    if half_period <= 0:
        raise ValueError("half_period must be positive")
    t_end = t.max() if t_max is None else t_max
    idx = []
    k = 0
    while (k + 1) * half_period <= t_end + 1e-9:
        sel = np.nonzero((t >= k * half_period - 1e-9) & (t < (k + 1) * half_period - 1e-9))[0]
        if len(sel) >= 3:
            j = sel[np.argmax(a[sel])]
            if sel[0] < j < sel[-1]:
                idx.append(j)
        k += 1
    return np.array(idx, dtype=int)


def fit_envelope_decay(t, v, bloch_period: float, v_err=None, t_min: float = 0.0,
                       t_max: float | None = None) -> FitResult:
    """Decay rate of the oscillation envelope from half-cycle maxima of ``|v|``."""
    idx = envelope_maxima(t, v, 0.5 * abs(bloch_period), t_max)
    t = np.asarray(t, dtype=float)
    idx = idx[t[idx] >= t_min]
    a = np.abs(np.asarray(v, dtype=float))[idx]
    s = None
    if v_err is not None:
        s = np.asarray(v_err, dtype=float)[idx]
        s = np.where(s > 0, s, np.finfo(float).tiny)
        if np.all(s == np.finfo(float).tiny):
            s = None
    window = (float(t[idx].min()), float(t[idx].max())) if len(idx) else (0.0, 0.0)
    return fit_exponential_decay(t[idx], a, window, s)


@dataclass(frozen=True)
class OscillationTiming:
    """Turning points of a periodic signal.

    ``asymmetry`` is ``|t_rise - t_fall| / period`` averaged over cycles,
    where ``t_rise`` runs from a minimum to the next maximum; it vanishes
    for a sinusoid and approaches one for a sawtooth.
    """

    maxima: np.ndarray
    minima: np.ndarray
    period: float
    period_spread: float
    asymmetry: float


def _turning_points(y, sign):
    y = sign * np.asarray(y, dtype=float)
    inner = (y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:])
    return np.nonzero(inner)[0] + 1


def oscillation_timing(t, v, min_separation: float = 0.0) -> OscillationTiming:
    """Period and rise/fall asymmetry from the maxima and minima of ``v``.

    Turning points closer than ``min_separation`` to the previous one of the
    same kind are ignored (numerical ripples).
    """
    t = np.asarray(t, dtype=float)

    def pick(idx):
        keep = []
        for i in idx:
            if not keep or t[i] - t[keep[-1]] >= min_separation:
                keep.append(i)
        return t[np.array(keep, dtype=int)] if keep else np.array([])

    tmax = pick(_turning_points(v, 1))
    tmin = pick(_turning_points(v, -1))
    if len(tmax) < 2:
        raise ValueError("need at least two maxima to measure a period")
    gaps = np.diff(tmax)
    period = float(gaps.mean())
    asym = []
    for a in tmin:
        later = tmax[tmax > a]
        if len(later) == 0:
            continue
        rise = later[0] - a
        asym.append(abs(rise - (period - rise)) / period)
    return OscillationTiming(tmax, tmin, period, float(np.ptp(gaps)), float(np.mean(asym)) if asym else 0.0)


def burst_times(t, flux, rel_height: float = 0.2) -> np.ndarray:
    """Times of the local maxima of ``flux`` that exceed ``rel_height * max(flux)``."""
    flux = np.asarray(flux, dtype=float)
    idx = _turning_points(flux, 1)
    idx = idx[flux[idx] >= rel_height * flux.max()]
    return np.asarray(t, dtype=float)[idx]


def compare_cycle_maxima(t, v, v_err, v_ref, half_period: float, t_min: float = 0.0,
                         t_max: float | None = None) -> dict:
    """Pair the half-cycle maxima of ``|v|`` with those of a reference curve.

    Returns times, magnitudes and errors of both sets of maxima (matched
    per half-cycle), restricted to ``t >= t_min``.
    """
    t = np.asarray(t, dtype=float)
    ia = envelope_maxima(t, v, half_period, t_max)
    ib = envelope_maxima(t, v_ref, half_period, t_max)
    slot_a = {int(np.floor(t[i] / half_period + 1e-9)): i for i in ia}
    slot_b = {int(np.floor(t[i] / half_period + 1e-9)): i for i in ib}
    common = sorted(k for k in slot_a.keys() & slot_b.keys() if t[slot_a[k]] >= t_min)
    a = np.array([slot_a[k] for k in common], dtype=int)
    b = np.array([slot_b[k] for k in common], dtype=int)
    err = np.zeros(len(a)) if v_err is None else np.asarray(v_err, dtype=float)[a]
    return {
        "t": t[a],
        "value": np.abs(np.asarray(v, dtype=float)[a]),
        "err": err,
        "t_ref": t[b],
        "ref": np.abs(np.asarray(v_ref, dtype=float)[b]),
    }


# -- classical oracle ---------------------------------------------------------


@dataclass
class ClassicalRun:
    """Ensemble means of the classical model; ``v_samples`` keeps per-particle
    velocities when requested."""

    t: np.ndarray
    v: np.ndarray
    v_err: np.ndarray
    v2: np.ndarray
    z: np.ndarray
    disp: np.ndarray
    v_samples: np.ndarray | None = None


def simulate_classical(params: TBParams, n_particles: int, t_total: float, dt: float,
                       seed: int = 0, p_std: float = 0.0, record_every: int = 1,
                       keep_samples: bool = False) -> ClassicalRun:
    """Euler-Maruyama integration of the classical recoil-kick model.

    Parameters
    ----------
    p_std : float
        Standard deviation of the initial momentum distribution (centred at
        zero); ``0`` gives the delta-distributed start.
    """
    if n_particles < 1:
        raise ValueError("empty ensemble")
    rate = max(abs(params.bloch_frequency), params.gamma)
    if dt * rate > DT_GUARD * (1 + 1e-12):
        raise ValueError(f"dt={dt} violates the step guard")
    n_steps = round(t_total / dt)
    if n_steps < 1 or abs(n_steps * dt - t_total) > 1e-9 * t_total:
        raise ValueError("t_total must be a positive integer multiple of dt")
    rng = np.random.default_rng(seed)
    d, hbar = params.period, params.hbar
    v0 = params.v0
    kick = hbar / d * math.sqrt(2 * params.gamma * dt)
    p = rng.standard_normal(n_particles) * p_std
    z = np.zeros(n_particles)
    v = v0 * np.sin(d * p / hbar)
    rec_t, rec_v, rec_e, rec_v2, rec_z, rec_d, samples = [], [], [], [], [], [], []

    def record(step):
        rec_t.append(step * dt)
        rec_v.append(v.mean())
        rec_e.append(v.std(ddof=1) / math.sqrt(n_particles) if n_particles > 1 else 0.0)
        rec_v2.append((v**2).mean())
        rec_z.append(z.mean())
        rec_d.append(z.var())
        if keep_samples:
            samples.append(v.copy())

    record(0)
    for step in range(1, n_steps + 1):
        p = p - params.force * dt + kick * rng.standard_normal(n_particles)
        v_new = v0 * np.sin(d * p / hbar)
        z = z + 0.5 * dt * (v + v_new)
        v = v_new
        if step % record_every == 0:
            record(step)
    return ClassicalRun(
        np.array(rec_t), np.array(rec_v), np.array(rec_e), np.array(rec_v2),
        np.array(rec_z), np.array(rec_d),
        np.array(samples).T if keep_samples else None,
    )


def classical_mean_velocity(p, params: TBParams) -> float:
    """Ensemble mean of ``(d Delta/hbar) sin(d p/hbar)`` over momenta ``p``."""
    p = np.asarray(p, dtype=float)
    if p.size == 0:
        raise ValueError("empty ensemble")
    return float(np.mean(params.v0 * np.sin(params.period * p / params.hbar)))


def classical_velocity_exact(params: TBParams, t, p_std: float = 0.0):
    """Closed-form classical ``<v(t)>``:
    ``-v0 exp(-gamma t - (d p_std/hbar)^2 / 2) sin(w_B t)``."""
    t = np.asarray(t, dtype=float)
    damp = np.exp(-params.gamma * t - 0.5 * (params.period * p_std / params.hbar) ** 2)
    return -params.v0 * damp * np.sin(params.bloch_frequency * t)


def velocity_autocorrelation(v_samples, dt: float, max_lag: int, start: int = 0):
    """Stationary correlation ``R(tau) = <v(t + tau) v(t)>``.

    Parameters
    ----------
    v_samples : (n_particles, n_times) array
        Velocity histories on a uniform time grid with spacing ``dt``.
    max_lag : int
        Largest lag in samples.
    start : int
        First sample treated as stationary; time origins run from there.

    Returns
    -------
    tau, R, R_err : ndarray
        ``R_err`` is the standard error across particles.
    """
    v = np.asarray(v_samples, dtype=float)
    if v.ndim != 2:
        raise ValueError("v_samples must be (n_particles, n_times)")
    n_p, n_t = v.shape
    if start + max_lag >= n_t:
        raise ValueError("not enough samples after the stationary start for the requested lag")
    if n_p < 2:
        raise ValueError("need at least two independent histories for an error estimate")
    per = np.empty((n_p, max_lag + 1))
    n_orig = n_t - start - max_lag
    base = v[:, start:start + n_orig]
    for lag in range(max_lag + 1):
        per[:, lag] = (base * v[:, start + lag:start + lag + n_orig]).mean(axis=1)
    tau = dt * np.arange(max_lag + 1)
    return tau, per.mean(axis=0), per.std(axis=0, ddof=1) / math.sqrt(n_p)


def autocorrelation_prediction(params: TBParams, tau):
    """Classical ``R(tau) = v_st^2 exp(-gamma tau) cos(w_B tau)``, ``v_st^2 = v0^2 / 2``."""
    tau = np.asarray(tau, dtype=float)
    return 0.5 * params.v0**2 * np.exp(-params.gamma * tau) * np.cos(params.bloch_frequency * tau)


def green_kubo_diffusion(tau, R) -> float:
    """``D = 2 int_0^inf R(tau) dtau`` (trapezoid rule over the supplied lags)."""
    return 2.0 * float(np.trapezoid(R, tau))
