"""Linear stochastic Schroedinger equation and trajectory ensembles.

Each trajectory obeys

    d psi = (-i H dt - (gamma/2) L_u^+ L_u dt + sqrt(gamma) L_u d xi) psi

with a fresh recoil projection ``u`` (uniform on [-1, 1]) and a fresh *real*
Wiener increment ``d xi`` drawn every step.  The norm is never restored, so
ensemble means of the unnormalised quadratic forms ``<psi|A|psi>`` converge
to ``Tr(A rho)`` of the master equation and the mean norm stays at one.

Random numbers come from one stream per trajectory, derived from
``(seed, trajectory index)``, and draws are made in fixed blocks of steps.
Results are therefore independent of the batch layout and of how many
threads execute the batches.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
import logging
import math
import os

import numpy as np

__all__ = [
    "SdeConfig",
    "ObservableSeries",
    "TrajectoryAbort",
    "EdgeProximityError",
    "trajectory_rng",
    "draw_noise",
    "sde_step",
    "run_ensemble",
    "reduce_ensemble",
    "thread_count",
    "resample",
]

log = logging.getLogger(__name__)

DT_GUARD = 0.05
NOISE_BLOCK = 256
THREADS_ENV = "BLOCHDAMP_THREADS"
SCHEMES = ("split", "euler", "heun")


class TrajectoryAbort(RuntimeError):
    """Raised when trajectories overflow; ``failed`` lists ``(index, seed)`` pairs."""

    def __init__(self, message, failed=()):
        super().__init__(message)
        self.failed = list(failed)


class EdgeProximityError(RuntimeError):
    pass


@dataclass(frozen=True)
class SdeConfig:
    """Time stepping and sampling controls for :func:`run_ensemble`.

    ``output_every`` is in steps; ``None`` picks ``ceil(T_B / (100 dt))``.
    ``batch_size`` fixes how trajectories are grouped into arrays and must be
    kept fixed for bit-identical reruns; ``threads`` only changes how many
    batches run at once.

    ``resample_every`` (steps) switches on population control: within each
    batch, trajectories are redrawn in proportion to their norms by
    systematic resampling and rescaled to the batch mean norm.  Ensemble
    means of the unnormalised quadratic forms stay unbiased, while the
    heavy-tailed norm distribution of the linear equation is kept in check.
    """

    dt: float
    t_total: float
    n_traj: int = 1
    seed: int = 0
    scheme: str = "split"
    output_every: int | None = None
    batch_size: int = 500
    threads: int | None = None
    resample_every: int | None = None

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if not (self.t_total > 0 and math.isfinite(self.t_total)):
            raise ValueError("t_total must be positive")
        if self.n_traj < 1:
            raise ValueError("need at least one trajectory")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.output_every is not None and self.output_every < 1:
            raise ValueError("output_every must be positive")
        if self.resample_every is not None and self.resample_every < 1:
            raise ValueError("resample_every must be positive")

    @property
    def n_steps(self) -> int:
        n = round(self.t_total / self.dt)
        if abs(n * self.dt - self.t_total) > 1e-9 * self.t_total:
            raise ValueError("t_total must be an integer multiple of dt")
        return n

    def check_guard(self, rate: float) -> None:
        if self.dt * rate > DT_GUARD * (1 + 1e-12):
            raise ValueError(
                f"dt={self.dt} too large: dt * max rate = {self.dt * rate:.3g} exceeds {DT_GUARD}"
            )

    def cadence(self, bloch_period: float | None) -> int:
        if self.output_every is not None:
            return self.output_every
        if bloch_period is None or not math.isfinite(bloch_period):
            return max(1, self.n_steps // 500)
        return max(1, math.ceil(bloch_period / (100 * self.dt) - 1e-9))


@dataclass
class ObservableSeries:
    """Ensemble averages with standard errors on a common time grid.

    When ``normalized`` is true the position and velocity moments are divided
    by the survival probability ``P`` (ratio estimators); otherwise they are
    plain ensemble means of the unnormalised quadratic forms.
    """

    t: np.ndarray
    P: np.ndarray
    v: np.ndarray
    z: np.ndarray
    disp: np.ndarray
    v2: np.ndarray
    norm: np.ndarray
    P_err: np.ndarray
    v_err: np.ndarray
    z_err: np.ndarray
    disp_err: np.ndarray
    v2_err: np.ndarray
    norm_err: np.ndarray
    n_traj: int = 1
    normalized: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.t)
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, np.ndarray) and len(val) != n:
                raise ValueError(f"series field {f.name} has length {len(val)}, expected {n}")

    def __len__(self):
        return len(self.t)

    def same_values(self, other: "ObservableSeries") -> bool:
        """Bit-for-bit equality of every array."""
        return all(
            np.array_equal(getattr(self, f.name), getattr(other, f.name))
            for f in fields(self)
            if isinstance(getattr(self, f.name), np.ndarray)
        )


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for trajectory ``index`` of master ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def draw_noise(rng: np.random.Generator, dt: float, size=None):
    """One ``(u, d xi)`` draw: ``u`` uniform on [-1, 1] and ``d xi ~ N(0, dt)``."""
    u = rng.uniform(-1.0, 1.0, size)
    dxi = rng.standard_normal(size) * math.sqrt(dt)
    return u, dxi


def resample_rng(seed: int, first_index: int) -> np.random.Generator:
    """Generator for population control of the batch starting at ``first_index``."""
    key = (int(first_index), 1)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def resample(psi, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling of a ``(batch, dim)`` stack by trajectory norm.

    Each output row is a copy of an input row chosen with probability
    proportional to its norm, rescaled so every row carries the batch mean
    norm.  Rows with zero norm are never chosen.
    """
    w = np.einsum("ij,ij->i", psi.real, psi.real) + np.einsum("ij,ij->i", psi.imag, psi.imag)
    total = w.sum()
    b = len(w)
    if not total > 0 or not math.isfinite(total):
        return psi
    cdf = np.cumsum(w) / total
    cdf[-1] = 1.0
    picks = np.searchsorted(cdf, (rng.uniform() + np.arange(b)) / b, side="right")
    picks = np.minimum(picks, b - 1)
    return psi[picks] * np.sqrt(total / b / w[picks])[:, None]


def thread_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(THREADS_ENV)
    return max(1, int(env)) if env else 1


def _apply_h(hamiltonian, psi):
    if callable(hamiltonian):
        return hamiltonian(psi)
    return psi @ np.asarray(hamiltonian).T


def _apply_recoil(op, psi):
    op = np.asarray(op)
    if op.ndim == 2 and psi.ndim == 1 and op.shape == (psi.size, psi.size):
        return op @ psi
    return op * psi


def _recoil_pair(op, psi):
    """Return ``L psi``, ``L^+ L psi`` and ``L L psi`` for diagonal or dense ``L``."""
    op = np.asarray(op)
    if op.ndim == 2 and psi.ndim == 1 and op.shape == (psi.size, psi.size):
        lpsi = op @ psi
        return lpsi, op.conj().T @ lpsi, op @ lpsi
    lpsi = op * psi
    return lpsi, op.conj() * lpsi, op * lpsi


def sde_step(psi, hamiltonian, recoil_family, gamma, dt, rng=None, *, noise=None, scheme="euler"):
    """Advance ``psi`` by one step of the linear stochastic equation.

    Parameters
    ----------
    psi : ndarray
        State, or a ``(batch, dim)`` stack of states.
    hamiltonian : ndarray or callable
        Dense matrix, or a function returning ``H psi`` for (stacked) states.
    recoil_family : callable
        ``u -> L_u``; either the diagonal of ``L_u`` or a dense matrix.  For
        stacked states ``u`` is an array and the diagonal form is required.
    gamma, dt : float
    rng : numpy.random.Generator, optional
        Source of ``(u, d xi)`` when ``noise`` is not given.
    noise : tuple, optional
        Explicit ``(u, d xi)``; mainly for regression tests.
    scheme : {"euler", "heun"}
        ``euler`` is Euler-Maruyama.  ``heun`` is a predictor-corrector on
        the Stratonovich form of the equation, whose drift carries the extra
        ``-(gamma/2) L_u^2`` term, so it converges to the same Ito solution.

    The result is not renormalised.
    """
    psi = np.asarray(psi, dtype=complex)
    if not np.all(np.isfinite(psi)):
        raise TrajectoryAbort("non-finite amplitudes in input state")
    batch = psi.ndim == 2
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise is required")
        u, dxi = draw_noise(rng, dt, psi.shape[0] if batch else None)
    else:
        u, dxi = noise
    if np.any(np.abs(u) > 1):
        raise ValueError("recoil projection must satisfy |u| <= 1")
    dxi_b = np.asarray(dxi)[:, None] if batch else dxi
    sg = math.sqrt(gamma)

    def drift_and_noise(state, strat):
        lop = recoil_family(u)
        lpsi, ldl, ll = _recoil_pair(lop, state)
        drift = -1j * _apply_h(hamiltonian, state) - 0.5 * gamma * ldl
        if strat:
            drift = drift - 0.5 * gamma * ll
        return drift, sg * lpsi

    if scheme == "euler":
        a, b = drift_and_noise(psi, False)
        out = psi + a * dt + b * dxi_b
    elif scheme == "heun":
        a, b = drift_and_noise(psi, True)
        pred = psi + a * dt + b * dxi_b
        a2, b2 = drift_and_noise(pred, True)
        out = psi + 0.5 * (a + a2) * dt + 0.5 * (b + b2) * dxi_b
    else:
        raise ValueError(f"sde_step supports 'euler' and 'heun', not {scheme!r}")
    if not np.all(np.isfinite(out)):
        raise TrajectoryAbort("non-finite amplitudes after step")
    return out


# -- ensembles ----------------------------------------------------------------

OBSERVABLES = ("norm", "P", "z", "z2", "v", "v2")


def _run_batch(model, stepper, cfg, indices, n_steps, cadence):
    b = len(indices)
    n_out = n_steps // cadence + 1
    rec = {name: np.zeros((b, n_out)) for name in OBSERVABLES}
    psi = np.tile(model.initial_state(), (b, 1))
    noisy = model.gamma > 0
    rngs = [trajectory_rng(cfg.seed, k) for k in indices] if noisy else []
    pop = resample_rng(cfg.seed, indices[0]) if noisy and cfg.resample_every else None
    alive = np.ones(b, dtype=bool)

    def record(slot):
        nonlocal psi
        obs = model.measure(psi)
        bad = ~np.isfinite(obs["norm"]) & alive
        if bad.any():
            alive[bad] = False
            psi[bad] = 0.0
            obs = model.measure(psi)
        for name in OBSERVABLES:
            rec[name][:, slot] = obs[name]
        model.check(psi, t=slot * cadence * cfg.dt)

    record(0)
    u_blk = xi_blk = np.zeros((b, NOISE_BLOCK))
    step = 0
    while step < n_steps:
        nb = min(NOISE_BLOCK, n_steps - step)
        if noisy:
            draws = [draw_noise(r, cfg.dt, NOISE_BLOCK) for r in rngs]
            u_blk = np.array([d[0] for d in draws])
            xi_blk = np.array([d[1] for d in draws])
        for j in range(nb):
            psi = stepper(psi, u_blk[:, j], xi_blk[:, j])
            step += 1
            if pop is not None and step % cfg.resample_every == 0:
                psi = resample(psi, pop)
            if step % cadence == 0:
                record(step // cadence)
    return rec, [int(k) for k, ok in zip(indices, alive) if not ok]


def run_ensemble(config: SdeConfig, model) -> ObservableSeries:
    """Propagate ``config.n_traj`` trajectories of ``model`` and average.

    ``model`` supplies ``initial_state()``, ``stepper(dt, scheme)``,
    ``measure(psi_batch)``, ``check(psi_batch, t)``, plus the attributes
    ``gamma``, ``max_rate``, ``bloch_period`` and ``normalize``.  The tight-
    binding and continuum models in this package implement that interface.
    """
    config.check_guard(model.max_rate)
    n_steps = config.n_steps
    cadence = config.cadence(model.bloch_period)
    stepper = model.stepper(config.dt, config.scheme)
    idx = np.arange(config.n_traj)
    batches = [idx[i:i + config.batch_size] for i in range(0, config.n_traj, config.batch_size)]
    workers = min(thread_count(config.threads), len(batches))

    def job(ids):
        return _run_batch(model, stepper, config, ids, n_steps, cadence)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, batches))
    else:
        results = [job(ids) for ids in batches]

    failed = [k for _, f in results for k in f]
    if failed:
        raise TrajectoryAbort(
            f"{len(failed)} trajectories overflowed (seed {config.seed})",
            failed=[(k, config.seed) for k in failed],
        )
    samples = {name: np.concatenate([r[name] for r, _ in results]) for name in OBSERVABLES}
    t = np.arange(n_steps // cadence + 1) * cadence * config.dt
    groups = None
    if config.resample_every and model.gamma > 0:
        groups = [len(b) for b in batches]
    series = reduce_ensemble(t, samples, normalize=model.normalize, groups=groups)
    series.meta.update(seed=config.seed, dt=config.dt, scheme=config.scheme, cadence=cadence)
    return series


def _stderr(influence, groups=None):
    m = influence.shape[0]
    if groups is None:
        if m < 2:
            return np.zeros(influence.shape[1])
        return influence.std(axis=0, ddof=1) / math.sqrt(m)
    # batches are the independent units once trajectories are resampled
    g = len(groups)
    if g < 2:
        return np.full(influence.shape[1], np.nan)
    edges = np.cumsum([0] + list(groups))
    sums = np.array([influence[a:b].sum(axis=0) for a, b in zip(edges[:-1], edges[1:])])
    sizes = np.asarray(groups, dtype=float)[:, None]
    mean = sums.sum(axis=0) / m
    dev = sums - sizes * mean
    return np.sqrt((dev**2).sum(axis=0) * g / (g - 1)) / m


def reduce_ensemble(t, samples: dict, normalize: bool = False, groups=None) -> ObservableSeries:
    """Reduce per-trajectory quadratic forms (rows = trajectories) to a series.

    Errors of ratios and of the dispersion use first-order (delta method)
    influence functions, which keeps the reduction a fixed-order sum.  With
    ``groups`` (consecutive batch sizes) the errors come from batch totals
    instead of single rows, as needed after resampling.
    """
    m = samples["norm"].shape[0]
    mean = {k: v.mean(axis=0) for k, v in samples.items()}
    if normalize:
        a_k, a = samples["P"], mean["P"]
    else:
        a_k, a = np.ones_like(samples["P"]), np.ones_like(mean["P"])
    safe = np.where(a > 0, a, np.nan)

    def ratio(name):
        r = mean[name] / safe
        infl = (samples[name] - r * a_k) / safe
        return r, _stderr(infl, groups)

    z, z_err = ratio("z")
    v, v_err = ratio("v")
    v2, v2_err = ratio("v2")
    z2 = mean["z2"] / safe
    disp = z2 - z**2
    # d(disp) = dC/A - (2 B / A^2) dB + (2 B^2/A^3 - C/A^2) dA
    infl = (
        samples["z2"] / safe
        - 2 * z * samples["z"] / safe
        + (2 * z**2 - z2) * a_k / safe
    )
    infl = infl - infl.mean(axis=0)
    disp_err = _stderr(infl, groups)
    return ObservableSeries(
        t=np.asarray(t, dtype=float),
        P=mean["P"],
        v=v,
        z=z,
        disp=disp,
        v2=v2,
        norm=mean["norm"],
        P_err=_stderr(samples["P"], groups),
        v_err=v_err,
        z_err=z_err,
        disp_err=disp_err,
        v2_err=v2_err,
        norm_err=_stderr(samples["norm"], groups),
        n_traj=m,
        normalized=normalize,
    )
