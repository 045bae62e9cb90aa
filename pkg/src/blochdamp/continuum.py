"""Continuum model ``H = p^2 - U cos^2(z) + F z`` on a uniform periodic grid.

Units: length in ``1/k_L`` (lattice period ``pi``), energy in recoil
energies, ``hbar = 1``; the velocity is ``v = 2 p`` and the Bloch period is
``T_B = 2 / F``.  Wave functions are normalised as ``sum |psi|^2 dz = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np
import scipy.fft as sfft

from .tight_binding import (
    TBParams,
    evolve_coherent,
    gaussian_wannier_state,
    hoppings_from_dispersion,
    velocity_operator_tb,
)

__all__ = [
    "ContinuumParams",
    "BandSpectrum",
    "band_spectrum",
    "ground_band_width",
    "CosineFit",
    "cosine_fit_residual",
    "tb_parameters_from_band",
    "absorbing_mask",
    "split_step",
    "recoil_apply",
    "survival_probability",
    "mean_velocity_grid",
    "window_moments",
    "bloch_decomposition",
    "band_populations",
    "project_ground_band",
    "prepare_ground_band_packet",
    "tb_velocity_prediction",
    "CoherentRun",
    "evolve_grid",
    "ContinuumModel",
]

PI = math.pi


@dataclass(frozen=True)
class ContinuumParams:
    """Physical and grid parameters of the continuum model.

    The grid spans ``[z_min, z_max)`` with ``n_grid`` points; its length must
    be a whole number of lattice periods so that the periodic box is
    commensurate with the potential.  Observables are integrated over
    ``[-window, window]``; an absorbing ramp of width ``mask_width`` sits at
    each end of the grid.
    """

    U: float = 1.0
    force: float = 0.025
    gamma: float = 0.0
    z_min: float = -64 * PI
    z_max: float = 64 * PI
    n_grid: int = 4096
    mask_width: float = 8 * PI
    window: float = 20 * PI

    def __post_init__(self):
        vals = (self.U, self.force, self.gamma, self.z_min, self.z_max, self.mask_width, self.window)
        if not all(math.isfinite(x) for x in vals):
            raise ValueError("continuum parameters must be finite")
        n = int(self.n_grid)
        if n != self.n_grid or n < 16 or n & (n - 1):
            raise ValueError("n_grid must be a power of two")
        if self.gamma < 0:
            raise ValueError("emission rate must be non-negative")
        length = self.z_max - self.z_min
        if length <= 0:
            raise ValueError("empty grid")
        periods = length / PI
        if abs(periods - round(periods)) > 1e-9 * periods:
            raise ValueError("grid length must be a whole number of lattice periods")
        if self.dz > PI / 16 * (1 + 1e-12):
            raise ValueError(f"grid spacing {self.dz:.4g} does not resolve the lattice (need <= pi/16)")
        if PI / self.dz < 4 * self.expected_pmax * (1 - 1e-12):
            raise ValueError("momentum grid too coarse: Nyquist limit below 4x the expected momentum")
        if self.mask_width < 0 or 2 * self.mask_width >= length:
            raise ValueError("mask width must fit inside the grid")
        if not (self.z_min + self.mask_width <= -self.window and self.window <= self.z_max - self.mask_width):
            raise ValueError("measurement window must lie inside the unmasked region")

    @property
    def dz(self) -> float:
        return (self.z_max - self.z_min) / self.n_grid

    @property
    def n_periods(self) -> int:
        return round((self.z_max - self.z_min) / PI)

    @property
    def z(self) -> np.ndarray:
        return self.z_min + self.dz * np.arange(self.n_grid)

    @property
    def k(self) -> np.ndarray:
        return 2 * PI * np.fft.fftfreq(self.n_grid, self.dz)

    @property
    def expected_pmax(self) -> float:
        """Rough momentum ceiling: band momenta, a two-unit recoil kick and the
        energy gained by falling across the whole grid."""
        return 2.0 + math.sqrt(abs(self.U) + abs(self.force) * (self.z_max - self.z_min))

    @property
    def bloch_frequency(self) -> float:
        return PI * self.force

    @property
    def bloch_period(self) -> float:
        if self.force == 0:
            raise ValueError("Bloch period is undefined for zero force")
        return 2.0 / abs(self.force)

    def potential(self) -> np.ndarray:
        z = self.z
        return -self.U * np.cos(z) ** 2 + self.force * z

    def window_weights(self) -> np.ndarray:
        """Trapezoid weights over ``[-window, window]`` (zero outside)."""
        z = self.z
        tol = 1e-9 * self.dz
        inside = (z >= -self.window - tol) & (z <= self.window + tol)
        w = np.where(inside, self.dz, 0.0)
        idx = np.nonzero(inside)[0]
        w[idx[0]] *= 0.5
        w[idx[-1]] *= 0.5
        return w


# -- band structure -----------------------------------------------------------


@dataclass
class BandSpectrum:
    """Band energies ``energies[n, j]`` at quasimomenta ``kappa[j]`` in [-1, 1]."""

    kappa: np.ndarray
    energies: np.ndarray
    U: float = 0.0

    @property
    def n_bands(self) -> int:
        return self.energies.shape[0]

    def gap(self, n: int = 0) -> float:
        """Smallest separation between bands ``n`` and ``n + 1``."""
        return float((self.energies[n + 1] - self.energies[n]).min())

    def width(self, n: int = 0) -> float:
        return float(self.energies[n].max() - self.energies[n].min())


def _bloch_matrix(kappa: float, U: float, n_pw: int) -> np.ndarray:
    m = np.arange(n_pw) - n_pw // 2
    h = np.diag((kappa + 2.0 * m) ** 2 - 0.5 * U)
    off = np.full(n_pw - 1, -0.25 * U)
    return h + np.diag(off, 1) + np.diag(off, -1)


def band_spectrum(U: float, n_bands: int = 4, n_kappa: int = 201, n_planewaves: int = 41) -> BandSpectrum:
    """Lowest ``n_bands`` Bloch bands of ``p^2 - U cos^2 z`` (no force).

    Plane waves ``exp(i (kappa + 2 m) z)`` are coupled by ``cos^2 z =
    1/2 + (e^{2iz} + e^{-2iz}) / 4``.  ``kappa`` runs over ``n_kappa`` points
    of ``[-1, 1]`` including both zone edges.
    """
    if n_planewaves % 2 == 0 or n_planewaves < 2 * n_bands + 5:
        raise ValueError("n_planewaves must be odd and at least 2 * n_bands + 5")
    if n_kappa < 2:
        raise ValueError("need at least two quasimomenta")
    kappa = np.linspace(-1.0, 1.0, n_kappa)
    energies = np.empty((n_bands, n_kappa))
    for j, kp in enumerate(kappa):
        try:
            ev = np.linalg.eigvalsh(_bloch_matrix(kp, U, n_planewaves))
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"band diagonalisation failed at kappa index {j}") from exc
        energies[:, j] = ev[:n_bands]
    return BandSpectrum(kappa, energies, U)


def ground_band_width(U: float) -> float:
    return band_spectrum(U, n_bands=1, n_kappa=65, n_planewaves=31).width(0)


@dataclass(frozen=True)
class CosineFit:
    """Least-squares fit ``eps ~ offset - delta cos(pi kappa)`` of one band.

    ``rms_ratio`` is ``||eps - fit|| / ||eps - mean(eps)||``;
    ``unexplained_variance`` is its square, the fraction of the band's
    variance over the zone that the cosine misses (``1 - R^2``).
    """

    delta: float
    offset: float
    rms_ratio: float

    @property
    def unexplained_variance(self) -> float:
        return self.rms_ratio**2


def cosine_fit_residual(spectrum: BandSpectrum, band: int = 0) -> CosineFit:
    """Fit a cosine law to band ``band`` of ``spectrum``."""
    eps = spectrum.energies[band]
    a = np.column_stack([np.ones_like(spectrum.kappa), -np.cos(PI * spectrum.kappa)])
    coef, *_ = np.linalg.lstsq(a, eps, rcond=None)
    resid = eps - a @ coef
    spread = np.linalg.norm(eps - eps.mean())
    if spread == 0:
        return CosineFit(0.0, float(eps.mean()), 0.0)
    return CosineFit(float(coef[1]), float(coef[0]), float(np.linalg.norm(resid) / spread))


def tb_parameters_from_band(spectrum: BandSpectrum, band: int = 0, rel_tol: float = 1e-6):
    """Fourier hoppings ``(offset, (Delta_1, Delta_2, ...))`` of a Bloch band.

    ``eps(kappa) = offset - sum_s Delta_s cos(pi s kappa)``; plug the
    hoppings into :class:`~blochdamp.tight_binding.TBParams` with period ``pi``.
    """
    kappa = np.asarray(spectrum.kappa)
    eps = np.asarray(spectrum.energies[band])
    step = np.diff(kappa)
    if not np.allclose(step, step[0]):
        raise ValueError("quasimomentum grid must be uniform")
    if math.isclose(kappa[-1] - kappa[0], 2.0):
        kappa, eps = kappa[:-1], eps[:-1]
    if not (math.isclose(kappa[0], -1.0) and math.isclose(len(kappa) * step[0], 2.0)):
        raise ValueError("quasimomentum grid must cover [-1, 1) starting at -1")
    return hoppings_from_dispersion(eps, rel_tol)


def tb_velocity_prediction(params: ContinuumParams, t, sigma: float = 2 * PI,
                           n_sites: int | None = None) -> np.ndarray:
    """Single-band prediction of the normalised ``<v(t)>`` for the continuum packet.

    The lattice model uses the Fourier hoppings of the ground band and the
    Wannier-space image ``exp(-l^2 pi^2 / (2 sigma^2))`` of the Gaussian
    envelope.  Every recoil event randomises the quasimomentum uniformly in
    that model, so the damped velocity is ``exp(-gamma t)`` times the
    coherent one.
    """
    if params.force == 0:
        raise ValueError("the prediction needs a static force")
    _, hop = tb_parameters_from_band(band_spectrum(params.U, 1, 257, 41))
    if not hop:
        raise ValueError("flat ground band: no hopping")
    t = np.asarray(t, dtype=float)
    if n_sites is None:
        # room for the Bloch breathing amplitude plus the packet tails
        reach = 2 * sum(abs(h) for h in hop) / (PI * abs(params.force)) + 8 * sigma / PI
        n_sites = 2 * int(reach) + 21
    tb = TBParams(hopping=hop[0], extra_hoppings=hop[1:], force=params.force, n_sites=n_sites)
    psi0 = gaussian_wannier_state(tb, width2=2 * sigma**2 / PI**2)
    states = evolve_coherent(tb, psi0, t)
    v = np.einsum("ti,ij,tj->t", states.conj(), velocity_operator_tb(tb), states).real
    return v * np.exp(-params.gamma * t)


# -- grid propagation ---------------------------------------------------------


def absorbing_mask(params: ContinuumParams) -> np.ndarray:
    """``cos^(1/8)`` ramp from 1 at the inner edge of each absorber to 0 at the grid end."""
    z = params.z
    w = params.mask_width
    m = np.ones_like(z)
    if w == 0:
        return m
    depth = np.maximum(params.z_min + w - z, z - (params.z_max - w))
    ramp = depth > 0
    m[ramp] = np.cos(0.5 * PI * np.clip(depth[ramp] / w, 0, 1)) ** 0.125
    return m


@lru_cache(maxsize=16)
def _factors(params: ContinuumParams, dt: float):
    vhalf = np.exp(-0.5j * dt * params.potential())
    kin = np.exp(-1j * dt * params.k**2)
    return vhalf, kin, absorbing_mask(params)


def split_step(psi, params: ContinuumParams, dt: float, absorb: bool = True) -> np.ndarray:
    """One Strang step ``V/2 - K - V/2`` followed by the absorbing mask.

    Works on a single state or on a ``(batch, n_grid)`` stack.
    """
    vhalf, kin, mask = _factors(params, dt)
    out = sfft.ifft(sfft.fft(np.asarray(psi, dtype=complex) * vhalf, axis=-1) * kin, axis=-1)
    out *= vhalf * mask if absorb else vhalf
    if not np.all(np.isfinite(out)):
        raise ArithmeticError("non-finite amplitudes after split step")
    return out


def recoil_apply(psi, u: float, params: ContinuumParams) -> np.ndarray:
    """``L_u psi = cos(z) exp(i u z) psi``."""
    if abs(u) > 1:
        raise ValueError("recoil projection must satisfy |u| <= 1")
    z = params.z
    return np.cos(z) * np.exp(1j * u * z) * psi


def survival_probability(psi, params: ContinuumParams):
    """``P = int_{-W}^{W} |psi|^2 dz`` by the trapezoid rule (per row for stacks)."""
    _check_window(params)
    psi = np.asarray(psi)
    return (psi.real**2 + psi.imag**2) @ params.window_weights()


def _check_window(params):
    if params.z_min > -params.window or params.z_max < params.window:
        raise ValueError("measurement window exceeds the grid")


def _derivative(psi, params):
    return sfft.ifft(1j * params.k * sfft.fft(psi, axis=-1), axis=-1)


def mean_velocity_grid(psi, params: ContinuumParams, normalize: bool = False):
    """Windowed ``<v> = int psi^* (-2i d/dz) psi dz``; divided by ``P`` on request."""
    _check_window(params)
    psi = np.asarray(psi, dtype=complex)
    w = params.window_weights()
    v = (psi.conj() * (-2j) * _derivative(psi, params)).real @ w
    if normalize:
        v = v / ((psi.real**2 + psi.imag**2) @ w)
    return v


def window_moments(psi, params: ContinuumParams) -> dict:
    """Unnormalised windowed quadratic forms used by the ensemble engine."""
    w = params.window_weights()
    z = params.z
    dens = psi.real**2 + psi.imag**2
    dpsi = _derivative(psi, params)
    wz = w * z
    return {
        "norm": dens.sum(axis=-1) * params.dz,
        "P": dens @ w,
        "z": dens @ wz,
        "z2": dens @ (wz * z),
        "v": (psi.conj() * (-2j) * dpsi).real @ w,
        "v2": 4.0 * ((dpsi.real**2 + dpsi.imag**2) @ w),
    }


# -- Bloch-band projection ----------------------------------------------------


@lru_cache(maxsize=8)
def _band_basis(U: float, n_grid: int, n_periods: int, n_bands: int):
    """Per quasimomentum class: FFT indices and the lowest band eigenvectors."""
    j = np.fft.fftfreq(n_grid, 1.0 / n_grid).astype(int)
    # k = 2 j / n_periods; kappa class = j mod n_periods
    cls = np.mod(j, n_periods)
    classes = []
    for c in range(n_periods):
        idx = np.nonzero(cls == c)[0]
        idx = idx[np.argsort(j[idx])]
        k = 2.0 * j[idx] / n_periods
        h = np.diag(k**2 - 0.5 * U)
        off = np.full(len(idx) - 1, -0.25 * U)
        h = h + np.diag(off, 1) + np.diag(off, -1)
        _, vecs = np.linalg.eigh(h)
        classes.append((idx, vecs[:, :n_bands]))
    return classes


def bloch_decomposition(psi, params: ContinuumParams, n_bands: int = 3):
    """Band amplitudes ``c[b, class]`` of ``psi`` on the grid's Bloch basis (force-free)."""
    phat = sfft.fft(np.asarray(psi, dtype=complex)) / math.sqrt(params.n_grid)
    basis = _band_basis(float(params.U), params.n_grid, params.n_periods, n_bands)
    return np.array([vecs.conj().T @ phat[idx] for idx, vecs in basis]).T


def band_populations(psi, params: ContinuumParams, n_bands: int = 3) -> np.ndarray:
    """Fraction of the norm in each of the lowest ``n_bands`` bands."""
    c = bloch_decomposition(psi, params, n_bands)
    total = np.sum(np.abs(psi) ** 2)
    return (np.abs(c) ** 2).sum(axis=1) / total


def project_ground_band(psi, params: ContinuumParams) -> np.ndarray:
    phat = sfft.fft(np.asarray(psi, dtype=complex))
    out = np.zeros_like(phat)
    for idx, vecs in _band_basis(float(params.U), params.n_grid, params.n_periods, 1):
        v = vecs[:, 0]
        out[idx] = v * (v.conj() @ phat[idx])
    return sfft.ifft(out)


def prepare_ground_band_packet(params: ContinuumParams, sigma: float = 2 * PI,
                               max_loss: float = 0.1) -> np.ndarray:
    """Ground-band wave packet at rest centred on the well at ``z = 0``.

    A Gaussian envelope ``exp(-z^2 / (2 sigma^2))`` multiplies the periodic
    ``kappa = 0`` ground Bloch function; the product is projected onto the
    ground band of the force-free lattice and normalised.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    z = params.z
    n_pw = 41
    _, vecs = np.linalg.eigh(_bloch_matrix(0.0, params.U, n_pw))
    coef = vecs[:, 0]
    coef = coef * np.sign(coef[n_pw // 2] or 1.0)
    m = np.arange(n_pw) - n_pw // 2
    bloch = (coef[:, None] * np.exp(2j * np.outer(m, z))).sum(axis=0)
    psi = np.exp(-(z**2) / (2 * sigma**2)) * bloch
    before = np.sum(np.abs(psi) ** 2)
    psi = project_ground_band(psi, params)
    after = np.sum(np.abs(psi) ** 2)
    if after < (1 - max_loss) * before:
        raise ValueError(
            f"sigma={sigma:.3g} too small: ground-band projection keeps only {after / before:.1%}"
        )
    return psi / math.sqrt(after * params.dz)


# -- deterministic runs -------------------------------------------------------


@dataclass
class CoherentRun:
    """Record of a single deterministic grid evolution.

    ``absorbed_left``/``absorbed_right`` hold the probability removed by each
    absorber during the interval ending at the matching entry of ``t``.
    """

    t: np.ndarray
    P: np.ndarray
    v: np.ndarray
    z: np.ndarray
    disp: np.ndarray
    v2: np.ndarray
    norm: np.ndarray
    absorbed_left: np.ndarray
    absorbed_right: np.ndarray
    snapshots: np.ndarray | None = None
    z_grid: np.ndarray | None = field(default=None, repr=False)


def evolve_grid(params: ContinuumParams, psi0, t_total: float, dt: float,
                record_every: int = 1, keep_snapshots: bool = False) -> CoherentRun:
    """Coherent propagation (recoil noise off) with absorbed-flux bookkeeping.

    Observables are the windowed ones, ``v``, ``z`` and ``disp`` divided by
    the survival probability.
    """
    n_steps = round(t_total / dt)
    if abs(n_steps * dt - t_total) > 1e-9 * t_total:
        raise ValueError("t_total must be an integer multiple of dt")
    vhalf, kin, mask = _factors(params, dt)
    lost = 1.0 - mask**2
    left = params.z < 0
    psi = np.array(psi0, dtype=complex)
    rec = {k: [] for k in ("t", "P", "v", "z", "disp", "v2", "norm", "absorbed_left", "absorbed_right")}
    snaps = []
    acc_l = acc_r = 0.0

    def record(step):
        m = window_moments(psi, params)
        p = m["P"]
        zz = m["z"] / p
        rec["t"].append(step * dt)
        rec["P"].append(p)
        rec["v"].append(m["v"] / p)
        rec["z"].append(zz)
        rec["disp"].append(m["z2"] / p - zz**2)
        rec["v2"].append(m["v2"] / p)
        rec["norm"].append(m["norm"])
        rec["absorbed_left"].append(acc_l)
        rec["absorbed_right"].append(acc_r)
        if keep_snapshots:
            snaps.append(np.abs(psi) ** 2)

    record(0)
    for step in range(1, n_steps + 1):
        psi = sfft.ifft(sfft.fft(psi * vhalf) * kin) * vhalf
        dens = (psi.real**2 + psi.imag**2) * lost
        acc_l += dens[left].sum() * params.dz
        acc_r += dens[~left].sum() * params.dz
        psi *= mask
        if step % record_every == 0:
            if not np.all(np.isfinite(psi)):
                raise ArithmeticError(f"non-finite amplitudes at t={step * dt:.4g}")
            record(step)
            acc_l = acc_r = 0.0
    out = {k: np.array(v) for k, v in rec.items()}
    return CoherentRun(**out, snapshots=np.array(snaps) if keep_snapshots else None,
                       z_grid=params.z)


class ContinuumModel:
    """Trajectory model of the continuum system for :func:`run_ensemble`.

    The recoil projection ``u`` is rounded to the box momentum quantum
    ``2 pi / L`` so that ``exp(i u z)`` stays periodic on the grid and can be
    tabulated once; with the default box the quantum is ``1/64`` of a recoil
    momentum.  Series are normalised by the survival probability.
    """

    normalize = True

    def __init__(self, params: ContinuumParams, psi0=None, sigma: float = 2 * PI):
        self.params = params
        self.psi0 = prepare_ground_band_packet(params, sigma) if psi0 is None else np.asarray(psi0, complex)
        if self.psi0.shape != (params.n_grid,):
            raise ValueError("initial state does not match the grid")
        self.weights = params.window_weights()

    @property
    def gamma(self) -> float:
        return self.params.gamma

    @property
    def max_rate(self) -> float:
        p = self.params
        return max(abs(p.bloch_frequency), p.gamma, ground_band_width(p.U))

    @property
    def bloch_period(self):
        return self.params.bloch_period if self.params.force else None

    @property
    def u_quantum(self) -> float:
        return 2 * PI / (self.params.z_max - self.params.z_min)

    def initial_state(self):
        return self.psi0.copy()

    def stepper(self, dt: float, scheme: str = "split"):
        if scheme != "split":
            raise ValueError("the grid model only supports the split scheme")
        p = self.params
        vhalf, kin, mask = _factors(p, dt)
        z = p.z
        cz = np.cos(z)
        gamma = p.gamma
        base = vhalf * mask * (1.0 - 0.5 * gamma * dt * cz**2)
        q = self.u_quantum
        n_u = int(math.floor(1.0 / q + 1e-9))
        table = None
        if gamma > 0:
            us = q * np.arange(-n_u, n_u + 1)
            table = (vhalf * mask * math.sqrt(gamma) * cz) * np.exp(1j * np.outer(us, z))

        def step(psi, u, dxi):
            psi = psi * vhalf
            psi = sfft.ifft(sfft.fft(psi, axis=-1, overwrite_x=True) * kin, axis=-1, overwrite_x=True)
            if table is None:
                psi *= base
                return psi
            idx = np.rint(u / q).astype(int) + n_u
            f = table[idx]
            f *= dxi[:, None]
            f += base
            psi *= f
            return psi

        return step

    def measure(self, psi) -> dict:
        return window_moments(psi, self.params)

    def check(self, psi, t: float = 0.0) -> None:
        return None
