"""Single-band lattice model in the Wannier basis.

Sites are labelled by centred integers ``l = -(N // 2), ..., N - 1 - N // 2``
so that the Stark term ``d F l`` vanishes on the middle site.  All energies
are in units where the reduced Planck constant equals one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np

from .stochastic import EdgeProximityError

__all__ = [
    "TBParams",
    "LatticeState",
    "site_indices",
    "build_tb_hamiltonian",
    "recoil_operator_tb",
    "recoil_phases",
    "position_operator_tb",
    "velocity_operator_tb",
    "coherent_bloch_reference",
    "gaussian_wannier_state",
    "hoppings_from_dispersion",
    "tb_dispersion",
    "evolve_coherent",
    "TightBindingModel",
]

HBAR = 1.0


@dataclass(frozen=True)
class TBParams:
    """Parameters of the tight-binding model.

    Parameters
    ----------
    hopping : float
        Nearest-neighbour hopping ``Delta``; the band is ``-Delta cos(d kappa)``.
    period : float
        Lattice period ``d``.
    force : float
        Static force ``F``.
    gamma : float
        Spontaneous emission rate.
    n_sites : int
        Number of Wannier sites ``N`` (hard walls beyond).
    extra_hoppings : tuple of float
        Hoppings ``Delta_s`` for ``s = 2, 3, ...``; the coupling between sites
        ``l`` and ``l + s`` is ``-Delta_s / 2``.
    """

    hopping: float = 1.0
    period: float = math.pi
    force: float = 0.0
    gamma: float = 0.0
    n_sites: int = 201
    extra_hoppings: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "extra_hoppings", tuple(float(x) for x in self.extra_hoppings))
        if int(self.n_sites) != self.n_sites or self.n_sites < 3:
            raise ValueError(f"n_sites must be an integer >= 3, got {self.n_sites}")
        values = (self.hopping, self.period, self.force, self.gamma) + self.extra_hoppings
        if not all(math.isfinite(x) for x in values):
            raise ValueError("tight-binding parameters must be finite")
        if self.period <= 0:
            raise ValueError("lattice period must be positive")
        if self.gamma < 0:
            raise ValueError("emission rate must be non-negative")
        if len(self.extra_hoppings) >= self.n_sites:
            raise ValueError("more hopping ranges than the lattice can hold")

    @property
    def hbar(self) -> float:
        return HBAR

    @property
    def bloch_frequency(self) -> float:
        """``omega_B = d F / hbar`` (signed)."""
        return self.period * self.force / HBAR

    @property
    def bloch_period(self) -> float:
        w = abs(self.bloch_frequency)
        if w == 0:
            raise ValueError("Bloch period is undefined for zero force")
        return 2 * math.pi / w

    @property
    def v0(self) -> float:
        """Velocity amplitude ``d Delta / hbar``."""
        return self.period * self.hopping / HBAR

    @property
    def hoppings(self) -> tuple[float, ...]:
        """``(Delta_1, Delta_2, ...)``."""
        return (self.hopping,) + self.extra_hoppings

    @property
    def bandwidth(self) -> float:
        """Width of the dispersion ``max - min`` over the Brillouin zone."""
        kappa = np.linspace(-1, 1, 513) * math.pi / self.period
        eps = tb_dispersion(kappa, self.hoppings, self.period)
        return float(eps.max() - eps.min())

    def with_(self, **changes) -> "TBParams":
        return replace(self, **changes)


@dataclass
class LatticeState:
    """Amplitudes on Wannier sites; ``amplitudes[j]`` belongs to site ``j + origin``.

    The norm is deliberately not constrained: the linear unravelling lets it
    drift on individual trajectories.
    """

    amplitudes: np.ndarray
    origin: int = 0

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.ndim != 1:
            raise ValueError("amplitudes must be one-dimensional")
        if not np.all(np.isfinite(self.amplitudes)):
            raise ValueError("amplitudes must be finite")

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.amplitudes.size) + self.origin

    @property
    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)


def site_indices(n_sites: int) -> np.ndarray:
    """Centred site labels for an ``n_sites`` lattice."""
    return np.arange(n_sites) - n_sites // 2


def build_tb_hamiltonian(params: TBParams) -> np.ndarray:
    """Dense Hamiltonian ``H[l, m] = -Delta_s/2 (|l-m| = s) + d F l delta_lm``."""
    n = params.n_sites
    h = np.diag(params.period * params.force * site_indices(n)).astype(complex)
    for s, delta in enumerate(params.hoppings, start=1):
        if delta == 0.0:
            continue
        off = np.full(n - s, -0.5 * delta)
        h += np.diag(off, s) + np.diag(off, -s)
    return h


def recoil_phases(u, n_sites: int) -> np.ndarray:
    """Diagonal of the lattice recoil operator, ``(-1)^l exp(i pi u l)``.

    ``u`` may be an array; the result then has shape ``u.shape + (n_sites,)``.
    The sign factor is folded into the phase as ``exp(i pi (1 + u) l)``.
    """
    u = np.asarray(u, dtype=float)
    if np.any(np.abs(u) > 1):
        raise ValueError("recoil projection must satisfy |u| <= 1")
    l = site_indices(n_sites)
    return np.exp(1j * np.pi * np.multiply.outer(1.0 + u, l))


def recoil_operator_tb(u: float, n_sites: int) -> np.ndarray:
    """Recoil operator as a dense diagonal matrix."""
    return np.diag(recoil_phases(u, n_sites))


def position_operator_tb(params: TBParams) -> np.ndarray:
    return np.diag(params.period * site_indices(params.n_sites)).astype(complex)


def velocity_operator_tb(params: TBParams) -> np.ndarray:
    """Velocity ``v = (i/hbar)[H, z]``.

    For nearest-neighbour hopping this is
    ``v[l, m] = (d Delta / 2 hbar)(i delta_{l,m+1} - i delta_{l,m-1})``.
    Extended hoppings contribute ``s``-fold longer lever arms.
    """
    n = params.n_sites
    v = np.zeros((n, n), dtype=complex)
    for s, delta in enumerate(params.hoppings, start=1):
        amp = 0.5 * params.period * s * delta / HBAR
        v += np.diag(np.full(n - s, 1j * amp), -s) + np.diag(np.full(n - s, -1j * amp), s)
    return v


def coherent_bloch_reference(params: TBParams, t):
    """Undamped Bloch oscillation ``v = v0 sin(w_B t)``, ``z = (Delta/F) cos(w_B t)``.

    The two formulas are returned as commonly quoted.  Note that ``dz/dt``
    of this ``z`` is ``-v``: with the Stark term ``+d F l`` the simulated
    velocity follows ``-v0 sin(w_B t)``.
    """
    if params.force == 0:
        raise ValueError("position oscillation requires a non-zero force")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    w = params.bloch_frequency
    v = params.v0 * np.sin(w * t)
    z = params.hopping / params.force * np.cos(w * t)
    return v, z


def gaussian_wannier_state(params: TBParams, width2: float = 100.0, center: int = 0) -> np.ndarray:
    """Normalised ``psi_l ~ exp(-(l - center)^2 / width2)``."""
    l = site_indices(params.n_sites)
    psi = np.exp(-((l - center) ** 2) / width2).astype(complex)
    return psi / np.linalg.norm(psi)


def tb_dispersion(kappa, hoppings, period: float = math.pi, offset: float = 0.0) -> np.ndarray:
    """``eps(kappa) = offset - sum_s Delta_s cos(s d kappa)``."""
    kappa = np.asarray(kappa, dtype=float)
    eps = np.full(kappa.shape, float(offset))
    for s, delta in enumerate(hoppings, start=1):
        eps -= delta * np.cos(s * period * kappa)
    return eps


def hoppings_from_dispersion(energies, rel_tol: float = 1e-6):
    """Hopping coefficients from a dispersion sampled over one Brillouin zone.

    ``energies`` are samples of ``eps(kappa)`` on a uniform periodic grid with
    ``d kappa`` running over ``[-pi, pi)`` (no duplicated endpoint).  Returns
    ``(offset, hoppings)`` such that ``eps = offset - sum_s Delta_s cos(s d kappa)``.
    The series is cut before the first coefficient whose magnitude drops below
    ``rel_tol`` times the leading one.
    """
    eps = np.asarray(energies, dtype=float)
    n = eps.size
    if n < 4:
        raise ValueError("need at least four dispersion samples")
    # samples sit at d*kappa = -pi + 2 pi j / n; undo that shift before the DFT
    phase = np.exp(1j * np.pi * np.arange(n // 2 + 1))
    coeff = np.fft.rfft(eps) / n * phase
    offset = float(coeff[0].real)
    cos_coeff = 2 * coeff[1:].real
    if n % 2 == 0:
        cos_coeff[-1] /= 2
    deltas = -cos_coeff
    if abs(deltas[0]) <= 1e-13 * max(np.abs(eps).max(), 1.0):
        return offset, ()
    small = np.nonzero(np.abs(deltas) < rel_tol * abs(deltas[0]))[0]
    cut = small[0] if small.size else deltas.size
    return offset, tuple(float(x) for x in deltas[:cut])


def evolve_coherent(params: TBParams, psi0, times) -> np.ndarray:
    """Exact ``exp(-i H t) psi0`` for each time; returns ``(len(times), N)``."""
    energies, vecs = np.linalg.eigh(build_tb_hamiltonian(params))
    c0 = vecs.conj().T @ np.asarray(psi0, dtype=complex)
    phases = np.exp(-1j * np.multiply.outer(np.asarray(times, dtype=float), energies) / HBAR)
    return (phases * c0) @ vecs.T


def _site_powers(z, n_sites: int) -> np.ndarray:
    """``z**l`` on centred sites for unit-modulus ``z`` (one row per entry).

    Repeated multiplication is several times cheaper than a complex
    exponential per site; the rounding error stays at the 1e-14 level.
    """
    half = n_sites // 2
    k = max(half, n_sites - 1 - half)
    pw = np.empty((z.size, k + 1), dtype=complex)
    pw[:, 0] = 1.0
    pw[:, 1:] = z[:, None]
    np.cumprod(pw, axis=1, out=pw)
    return np.concatenate([pw[:, half:0:-1].conj(), pw[:, : n_sites - half]], axis=1)


def _propagator(h: np.ndarray, dt: float) -> np.ndarray:
    energies, vecs = np.linalg.eigh(h)
    return (vecs * np.exp(-1j * energies * dt / HBAR)) @ vecs.conj().T


class TightBindingModel:
    """Trajectory model for :func:`blochdamp.stochastic.run_ensemble`.

    The default ``split`` scheme applies the exact one-step propagator
    ``exp(-i H dt)`` and then the Euler-Maruyama recoil increment; because
    ``L_u^+ L_u = 1`` on the lattice the increment is
    ``psi <- (1 - gamma dt / 2) psi + sqrt(gamma) dxi L_u psi``.

    Parameters
    ----------
    params : TBParams
    psi0 : array_like, optional
        Initial amplitudes; defaults to ``exp(-l^2/100)``, normalised.
    edge_sites, edge_tol : int, float
        Abort when the ensemble weight on the outermost ``edge_sites`` sites
        at either end exceeds ``edge_tol`` of the total.  ``edge_sites=0``
        disables the monitor (tiny oracle lattices).
    """

    normalize = False

    def __init__(self, params: TBParams, psi0=None, edge_sites: int = 10, edge_tol: float = 1e-6):
        self.params = params
        self.n = params.n_sites
        if psi0 is None:
            psi0 = gaussian_wannier_state(params)
        psi0 = np.asarray(psi0, dtype=complex)
        if psi0.shape != (self.n,):
            raise ValueError(f"initial state must have {self.n} amplitudes")
        self.psi0 = psi0
        self.edge_sites = int(edge_sites)
        if 2 * self.edge_sites >= self.n:
            raise ValueError("edge monitor covers the whole lattice")
        self.edge_tol = edge_tol
        self.h = build_tb_hamiltonian(params)
        self.vel = velocity_operator_tb(params)
        self.zl = params.period * site_indices(self.n).astype(float)
        self.sites = site_indices(self.n)

    @property
    def gamma(self) -> float:
        return self.params.gamma

    @property
    def max_rate(self) -> float:
        p = self.params
        return max(abs(p.bloch_frequency), p.gamma, p.bandwidth / HBAR)

    @property
    def bloch_period(self):
        return self.params.bloch_period if self.params.force else None

    def initial_state(self) -> np.ndarray:
        return self.psi0.copy()

    def recoil(self, u):
        return recoil_phases(u, self.n)

    def stepper(self, dt: float, scheme: str = "split"):
        gamma = self.gamma
        if scheme == "split":
            ut = _propagator(self.h, dt).T
            damp = 1.0 - 0.5 * gamma * dt
            sg = math.sqrt(gamma)

            def step(psi, u, dxi):
                psi = psi @ ut
                if gamma > 0:
                    kick = _site_powers(np.exp(1j * np.pi * (1.0 + u)), self.n)
                    kick *= (sg * dxi)[:, None]
                    kick += damp
                    psi *= kick
                return psi

            return step
        from .stochastic import sde_step

        h = self.h

        def step(psi, u, dxi):
            return sde_step(psi, h, self.recoil, gamma, dt, noise=(u, dxi), scheme=scheme)

        return step

    def measure(self, psi) -> dict:
        w = psi.real**2 + psi.imag**2
        vpsi = psi @ self.vel.T
        norm = w.sum(axis=1)
        return {
            "norm": norm,
            "P": norm,
            "z": w @ self.zl,
            "z2": w @ self.zl**2,
            "v": (psi.conj() * vpsi).real.sum(axis=1),
            "v2": (vpsi.real**2 + vpsi.imag**2).sum(axis=1),
        }

    def check(self, psi, t: float = 0.0) -> None:
        k = self.edge_sites
        if k == 0:
            return
        w = psi.real**2 + psi.imag**2
        total = w.sum()
        left, right = w[:, :k].sum(), w[:, -k:].sum()
        if total > 0 and max(left, right) > self.edge_tol * total:
            side = "left" if left > right else "right"
            raise EdgeProximityError(
                f"t={t:.4g}: weight {max(left, right) / total:.2e} within {k} sites of the "
                f"{side} edge exceeds {self.edge_tol:.0e}; enlarge n_sites (now {self.n})"
            )
