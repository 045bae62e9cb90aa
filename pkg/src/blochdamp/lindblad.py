"""Single-band master equation in the Wannier basis.

With the lattice recoil operator and a flat distribution of ``u`` the
dissipator reduces to pure dephasing of every coherence between different
sites, so the equation of motion is

    d rho/dt = -i [H, rho] - gamma (rho - diag(rho)).

``rho[n, m]`` is stored as ``<n|rho|m>``.  Written out, the hopping term is
``(i Delta/2) sum_+- (rho[n+-1, m] - rho[n, m+-1])`` for the Hamiltonian of
:func:`blochdamp.tight_binding.build_tb_hamiltonian`; the often-quoted form
with the opposite hopping sign describes the same physics with ``Delta -> -Delta``.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
import os

import numpy as np

from .stochastic import DT_GUARD
from .tight_binding import (
    HBAR,
    TBParams,
    position_operator_tb,
    site_indices,
    velocity_operator_tb,
)

__all__ = [
    "MAX_SITES",
    "MasterEquationResult",
    "pure_density_matrix",
    "lindblad_rhs",
    "evolve_master_equation",
    "expectation",
    "observables_from_rho",
    "stationary_offdiagonal_estimate",
    "predicted_nearest_coherence",
    "diffusion_coefficient",
    "hopping_rate",
    "offdiagonal_mass_profile",
    "write_density_matrix",
    "read_density_matrix",
]

MAX_SITES = 512
TRACE_TOL = 1e-8
HERMITIAN_TOL = 1e-8
POSITIVITY_TOL = 1e-8


@dataclass
class MasterEquationResult:
    t: np.ndarray
    rho: np.ndarray  # (n_snapshots, N, N)
    min_eigenvalue: np.ndarray

    def __len__(self):
        return len(self.t)

    def at(self, time: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.t - time)))
        return self.rho[i]


def pure_density_matrix(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def _hop(rho, params: TBParams):
    """``H_hop rho - rho H_hop`` using the banded structure of the hopping."""
    out = np.zeros_like(rho)
    for s, delta in enumerate(params.hoppings, start=1):
        if delta == 0.0:
            continue
        c = -0.5 * delta
        out[:-s, :] += c * rho[s:, :]
        out[s:, :] += c * rho[:-s, :]
        out[:, :-s] -= c * rho[:, s:]
        out[:, s:] -= c * rho[:, :-s]
    return out


def lindblad_rhs(rho, params: TBParams, _stark=None):
    """Time derivative of ``rho`` under the single-band master equation."""
    if _stark is None:
        _stark = _stark_matrix(params)
    d = -1j / HBAR * (_hop(rho, params) + _stark * rho)
    diag = np.diagonal(rho).copy()
    d -= params.gamma * rho
    d[np.diag_indices_from(d)] += params.gamma * diag
    return d


def _hop_rhs(rho, params):
    return -1j / HBAR * _hop(rho, params)


def _stark_matrix(params: TBParams):
    e = params.period * params.force * site_indices(params.n_sites)
    return np.subtract.outer(e, e)


def _validate_rho(rho, tol=HERMITIAN_TOL):
    herm = np.abs(rho - rho.conj().T).max()
    if herm > tol:
        raise ValueError(f"density matrix not Hermitian (deviation {herm:.2e})")
    tr = np.trace(rho).real
    if abs(tr - 1) > TRACE_TOL:
        raise ValueError(f"density matrix trace {tr!r} differs from 1")


def evolve_master_equation(rho0, params: TBParams, t_total: float, dt: float,
                           snapshot_every: float | None = None,
                           check_positivity: bool = True) -> MasterEquationResult:
    """Integrate the single-band master equation with integrating-factor RK4.

    The Stark rotation and the dephasing act element-wise and are applied
    exactly; the hopping commutator is advanced by the classical fourth-order
    Runge-Kutta stages in that interaction picture (Lawson's scheme).  Plain
    RK4 would go unstable on the far off-diagonals, which rotate at
    ``w_B (N - 1)``.

    Parameters
    ----------
    rho0 : (N, N) array
        Initial density matrix; must be Hermitian, unit trace and positive.
    params : TBParams
    t_total, dt : float
        Run length and step; ``dt`` obeys the same guard as the trajectory
        engine, ``dt * max(|w_B|, gamma, bandwidth) <= 0.05``.
    snapshot_every : float, optional
        Spacing of stored snapshots (a multiple of ``dt``); defaults to
        ``t_total / 100``.

    Memory is ``O(N^2)`` per snapshot and ``N`` is capped at 512.
    """
    n = params.n_sites
    if n > MAX_SITES:
        raise ValueError(f"dense density matrices are capped at {MAX_SITES} sites")
    rho = np.array(rho0, dtype=complex)
    if rho.shape != (n, n):
        raise ValueError(f"rho0 must be {n}x{n}")
    _validate_rho(rho)
    if np.linalg.eigvalsh(rho).min() < -POSITIVITY_TOL:
        raise ValueError("initial density matrix is not positive semidefinite")
    rate = max(abs(params.bloch_frequency), params.gamma, params.bandwidth / HBAR)
    if dt * rate > DT_GUARD * (1 + 1e-12):
        raise ValueError(f"dt={dt} violates the step guard (dt * rate = {dt * rate:.3g})")
    n_steps = round(t_total / dt)
    if n_steps < 1 or abs(n_steps * dt - t_total) > 1e-9 * t_total:
        raise ValueError("t_total must be a positive integer multiple of dt")
    every = n_steps // 100 if snapshot_every is None else round(snapshot_every / dt)
    every = max(every, 1)

    stark = _stark_matrix(params)
    decay = -1j / HBAR * stark - params.gamma * (1.0 - np.eye(n))
    e_half = np.exp(0.5 * dt * decay)
    e_full = e_half * e_half
    times, snaps, mins = [], [], []

    def store(step):
        herm = np.abs(rho - rho.conj().T).max()
        tr = np.trace(rho).real
        if herm > HERMITIAN_TOL or abs(tr - 1) > TRACE_TOL:
            raise ArithmeticError(
                f"t={step * dt:.4g}: trace drift {tr - 1:.2e}, Hermiticity error {herm:.2e}"
            )
        lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0] if check_positivity else np.nan
        if lam < -POSITIVITY_TOL:
            raise ArithmeticError(f"t={step * dt:.4g}: negative eigenvalue {lam:.2e}")
        times.append(step * dt)
        snaps.append(rho.copy())
        mins.append(lam)

    store(0)
    for step in range(1, n_steps + 1):
        k1 = _hop_rhs(rho, params)
        k2 = _hop_rhs(e_half * (rho + 0.5 * dt * k1), params)
        k3 = _hop_rhs(e_half * rho + 0.5 * dt * k2, params)
        k4 = _hop_rhs(e_full * rho + dt * e_half * k3, params)
        rho = e_full * (rho + dt / 6.0 * k1) + dt / 6.0 * (e_half * (2 * k2 + 2 * k3) + k4)
        if step % every == 0 or step == n_steps:
            store(step)
    return MasterEquationResult(np.array(times), np.array(snaps), np.array(mins))


def expectation(rho, op) -> float:
    return float(np.einsum("ij,ji->", op, rho).real)


def observables_from_rho(rho_stack, params: TBParams) -> dict:
    """``<v>``, ``<z>``, ``<v^2>``, ``<z^2>`` and dispersion for each snapshot."""
    v = velocity_operator_tb(params)
    z = np.diag(position_operator_tb(params)).real
    rho_stack = np.asarray(rho_stack)
    pops = np.einsum("kii->ki", rho_stack).real
    out = {
        "v": np.einsum("ij,kji->k", v, rho_stack).real,
        "v2": np.einsum("ij,kji->k", v @ v, rho_stack).real,
        "z": pops @ z,
        "z2": pops @ z**2,
    }
    out["disp"] = out["z2"] - out["z"] ** 2
    return out


def stationary_offdiagonal_estimate(populations, params: TBParams):
    """Quasi-stationary nearest coherence ``(i Delta/2) (p[n+1] - p[n]) / (i w_B + gamma)``.

    ``populations`` are consecutive diagonal elements; the result has one
    entry per neighbouring pair.  This is the estimate for the hopping sign
    convention ``+Delta/2``; for the Hamiltonian used throughout this package
    it equals ``-rho[n+1, n]`` (see :func:`predicted_nearest_coherence`).
    """
    p = np.asarray(populations, dtype=complex)
    diff = p[1:] - p[:-1]
    return 0.5j * params.hopping / HBAR * diff / (1j * params.bloch_frequency + params.gamma)


def predicted_nearest_coherence(rho, params: TBParams):
    """Quasi-stationary prediction of ``rho[n+1, n]`` from the diagonal of ``rho``."""
    return -stationary_offdiagonal_estimate(np.diagonal(rho).real, params)


def diffusion_coefficient(v_st2: float, gamma: float, omega_b: float) -> float:
    """``D = 2 v_st^2 gamma / (w_B^2 + gamma^2)`` so that ``<dz^2> ~ D t``."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    denom = omega_b**2 + gamma**2
    if denom == 0:
        raise ValueError("no force and no noise: motion is ballistic, not diffusive")
    return 2.0 * v_st2 * gamma / denom


def hopping_rate(params: TBParams) -> float:
    """Site-to-site rate ``(Delta/2 hbar)^2 2 gamma / (w_B^2 + gamma^2)`` of the
    population rate equation; ``D = 2 d^2 * rate``."""
    w, g = params.bloch_frequency, params.gamma
    return (params.hopping / (2 * HBAR)) ** 2 * 2 * g / (w**2 + g**2)


def offdiagonal_mass_profile(rho) -> np.ndarray:
    """``profile[k] = sum_n |rho[n, n+k]|`` for ``k = 0 .. N-1``."""
    rho = np.asarray(rho)
    n = rho.shape[0]
    return np.array([np.abs(np.diagonal(rho, k)).sum() for k in range(n)])


# -- dumps --------------------------------------------------------------------

DUMP_MAGIC = "# blochdamp density matrix v1"


def write_density_matrix(path, rho, t: float) -> None:
    """Dense text dump: two header lines, then one line per row of ``re im`` pairs.

    ::

        # blochdamp density matrix v1
        # N=<N> t=<t>
        re(rho[0,0]) im(rho[0,0]) re(rho[0,1]) im(rho[0,1]) ...

    Values use ``repr`` precision, so a dump reads back bit-exactly.
    """
    rho = np.asarray(rho, dtype=complex)
    n = rho.shape[0]
    tmp = f"{path}.part"
    with open(tmp, "w") as fh:
        fh.write(f"{DUMP_MAGIC}\n# N={n} t={float(t)!r}\n")
        pairs = np.empty((n, 2 * n))
        pairs[:, 0::2] = rho.real
        pairs[:, 1::2] = rho.imag
        for row in pairs:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")
    os.replace(tmp, path)


def read_density_matrix(path):
    with open(path) as fh:
        if fh.readline().rstrip("\n") != DUMP_MAGIC:
            raise ValueError(f"{path} is not a density-matrix dump")
        head = dict(item.split("=") for item in fh.readline().lstrip("# ").split())
        n, t = int(head["N"]), float(head["t"])
        data = np.loadtxt(fh, ndmin=2)
    if data.shape != (n, 2 * n):
        raise ValueError(f"expected {n} rows of {2 * n} numbers, got {data.shape}")
    return data[:, 0::2] + 1j * data[:, 1::2], t
