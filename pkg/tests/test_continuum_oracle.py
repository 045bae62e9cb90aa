"""Continuum trajectory ensembles against the exact density-matrix map.

The mean of one linear stochastic step is itself a linear map on
``rho(z, z')``: the Strang propagator on both sides, the masks, the
``1 - gamma dt cos^2 / 2`` drift factors and the recoil average
``gamma dt cos z cos z' E_u[exp(i u (z - z'))]`` over the grid-rounded ``u``.
Iterating that map on a small box (512 points) gives the exact ensemble
mean to compare with, at a damping time (gamma t = 6) long enough for the
trajectory weights to spread.
"""
import math

import numpy as np
import pytest

from blochdamp.continuum import ContinuumModel, ContinuumParams, absorbing_mask, prepare_ground_band_packet
from blochdamp.stochastic import SdeConfig, run_ensemble

PI = math.pi
P = ContinuumParams(U=4.0, force=0.025, gamma=0.05, z_min=-8 * PI, z_max=8 * PI, n_grid=512,
                    mask_width=2 * PI, window=4 * PI)
DT, T, EVERY = 0.0625, 120.0, 160


def _recoil_average(model, z):
    q = model.u_quantum
    n_u = int(math.floor(1.0 / q + 1e-9))
    us = q * np.arange(-n_u, n_u + 1)
    # u uniform on [-1, 1] rounded to the nearest multiple of q
    prob = np.full(len(us), q / 2)
    prob[[0, -1]] = (1.0 - (n_u - 0.5) * q) / 2
    dz = z[:, None] - z[None, :]
    return np.einsum("j,jab->ab", prob, np.exp(1j * us[:, None, None] * dz[None]))


def exact_series(model):
    p = model.params
    z = p.z
    vhalf = np.exp(-0.5j * DT * p.potential())
    kin = np.exp(-1j * DT * p.k**2)
    a = vhalf * absorbing_mask(p)
    c = np.cos(z)
    b = 1.0 - 0.5 * p.gamma * DT * c**2
    drift = np.outer(a * b, (a * b).conj())
    kick = p.gamma * DT * np.outer(a * c, (a * c).conj()) * _recoil_average(model, z)
    w = p.window_weights()

    def left(m):
        return np.fft.ifft(np.fft.fft(m, axis=0) * kin[:, None], axis=0)

    psi0 = model.initial_state()
    rho = np.outer(psi0, psi0.conj())
    out = {"t": [], "P": [], "v": []}
    n_steps = round(T / DT)
    for step in range(n_steps + 1):
        if step % EVERY == 0:
            dens = np.diagonal(rho).real
            drho = np.fft.ifft(1j * p.k[:, None] * np.fft.fft(rho, axis=0), axis=0)
            pw = dens @ w
            out["t"].append(step * DT)
            out["P"].append(pw)
            out["v"].append((-2j * np.diagonal(drho)).real @ w / pw)
        if step == n_steps:
            break
        x = vhalf[:, None] * rho * vhalf.conj()[None, :]
        x = left(left(x).conj().T).conj().T
        rho = (drift + kick) * x
    return {k: np.array(v) for k, v in out.items()}


@pytest.fixture(scope="module")
def exact():
    return exact_series(ContinuumModel(P, prepare_ground_band_packet(P, 2 * PI)))


def test_exact_map_is_trace_non_increasing(exact):
    assert np.all(np.diff(exact["P"]) < 0.05)
    assert exact["P"][-1] < exact["P"][0]


@pytest.mark.slow
@pytest.mark.parametrize("resample", [None, 16])
def test_ensemble_matches_exact(exact, resample):
    # weights are heavy-tailed at gamma t = 6, so 16 batches keep the error estimate honest
    model = ContinuumModel(P, prepare_ground_band_packet(P, 2 * PI))
    cfg = SdeConfig(dt=DT, t_total=T, n_traj=1600, seed=21, batch_size=100, output_every=EVERY,
                    resample_every=resample)
    s = run_ensemble(cfg, model)
    np.testing.assert_allclose(s.t, exact["t"])
    zp = np.abs(s.P[1:] - exact["P"][1:]) / s.P_err[1:]
    assert zp.max() < 4.0, zp
    assert exact["P"][-1] < 0.8
