import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blochdamp.tight_binding import (
    LatticeState,
    TBParams,
    build_tb_hamiltonian,
    coherent_bloch_reference,
    evolve_coherent,
    gaussian_wannier_state,
    hoppings_from_dispersion,
    recoil_operator_tb,
    recoil_phases,
    site_indices,
    tb_dispersion,
    velocity_operator_tb,
)


def bloch_wave(n, kappa, period=math.pi):
    l = site_indices(n)
    return np.exp(1j * kappa * period * l) / math.sqrt(n)


class TestParams:
    def test_bloch_frequency_is_derived(self):
        p = TBParams(force=-0.1)
        assert p.bloch_frequency == pytest.approx(-0.1 * math.pi)
        assert p.bloch_period == pytest.approx(20.0)

    @pytest.mark.parametrize("kw", [{"n_sites": 2}, {"gamma": -1.0}, {"period": 0.0}, {"hopping": math.nan}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TBParams(**kw)

    def test_zero_force_has_no_period(self):
        with pytest.raises(ValueError):
            TBParams().bloch_period

    def test_lattice_state_norm_unconstrained(self):
        s = LatticeState(np.array([2.0, 0.0, 1j]), origin=-1)
        assert s.norm == pytest.approx(5.0)
        assert list(s.sites) == [-1, 0, 1]


class TestHamiltonian:
    def test_three_site_hopping(self):
        h = build_tb_hamiltonian(TBParams(n_sites=3))
        expected = np.array([[0, -0.5, 0], [-0.5, 0, -0.5], [0, -0.5, 0]])
        np.testing.assert_array_equal(h, expected)

    def test_three_site_stark(self):
        h = build_tb_hamiltonian(TBParams(hopping=0.0, force=0.1, n_sites=3))
        np.testing.assert_allclose(h, np.diag([-0.1 * math.pi, 0, 0.1 * math.pi]), atol=1e-15)

    def test_spectrum_fills_cosine_band(self):
        n = 201
        ev = np.linalg.eigvalsh(build_tb_hamiltonian(TBParams(n_sites=n)))
        # hard-wall standing waves: kappa d = pi j / (N + 1)
        j = np.arange(1, n + 1)
        np.testing.assert_allclose(np.sort(ev), np.sort(-np.cos(np.pi * j / (n + 1))), atol=1e-12)

    def test_extended_hoppings(self):
        h = build_tb_hamiltonian(TBParams(n_sites=5, extra_hoppings=(0.2,)))
        assert h[0, 2] == -0.1 and h[2, 0] == -0.1 and h[0, 3] == 0

    @given(st.floats(-1, 1), st.floats(0.01, 3), st.integers(3, 40))
    @settings(max_examples=30, deadline=None)
    def test_hermitian(self, force, hop, n):
        h = build_tb_hamiltonian(TBParams(hopping=hop, force=force, n_sites=n))
        np.testing.assert_array_equal(h, h.conj().T)


class TestRecoil:
    def test_u0_alternates(self):
        np.testing.assert_allclose(np.diag(recoil_operator_tb(0.0, 5)), [1, -1, 1, -1, 1], atol=1e-15)

    def test_u1_identity(self):
        np.testing.assert_allclose(recoil_phases(1.0, 7), np.ones(7), atol=1e-14)

    def test_half_at_site_two(self):
        ph = recoil_phases(0.5, 5)
        assert ph[site_indices(5).tolist().index(2)] == pytest.approx(-1.0)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            recoil_phases(1.5, 3)

    @given(st.floats(-1, 1))
    def test_unitary(self, u):
        np.testing.assert_allclose(np.abs(recoil_phases(u, 9)), 1.0, atol=1e-14)


class TestVelocity:
    @pytest.mark.parametrize("kappa", [0.13, 0.4, -0.7])
    def test_bloch_wave(self, kappa):
        n = 400
        p = TBParams(n_sites=n)
        psi = bloch_wave(n, kappa)
        v = np.vdot(psi, velocity_operator_tb(p) @ psi).real
        # the boundary rows miss one neighbour each: O(1/N)
        assert v == pytest.approx(math.pi * math.sin(math.pi * kappa), abs=3 * math.pi / n)

    def test_uniform_state(self):
        psi = bloch_wave(51, 0.0)
        assert abs(np.vdot(psi, velocity_operator_tb(TBParams(n_sites=51)) @ psi)) < 1e-14

    def test_no_hopping(self):
        assert not velocity_operator_tb(TBParams(hopping=0.0, n_sites=7)).any()

    def test_commutator(self):
        p = TBParams(n_sites=11, extra_hoppings=(0.3,), force=0.2)
        h = build_tb_hamiltonian(p)
        z = np.diag(p.period * site_indices(11))
        np.testing.assert_allclose(velocity_operator_tb(p), 1j * (h @ z - z @ h), atol=1e-13)


class TestCoherentReference:
    p = TBParams(force=-0.1)

    def test_t0(self):
        v, z = coherent_bloch_reference(self.p, 0.0)
        assert v == 0 and z == pytest.approx(self.p.hopping / self.p.force)

    def test_quarter_period(self):
        w = abs(self.p.bloch_frequency)
        v, _ = coherent_bloch_reference(self.p.with_(force=0.1), math.pi / (2 * w))
        assert v == pytest.approx(math.pi)

    def test_periodic(self):
        tb = self.p.bloch_period
        a = coherent_bloch_reference(self.p, 0.0)
        b = coherent_bloch_reference(self.p, tb)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_simulated_velocity_is_minus_reference(self):
        p = TBParams(force=-0.1, n_sites=127)
        t = np.linspace(0, 20, 41)
        states = evolve_coherent(p, gaussian_wannier_state(p, 100.0), t)
        v = np.einsum("ti,ij,tj->t", states.conj(), velocity_operator_tb(p), states).real
        v_ref, _ = coherent_bloch_reference(p, t)
        # neighbour overlap of exp(-l^2/100) reduces the amplitude by exp(-1/200)
        np.testing.assert_allclose(v, -v_ref * math.exp(-1 / 200), atol=1e-9)


class TestDispersion:
    def test_exact_cosine(self):
        kd = -np.pi + 2 * np.pi * np.arange(64) / 64
        offset, hop = hoppings_from_dispersion(-np.cos(kd))
        assert offset == pytest.approx(0, abs=1e-14)
        assert hop == pytest.approx((1.0,))

    def test_constant_band(self):
        offset, hop = hoppings_from_dispersion(np.full(32, 3.5))
        assert offset == pytest.approx(3.5) and hop == ()

    @given(st.lists(st.floats(-2, 2), min_size=1, max_size=5), st.floats(-3, 3))
    @settings(max_examples=40, deadline=None)
    def test_roundtrip(self, hops, offset):
        hops = [h if abs(h) > 1e-3 else 1e-3 for h in hops]
        kappa = -1 + 2 * np.arange(64) / 64
        eps = tb_dispersion(kappa, hops, math.pi, offset)
        off2, hop2 = hoppings_from_dispersion(eps, rel_tol=1e-9)
        assert off2 == pytest.approx(offset, abs=1e-12)
        np.testing.assert_allclose(hop2[: len(hops)], hops, atol=1e-12)


def test_gaussian_state():
    p = TBParams(n_sites=41)
    psi = gaussian_wannier_state(p, 4.0, center=2)
    assert np.linalg.norm(psi) == pytest.approx(1.0)
    assert site_indices(41)[np.argmax(abs(psi))] == 2


def test_evolve_coherent_unitary():
    p = TBParams(force=0.3, n_sites=31)
    s = evolve_coherent(p, gaussian_wannier_state(p, 9.0), [0.0, 1.0, 17.0])
    np.testing.assert_allclose(np.linalg.norm(s, axis=1), 1.0, atol=1e-12)
