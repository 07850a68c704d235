import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from crwfisher.model import ModelSpec, initial_density
from crwfisher.reference import (nz_default_dt, nz_generator, nz_integrate, nz_inverse_laplace, nz_kernels,
                                 nz_laplace_transfer, rwa_decoherence_factor, rwa_density, rwa_density_shift,
                                 rwa_fisher)

# mpmath, 30 digits: G at gamma=0.1, lambda=0.5, t=10
G_PRINTED = 0.142272087439451436742755739639
G_STANDARD = 0.650304548282080292922293229075
RHO0 = initial_density(math.pi / 4)


def spec(chi=1.0, gamma=0.1, ratio=1.5, delta=0.1, bath="boson"):
    return ModelSpec.from_config(dict(delta_thz=delta, chi=chi, bath=bath, gamma_cm1=gamma,
                                      lambda_over_gamma=ratio, phi=math.pi / 4))


class TestDecoherenceFactor:
    def test_reference_values(self):
        assert rwa_decoherence_factor(10.0, 0.1, 0.5, "printed") == pytest.approx(G_PRINTED, rel=1e-13)
        assert rwa_decoherence_factor(10.0, 0.1, 0.5, "standard") == pytest.approx(G_STANDARD, rel=1e-13)

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            rwa_decoherence_factor(1.0, 0.1, 0.5, "other")

    def test_initial_value_and_slope(self):
        for gamma, lam in ((0.1, 0.5), (1.0, 0.3), (0.2, 0.4)):
            assert rwa_decoherence_factor(0.0, gamma, lam) == 1.0
            h = 1e-4
            slope = (rwa_decoherence_factor(h, gamma, lam) - 1) / h
            assert abs(slope) < 1e-3  # G'(0) = 0, G''(0) = -gamma lambda / 2

    def test_continuous_across_critical_damping(self):
        # lambda = 2 gamma makes the frequency vanish
        t = np.linspace(0, 40, 401)
        at = rwa_decoherence_factor(t, 0.1, 0.2)
        near = rwa_decoherence_factor(t, 0.1, 0.2 * (1 + 1e-7))
        assert np.abs(at - near).max() < 1e-6

    @given(st.floats(1e-3, 2), st.floats(1e-3, 2), st.floats(0, 200))
    def test_bounded(self, gamma, lam, t):
        assert abs(rwa_decoherence_factor(t, gamma, lam)) <= 1 + 1e-12

    def test_solves_its_ode(self):
        # G'' + lam G' + (gamma lam / 2) G = 0 follows from the exponential memory kernel
        gamma, lam, h = 0.3, 0.2, 1e-3
        t = np.linspace(0.5, 30, 50)
        g = lambda x: rwa_decoherence_factor(x, gamma, lam)
        d1 = (g(t + h) - g(t - h)) / (2 * h)
        d2 = (g(t + h) - 2 * g(t) + g(t - h)) / h**2
        assert np.abs(d2 + lam * d1 + 0.5 * gamma * lam * g(t)).max() < 1e-6


class TestRwaSolution:
    def test_density_is_physical(self):
        rho = rwa_density(np.linspace(0, 200, 50), RHO0, spec(gamma=0.75))
        assert np.allclose(np.trace(rho, axis1=1, axis2=2), 1)
        assert np.linalg.eigvalsh(rho).min() > -1e-14

    def test_shift_equals_difference(self):
        s = spec(gamma=0.3)
        t = np.linspace(0, 50, 101)
        shifted = s.replace(delta=s.delta + 1e-3)
        direct = rwa_density(t, RHO0, shifted) - rwa_density(t, RHO0, s)
        assert np.abs(rwa_density_shift(t, RHO0, s, 1e-3) - direct).max() < 1e-13

    def test_closed_form_fisher_against_bloch_formulas(self):
        from crwfisher.fisher import cfi_z_measurement, qfi_from_bloch
        from crwfisher.model import bloch_from_density
        s = spec(gamma=0.3)
        t = np.linspace(0.3, 60, 40)
        h = 1e-6 * s.delta
        r = bloch_from_density(rwa_density(t, RHO0, s))
        dr = bloch_from_density((rwa_density_shift(t, RHO0, s, h) - rwa_density_shift(t, RHO0, s, -h)) / (2 * h))
        cfi, qfi = rwa_fisher(t, s)
        assert np.allclose(qfi_from_bloch(r, dr), qfi, rtol=1e-8)
        assert np.allclose(cfi_z_measurement(r, dr), cfi, rtol=1e-6, atol=1e-9 * qfi.max())

    def test_closed_form_needs_equal_superposition(self):
        with pytest.raises(ValueError):
            rwa_fisher(1.0, spec().replace(phi=0.3))


def volterra_heun(s, r0, h, t_max):
    """Direct second-order solution of the memory equation by trapezoid convolution."""
    n = int(round(t_max / h))
    t = np.arange(n + 1) * h
    A, B = nz_kernels(t, s)
    r = np.zeros((n + 1, 3))
    r[0] = r0

    def deriv(k, rk):
        hist = r[:k + 1].copy()
        hist[k] = rk
        w = np.full(k + 1, h)
        w[[0, -1]] *= 0.5
        if k == 0:
            w[:] = 0
        ca = np.dot(w, A[k::-1] * hist[:, 0])
        cb = np.dot(w, B[k::-1] * hist[:, 1])
        return np.array([-ca, -s.delta * rk[2] - cb, s.delta * rk[1]])

    d = deriv(0, r[0])
    for k in range(n):
        pred = r[k] + h * d
        d_next = deriv(k + 1, pred)
        r[k + 1] = r[k] + 0.5 * h * (d + d_next)
        d = deriv(k + 1, r[k + 1])
    return t, r


class TestNakajimaZwanzig:
    def test_embedding_matches_direct_convolution(self):
        s = spec(gamma=0.3, ratio=1.0)
        r0 = np.array([0.3, 0.5, 0.6])
        t, direct = volterra_heun(s, r0, 0.01, 20.0)
        traj = nz_integrate(r0, s, nz_default_dt(s), 20.0, stride=1)
        emb = np.array([np.interp(t, traj.times, traj.bloch[:, i]) for i in range(3)]).T
        assert np.abs(emb - direct).max() < 2e-4

    @pytest.mark.parametrize("t", [1.0, 4.0, 9.0])
    def test_embedding_matches_laplace_inversion(self, t):
        s = spec(gamma=0.3, ratio=1.0)
        r0 = [0.0, 0.0, 1.0]
        traj = nz_integrate(r0, s, nz_default_dt(s) / 4, t)
        assert np.abs(traj.bloch[-1] - nz_inverse_laplace(t, r0, s)).max() < 1e-8

    def test_transfer_function_is_the_generator_resolvent(self):
        s = spec(gamma=0.3)
        M = nz_generator(s)
        for z in (0.3 + 0.2j, 1.5, 0.05 - 0.7j):
            R = np.linalg.inv(z * np.eye(len(M)) - M)[:3, :3]
            assert np.allclose(nz_laplace_transfer(z, s), R, atol=1e-10)
        with pytest.raises(ValueError):
            nz_laplace_transfer(-1.0, s)

    def test_kernels_are_real_parts_of_correlation(self):
        from crwfisher.model import correlation_function
        s = spec(gamma=0.3)
        t = np.linspace(0, 30, 61)
        A, B = nz_kernels(t, s)
        reC = correlation_function(t, s).real
        assert np.allclose(B, 4 * reC)
        assert np.allclose(A, 4 * np.cos(s.delta * t) * reC)

    def test_weak_coupling_tracks_rotating_frame_decay(self):
        s = spec(gamma=0.0)
        traj = nz_integrate([0, 0, 1], s, nz_default_dt(s), 30.0, stride=10)
        assert np.allclose(traj.bloch[:, 2], np.cos(s.delta * traj.times), atol=1e-9)

    def test_restricted_to_spin_boson(self):
        with pytest.raises(ValueError):
            nz_integrate([0, 0, 1], spec(chi=0.5), 0.01, 1.0)
        with pytest.raises(ValueError):
            nz_integrate([0, 0, 1], spec(bath="fermion"), 0.01, 1.0)
