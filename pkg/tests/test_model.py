import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from crwfisher.model import (ANGULAR_THZ, BathKind, MeasurementScheme, ModelSpec, UnitSystem, bloch_from_density,
                             check_density, convert_units, correlation_function, density_from_bloch,
                             initial_density, parse_number, purity, spectral_density, to_units)

# reference values evaluated with mpmath at 30 digits
J_EXAMPLE = 0.00318309886183790671537767526745
C_AT_INV_LAMBDA = complex(-0.000382729664185565728145865296034, -0.000836279573098155621055127064959)
CM1_ANGULAR = 0.18836515673088532773409920021


def internal_spec(gamma=0.1, lam=0.05, delta=0.1, **kw):
    return ModelSpec(delta=delta, chi=kw.pop("chi", 1.0), bath_kind=kw.pop("bath", "boson"), gamma=gamma,
                     lambda_width=lam, **kw)


class TestModelSpec:
    def test_invariants_enforced(self):
        for bad in (dict(chi=-0.1), dict(chi=1.1)):
            with pytest.raises(ValueError, match="chi"):
                internal_spec(**bad)
        with pytest.raises(ValueError, match="gamma"):
            internal_spec(gamma=-1)
        with pytest.raises(ValueError, match="lambda"):
            internal_spec(lam=0)
        with pytest.raises(ValueError, match="delta"):
            internal_spec(delta=0)

    def test_bath_kind_parsing(self):
        assert internal_spec(bath="Fermion").bath_kind is BathKind.FERMION
        with pytest.raises(ValueError, match="bath kind"):
            internal_spec(bath="anyon")

    def test_correlation_params(self):
        s = internal_spec()
        assert s.correlation.alpha == pytest.approx(0.5 * 0.1 * 0.05)
        assert s.correlation.beta == complex(0.05, 0.1)

    def test_config_round_trip(self):
        cfg = dict(delta_thz=0.1, chi=0.5, bath="fermion", gamma_cm1=0.3, lambda_over_gamma=1.5, phi=0.3)
        s = ModelSpec.from_config(cfg)
        assert s.lambda_width == pytest.approx(1.5 * s.gamma)
        back = ModelSpec.from_config(s.to_config())
        assert back == s

    def test_lambda_required(self):
        with pytest.raises(ValueError, match="lambda"):
            ModelSpec.from_config(dict(delta_thz=0.1, gamma_cm1=0.1))

    def test_zero_coupling_keeps_a_positive_width(self):
        s = ModelSpec.from_config(dict(delta_thz=0.1, gamma_cm1=0, lambda_over_gamma=1.5))
        assert s.gamma == 0 and s.lambda_width > 0


class TestUnits:
    def test_wavenumber_factor(self):
        assert convert_units(1.0, "cm-1") == pytest.approx(CM1_ANGULAR, rel=1e-14)
        assert convert_units(1.0, "cm-1") == pytest.approx(0.188365, abs=5e-7)
        assert convert_units(0.0, "cm-1") == 0.0

    def test_thz_conventions(self):
        assert convert_units(0.1, "THz") == pytest.approx(0.2 * math.pi)
        assert convert_units(0.1, "THz", ANGULAR_THZ) == pytest.approx(0.1)
        assert convert_units(2.5, "internal") == 2.5

    def test_unknown_tag(self):
        with pytest.raises(ValueError, match="unknown unit"):
            convert_units(1.0, "eV")

    def test_positive_factors(self):
        with pytest.raises(ValueError):
            UnitSystem(cm1_to_internal=0)

    @given(st.floats(1e-6, 1e3), st.sampled_from(["cm-1", "THz", "internal"]))
    def test_round_trip(self, x, unit):
        for units in (UnitSystem(), ANGULAR_THZ):
            assert to_units(convert_units(x, unit, units), unit, units) == pytest.approx(x, rel=1e-12)


class TestSpectralDensity:
    def test_peak_and_half_width(self):
        s = internal_spec()
        assert spectral_density(s.delta, s) == pytest.approx(s.gamma / (2 * math.pi))
        for w in (s.delta - s.lambda_width, s.delta + s.lambda_width):
            assert spectral_density(w, s) == pytest.approx(s.gamma / (4 * math.pi))

    def test_reference_value(self):
        assert spectral_density(0.2, internal_spec()) == pytest.approx(J_EXAMPLE, rel=1e-14)

    def test_total_weight(self):
        s = internal_spec()
        window, _ = quad(lambda w: spectral_density(w, s), s.delta - 50 * s.lambda_width,
                         s.delta + 50 * s.lambda_width, points=[s.delta], limit=200)
        assert window == pytest.approx(s.gamma * s.lambda_width / math.pi * math.atan(50), rel=1e-9)
        full, _ = quad(lambda w: spectral_density(w, s), -np.inf, np.inf)
        assert full == pytest.approx(s.gamma * s.lambda_width / 2, rel=1e-6)


class TestCorrelationFunction:
    def test_origin_and_decoupled(self):
        s = internal_spec()
        assert correlation_function(0.0, s) == pytest.approx(s.gamma * s.lambda_width / 2)
        assert np.all(correlation_function(np.linspace(0, 10, 5), s.replace(gamma=0.0)) == 0)

    def test_reference_value(self):
        s = internal_spec()
        assert correlation_function(1 / s.lambda_width, s) == pytest.approx(C_AT_INV_LAMBDA, rel=1e-13)

    def test_rejects_negative_time(self):
        with pytest.raises(ValueError):
            correlation_function(-1.0, internal_spec())

    def test_magnitude_decreases(self):
        c = np.abs(correlation_function(np.linspace(0, 100, 200), internal_spec()))
        assert np.all(np.diff(c) < 0)

    @pytest.mark.parametrize("t", [0.3, 1 / 0.05, 47.0])
    def test_fourier_transform_of_spectral_density(self, t):
        # C(t) = int J(w) exp(-i w t) dw over the real line; shifting by delta leaves an even
        # Lorentzian whose cosine transform is evaluated by QAWF quadrature
        s = internal_spec()
        half, _ = quad(lambda x: spectral_density(x + s.delta, s), 0, np.inf, weight="cos", wvar=t,
                       epsabs=1e-14)
        expected = 2 * half * np.exp(-1j * s.delta * t)
        assert abs(correlation_function(t, s) - expected) < 1e-8 * abs(s.correlation.alpha)


class TestStates:
    def test_initial_density_examples(self):
        assert np.allclose(initial_density(0.0), [[1, 0], [0, 0]])
        assert np.allclose(initial_density(math.pi / 4), 0.5)
        assert np.allclose(bloch_from_density(initial_density(math.pi / 4)), [0, 0, 1])

    @given(st.floats(-10, 10))
    def test_initial_density_is_pure(self, phi):
        rho = initial_density(phi)
        check_density(rho)
        assert purity(rho) == pytest.approx(1.0, abs=1e-15)
        assert np.linalg.matrix_rank(rho) == 1

    def test_bloch_examples(self):
        assert np.allclose(bloch_from_density(0.5 * np.eye(2)), 0)
        e = 0.5 * np.ones((2, 2))  # |e> = (|+> + |->)/sqrt2
        assert np.allclose(bloch_from_density(e), [0, 0, 1])

    def test_pauli_expectations(self):
        # independent construction: rotate the Pauli matrices into the |+-> basis
        sx = np.array([[0, 1], [1, 0]])
        sy = np.array([[0, -1j], [1j, 0]])
        sz = np.diag([1, -1])
        U = np.array([[1, 1], [1, -1]]) / math.sqrt(2)  # columns |+>, |-> in the z basis
        rng = np.random.default_rng(3)
        a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        rho = a @ a.conj().T
        rho /= np.trace(rho)
        r = bloch_from_density(rho)
        for comp, p in zip(r, (sx, sy, sz)):
            assert comp == pytest.approx(np.trace(rho @ (U.conj().T @ p @ U)).real, abs=1e-14)

    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError, match="Hermitian"):
            bloch_from_density(np.array([[0.5, 0.3], [0.1, 0.5]]))

    @given(st.floats(0, 1), st.floats(0, math.pi), st.floats(0, 2 * math.pi))
    def test_round_trip(self, radius, theta, azimuth):
        r = radius * np.array([math.sin(theta) * math.cos(azimuth), math.sin(theta) * math.sin(azimuth),
                               math.cos(theta)])
        rho = density_from_bloch(r)
        check_density(rho)
        assert np.allclose(bloch_from_density(rho), r, atol=1e-12)
        assert np.allclose(density_from_bloch(bloch_from_density(rho)), rho, atol=1e-12)

    def test_measurement_projectors(self):
        e, g = MeasurementScheme().projectors
        assert np.allclose(e + g, np.eye(2))
        assert np.allclose(e @ e, e) and np.allclose(g @ g, g)
        pe, pg = MeasurementScheme().probabilities(initial_density(math.pi / 4))
        assert (pe, pg) == pytest.approx((1.0, 0.0))


class TestParseNumber:
    @pytest.mark.parametrize("text,value", [("1.5", 1.5), ("pi/4", math.pi / 4), ("-2e-3", -2e-3),
                                            ("2*pi*0.1", 0.2 * math.pi), ("2**3", 8.0)])
    def test_values(self, text, value):
        assert parse_number(text) == pytest.approx(value)

    @pytest.mark.parametrize("text", ["__import__('os')", "abc", "1 +", "[1]"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            parse_number(text)


@settings(max_examples=25)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 2), st.floats(0.1, 5))
def test_spec_is_hashable_and_comparable(chi, gamma, lam, delta):
    a = ModelSpec(delta, chi, "boson", gamma, lam)
    assert a == a.replace() and hash(a) == hash(a.replace())
