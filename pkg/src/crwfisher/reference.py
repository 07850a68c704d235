"""Benchmark solvers: the exact rotating-wave solution and the Born-level
Nakajima-Zwanzig master equation for the spin-boson case (chi = 1).
"""

from __future__ import annotations

import math

import mpmath
import numpy as np

from .model import BathKind, ModelSpec, Trajectory, check_density
from .propagate import LinearRK4

#: which expression for the frequency inside the decoherence factor is used.
#: "standard" is sqrt(lambda^2 - 2 gamma lambda); "printed" is sqrt(gamma^2 - 2 gamma lambda).
#: The HEOM chi = 0 trajectory agrees with "standard" to ~1e-9 and with "printed"
#: only to ~0.3, so "standard" is the default.
DEFAULT_OMEGA_VARIANT = "standard"

_SERIES_CUTOFF = 1e-4


def _omega_squared(gamma: float, lam: float, variant: str) -> float:
    if variant == "standard":
        return lam * lam - 2 * gamma * lam
    if variant == "printed":
        return gamma * gamma - 2 * gamma * lam
    raise ValueError(f"unknown omega variant {variant!r}")


def rwa_decoherence_factor(t, gamma: float, lam: float, variant: str = DEFAULT_OMEGA_VARIANT):
    """Amplitude G(t) of the excited-state component in the damped Jaynes-Cummings model.

    ``G = exp(-lam t/2) [cosh(W t/2) + (lam/W) sinh(W t/2)]``. For W^2 < 0 the
    trigonometric form is used, and near W = 0 a short series keeps the
    expression continuous (the W -> 0 limit is ``exp(-lam t/2)(1 + lam t/2)``).
    G can change sign in the strongly coupled regime; ``|G| <= 1`` always.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("decoherence factor is defined for t >= 0 only")
    w2 = _omega_squared(gamma, lam, variant)
    x2 = 0.25 * w2 * t * t  # (W t / 2)^2, signed
    small = np.abs(x2) < _SERIES_CUTOFF
    half = 0.5 * lam * t
    with np.errstate(over="ignore", invalid="ignore"):
        if w2 > 0:
            w = math.sqrt(w2)
            a = 0.5 * (1 + lam / w) * np.exp(-0.5 * (lam - w) * t)
            b = 0.5 * (1 - lam / w) * np.exp(-0.5 * (lam + w) * t)
            exact = a + b
        elif w2 < 0:
            w = math.sqrt(-w2)
            exact = np.exp(-half) * (np.cos(0.5 * w * t) + lam / w * np.sin(0.5 * w * t))
        else:
            exact = np.exp(-half) * (1 + half)
    # cosh(x) + half*sinh(x)/x with x^2 = x2, expanded to O(x^4)
    series = np.exp(-half) * ((1 + x2 / 2 + x2 * x2 / 24) + half * (1 + x2 / 6 + x2 * x2 / 120))
    out = np.where(small, series, exact)
    return out if out.ndim else float(out)


def rwa_density(t, rho0: np.ndarray, spec: ModelSpec, variant: str = DEFAULT_OMEGA_VARIANT) -> np.ndarray:
    """Exact reduced state for chi = 0 (chi in ``spec`` is ignored).

    Vectorised over ``t``: returns shape ``t.shape + (2, 2)``.
    """
    rho0 = np.asarray(rho0, complex)
    check_density(rho0)
    t = np.asarray(t, dtype=float)
    G = rwa_decoherence_factor(t, spec.gamma, spec.lambda_width, variant)
    phase = np.exp(-1j * spec.delta * t)
    rho = np.empty(t.shape + (2, 2), complex)
    rho[..., 0, 0] = rho0[0, 0].real * G**2
    rho[..., 1, 1] = 1 - rho0[0, 0].real * G**2
    rho[..., 0, 1] = rho0[0, 1] * G * phase
    rho[..., 1, 0] = rho0[1, 0] * G * np.conj(phase)
    return rho


def rwa_density_shift(t, rho0: np.ndarray, spec: ModelSpec, shift: float,
                      variant: str = DEFAULT_OMEGA_VARIANT) -> np.ndarray:
    """``rwa_density`` at delta + shift minus the value at delta, without cancellation.

    G does not depend on delta, so only the coherences move, by the factor
    ``expm1(-i shift t)``. Finite differences built from these increments keep
    their relative accuracy near the zeros of the derivative.
    """
    rho0 = np.asarray(rho0, complex)
    t = np.asarray(t, dtype=float)
    G = rwa_decoherence_factor(t, spec.gamma, spec.lambda_width, variant)
    inc = rho0[0, 1] * G * np.exp(-1j * spec.delta * t) * np.expm1(-1j * shift * t)
    out = np.zeros(t.shape + (2, 2), complex)
    out[..., 0, 1] = inc
    out[..., 1, 0] = np.conj(inc)
    return out


def rwa_trajectory(rho0, spec: ModelSpec, times, variant: str = DEFAULT_OMEGA_VARIANT) -> Trajectory:
    times = np.asarray(times, float)
    return Trajectory(times, rwa_density(times, rho0, spec, variant), "rwa", {"omega_variant": variant})


def rwa_fisher(t, spec: ModelSpec, variant: str = DEFAULT_OMEGA_VARIANT):
    """Closed-form (CFI, QFI) for phi = pi/4 and the z-basis measurement."""
    if not math.isclose(spec.phi, math.pi / 4, abs_tol=1e-12):
        raise ValueError("the closed-form Fisher information assumes phi = pi/4")
    t = np.asarray(t, dtype=float)
    G2 = rwa_decoherence_factor(t, spec.gamma, spec.lambda_width, variant) ** 2
    s2 = np.sin(spec.delta * t) ** 2
    qfi = t * t * G2
    # 1 - G^2 cos^2 = (1 - G^2) + G^2 sin^2 avoids cancellation; zero only when G = 1 and sin = 0
    den = (1 - G2) + G2 * s2
    with np.errstate(divide="ignore", invalid="ignore"):
        cfi = np.where(den > 0, t * t * G2 * s2 / np.where(den > 0, den, 1.0), np.where(G2 == 1, t * t, 0.0))
    if cfi.ndim == 0:
        return float(cfi), float(qfi)
    return cfi, qfi


# ---------------------------------------------------------------------------
# Nakajima-Zwanzig (Born) for chi = 1

def _require_spin_boson(spec: ModelSpec) -> None:
    if spec.bath_kind is not BathKind.BOSON or spec.chi != 1.0:
        raise ValueError("the Nakajima-Zwanzig solver covers the bosonic chi = 1 model only")


def nz_kernel_terms(spec: ModelSpec, kernel: str = "real"):
    """Exponential decompositions of the memory kernels A(t) and B(t).

    Each kernel is a list of ``(weight, rate)`` with ``K(t) = sum w exp(-rate t)``.
    ``kernel="real"`` uses kappa(t) = Re C(t); ``"complex"`` uses C(t) itself.
    """
    gl = spec.gamma * spec.lambda_width
    lam, d = spec.lambda_width, spec.delta
    if kernel == "real":
        # A = 4 cos(dt) Re C = gl e^{-lam t}(1 + cos 2dt);  B = 4 Re C = 2 gl e^{-lam t} cos dt
        A = [(gl, lam), (0.5 * gl, complex(lam, -2 * d)), (0.5 * gl, complex(lam, 2 * d))]
        B = [(gl, complex(lam, d)), (gl, complex(lam, -d))]
    elif kernel == "complex":
        A = [(gl, lam), (gl, complex(lam, 2 * d))]
        B = [(2 * gl, complex(lam, d))]
    else:
        raise ValueError(f"unknown kernel variant {kernel!r}")
    return A, B


def nz_kernels(t, spec: ModelSpec, kernel: str = "real"):
    t = np.asarray(t, dtype=float)
    A, B = nz_kernel_terms(spec, kernel)
    ev = lambda terms: sum(w * np.exp(-s * t) for w, s in terms)
    a, b = ev(A), ev(B)
    if kernel == "real":
        return a.real, b.real
    return a, b


def nz_generator(spec: ModelSpec, kernel: str = "real") -> np.ndarray:
    """Constant matrix of the memoryless embedding.

    State: (r_x, r_y, r_z, one auxiliary per exponential of A, then of B).
    Each auxiliary obeys a' = r_i - rate * a, so that
    ``int_0^t K(t-s) r_i(s) ds = sum w * a``.
    """
    A, B = nz_kernel_terms(spec, kernel)
    n = 3 + len(A) + len(B)
    M = np.zeros((n, n), complex)
    d = spec.delta
    M[1, 2] = -d
    M[2, 1] = d
    k = 3
    for target, terms in ((0, A), (1, B)):
        for w, s in terms:
            M[target, k] = -w
            M[k, target] = 1.0
            M[k, k] = -s
            k += 1
    return M


def nz_integrate(r0, spec: ModelSpec, dt: float, t_max: float, stride: int = 1,
                 kernel: str = "real") -> Trajectory:
    """Bloch-vector dynamics of the Born-level memory equation on [0, t_max]."""
    _require_spin_boson(spec)
    prop = nz_propagator(spec, dt, kernel)
    n_steps = max(1, math.ceil(t_max / dt - 1e-9))
    n_records = max(1, math.ceil(n_steps / stride))
    h = t_max / (n_records * stride)
    if h != prop.dt:
        prop = nz_propagator(spec, h, kernel)
    y0 = nz_initial_vector(r0, spec, kernel)
    ys = prop.sample(y0, stride, n_records, observe=lambda v: v[:3].copy())
    times = np.arange(n_records + 1) * stride * h
    bloch = ys.real
    if kernel == "real":
        imag = np.abs(ys.imag).max()
        if imag > 1e-8:
            raise RuntimeError(f"real-kernel Bloch vector acquired an imaginary part {imag:.3e}")
    return Trajectory.from_bloch(times, bloch, "nz", {"dt": h, "stride": stride, "kernel": kernel})


def nz_stiffness(spec: ModelSpec, kernel: str = "real") -> float:
    A, B = nz_kernel_terms(spec, kernel)
    rates = [abs(s) for _, s in A + B]
    return max(rates + [spec.delta, math.sqrt(spec.gamma * spec.lambda_width)])


def nz_propagator(spec: ModelSpec, dt: float, kernel: str = "real") -> LinearRK4:
    s = dt * nz_stiffness(spec, kernel)
    if s > 0.1 * (1 + 1e-9):
        raise ValueError(f"dt={dt:.4g} violates the stability guard ({s:.3g} > 0.1)")
    return LinearRK4(nz_generator(spec, kernel), dt, route="dense")


def nz_initial_vector(r0, spec: ModelSpec, kernel: str = "real") -> np.ndarray:
    A, B = nz_kernel_terms(spec, kernel)
    y = np.zeros(3 + len(A) + len(B), complex)
    y[:3] = np.asarray(r0, float)
    return y


def nz_default_dt(spec: ModelSpec, kernel: str = "real") -> float:
    return min(0.01 / spec.delta, 0.01 / spec.lambda_width, 0.1 / nz_stiffness(spec, kernel))


def nz_laplace_transfer(zeta: complex, spec: ModelSpec, kernel: str = "real") -> np.ndarray:
    """3x3 resolvent F(zeta) with r~(zeta) = F(zeta) r(0)."""
    zeta = complex(zeta)
    if zeta.imag == 0 and zeta.real <= 0:
        raise ValueError("zeta on the nonpositive real axis is outside the transform's domain")
    A, B = nz_kernel_terms(spec, kernel)
    At = sum(w / (zeta + s) for w, s in A)
    Bt = sum(w / (zeta + s) for w, s in B)
    d = spec.delta
    F = np.zeros((3, 3), complex)
    F[0, 0] = 1 / (zeta + At)
    F[1, 1] = 1 / (zeta + Bt + d * d / zeta)
    F[2, 2] = (1 + Bt / zeta) * F[1, 1]
    F[1, 2] = -d / zeta * F[1, 1]
    F[2, 1] = -F[1, 2]
    return F


def nz_inverse_laplace(t: float, r0, spec: ModelSpec, kernel: str = "real", degree: int = 32) -> np.ndarray:
    """Bloch vector at ``t`` by fixed-Talbot inversion of F(zeta) r(0).

    Verification only. The Talbot contour must enclose the poles near
    +-i*delta, which holds for roughly ``t < 0.8 * degree / delta``.
    """
    A, B = nz_kernel_terms(spec, kernel)
    d = spec.delta
    r0 = [float(x) for x in r0]

    def component(i):
        def f(z):
            At = sum(w / (z + s) for w, s in A)
            Bt = sum(w / (z + s) for w, s in B)
            fyy = 1 / (z + Bt + d * d / z)
            if i == 0:
                return r0[0] / (z + At)
            fyz = -d / z * fyy
            if i == 1:
                return fyy * r0[1] + fyz * r0[2]
            return -fyz * r0[1] + (1 + Bt / z) * fyy * r0[2]
        return f

    vals = [mpmath.invertlaplace(component(i), t, method="talbot", degree=degree) for i in range(3)]
    return np.array([complex(v).real for v in vals])
