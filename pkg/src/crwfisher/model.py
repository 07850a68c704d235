"""Domain types shared by every solver.

States of the probe are stored as 2x2 complex arrays in the ``{|+>, |->}``
basis, where ``|+>`` and ``|->`` are the eigenstates of Pauli-x. Bloch vectors
are reported as ordinary Pauli expectation values, with the z-basis states
``|e>, |g>`` related by ``|+-> = (|e> +- |g>)/sqrt(2)``.

Internal units are ps^-1 for rates and frequencies and ps for times.
"""

from __future__ import annotations

import ast
import enum
import math
import operator
from dataclasses import dataclass, field, replace

import numpy as np

SPEED_OF_LIGHT_CM_PER_S = 2.99792458e10

#: measurement repetitions in the Cramer-Rao bound; fixed, never scaled by
REPETITIONS = 1

POSITIVITY_TOL = 1e-8
POSITIVITY_HARD_FAIL = 1e-6


class BathKind(str, enum.Enum):
    BOSON = "boson"
    FERMION = "fermion"

    @classmethod
    def parse(cls, value: "str | BathKind") -> "BathKind":
        if isinstance(value, BathKind):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown bath kind {value!r}; expected 'boson' or 'fermion'") from None


@dataclass(frozen=True)
class UnitSystem:
    """Conversion factors into internal angular ps^-1.

    ``cm1_to_internal`` defaults to ``2 pi c x 1 cm^-1``. ``thz_to_internal``
    defaults to ``2 pi`` (1 THz read as an ordinary frequency of 1e12 Hz, so
    both spectroscopic units are converted to angular frequency the same way).
    Pass ``thz_to_internal=1.0`` for the "1 THz = 1e12 rad/s" reading.
    """

    cm1_to_internal: float = 2 * math.pi * SPEED_OF_LIGHT_CM_PER_S * 1e-12
    thz_to_internal: float = 2 * math.pi

    def __post_init__(self):
        if not (self.cm1_to_internal > 0 and self.thz_to_internal > 0):
            raise ValueError("unit conversion factors must be strictly positive")

    def factor(self, unit: str) -> float:
        unit = unit.strip().lower().replace("^-1", "-1").replace("⁻¹", "-1")
        if unit in ("cm-1", "cm1", "wavenumber"):
            return self.cm1_to_internal
        if unit == "thz":
            return self.thz_to_internal
        if unit in ("internal", "ps-1"):
            return 1.0
        raise ValueError(f"unknown unit tag {unit!r}; expected cm-1, THz or internal")

    def metadata(self) -> dict:
        return {"cm1_to_internal": self.cm1_to_internal, "thz_to_internal": self.thz_to_internal}


#: reads "THz" as 1e12 rad/s instead of 1e12 Hz
ANGULAR_THZ = UnitSystem(thz_to_internal=1.0)


def convert_units(value: float, unit: str, units: UnitSystem = UnitSystem()) -> float:
    """Convert ``value`` expressed in ``unit`` (cm-1, THz or internal) to ps^-1."""
    return value * units.factor(unit)


def to_units(value: float, unit: str, units: UnitSystem = UnitSystem()) -> float:
    return value / units.factor(unit)


@dataclass(frozen=True)
class ModelSpec:
    """Probe plus Lorentzian environment, all rates in internal units."""

    delta: float
    chi: float
    bath_kind: BathKind
    gamma: float
    lambda_width: float
    phi: float = math.pi / 4
    units: UnitSystem = field(default_factory=UnitSystem, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "bath_kind", BathKind.parse(self.bath_kind))
        if not 0.0 <= self.chi <= 1.0:
            raise ValueError(f"chi must lie in [0, 1], got {self.chi}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if not self.lambda_width > 0:
            raise ValueError(f"lambda_width must be positive, got {self.lambda_width}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    def replace(self, **changes) -> "ModelSpec":
        return replace(self, **changes)

    @property
    def correlation(self) -> "CorrelationParams":
        return CorrelationParams(alpha=0.5 * self.gamma * self.lambda_width,
                                 beta=complex(self.lambda_width, self.delta))

    @property
    def effective_decay(self) -> float:
        """gamma*lambda/(gamma+lambda): the slower of the two bath time scales."""
        if self.gamma == 0:
            return 0.0
        return self.gamma * self.lambda_width / (self.gamma + self.lambda_width)

    @classmethod
    def from_config(cls, cfg: dict) -> "ModelSpec":
        """Build a spec from flat config keys (see :mod:`crwfisher.config`)."""
        units = UnitSystem(
            cm1_to_internal=float(cfg.get("cm1_to_internal", UnitSystem.cm1_to_internal)),
            thz_to_internal=float(cfg.get("thz_to_internal", UnitSystem.thz_to_internal)),
        )
        try:
            delta_thz = float(cfg["delta_thz"])
            gamma_cm1 = float(cfg["gamma_cm1"])
        except KeyError as exc:
            raise ValueError(f"missing required key {exc.args[0]!r}") from None
        if "lambda_cm1" in cfg:
            lambda_cm1 = float(cfg["lambda_cm1"])
        elif "lambda_over_gamma" in cfg:
            ratio = float(cfg["lambda_over_gamma"])
            # a decoupled probe never sees the width; keep it nominal and positive
            lambda_cm1 = ratio * (gamma_cm1 if gamma_cm1 > 0 else 1.0)
        else:
            raise ValueError("one of 'lambda_over_gamma' or 'lambda_cm1' is required")
        return cls(
            delta=convert_units(delta_thz, "THz", units),
            chi=float(cfg.get("chi", 1.0)),
            bath_kind=BathKind.parse(cfg.get("bath", "boson")),
            gamma=convert_units(gamma_cm1, "cm-1", units),
            lambda_width=convert_units(lambda_cm1, "cm-1", units),
            phi=float(cfg.get("phi", math.pi / 4)),
            units=units,
        )

    def to_config(self) -> dict:
        u = self.units
        out = {
            "delta_thz": to_units(self.delta, "THz", u),
            "chi": self.chi,
            "bath": self.bath_kind.value,
            "gamma_cm1": to_units(self.gamma, "cm-1", u),
        }
        if self.gamma > 0:
            out["lambda_over_gamma"] = self.lambda_width / self.gamma
        else:
            out["lambda_cm1"] = to_units(self.lambda_width, "cm-1", u)
        out["phi"] = self.phi
        out.update(u.metadata())
        return out


@dataclass(frozen=True)
class CorrelationParams:
    """C(t) = alpha * exp(-beta t)."""

    alpha: complex
    beta: complex


def spectral_density(omega, spec: ModelSpec):
    """Lorentzian J(omega) centred on the probe frequency."""
    lam = spec.lambda_width
    omega = np.asarray(omega, dtype=float)
    return spec.gamma * lam**2 / (2 * np.pi * ((omega - spec.delta) ** 2 + lam**2))


def correlation_function(t, spec: ModelSpec):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("correlation_function is defined for t >= 0 only")
    c = spec.correlation
    return c.alpha * np.exp(-c.beta * t)


# ---------------------------------------------------------------------------
# two-level states

def initial_density(phi: float) -> np.ndarray:
    """|psi><psi| for |psi> = cos(phi)|+> + sin(phi)|->."""
    psi = np.array([math.cos(phi), math.sin(phi)], dtype=complex)
    return np.outer(psi, psi.conj())


def check_density(rho: np.ndarray, tol: float = 1e-10, positivity: float = POSITIVITY_HARD_FAIL) -> None:
    rho = np.asarray(rho)
    if rho.shape != (2, 2):
        raise ValueError(f"expected a 2x2 density matrix, got shape {rho.shape}")
    herm = np.abs(rho - rho.conj().T).max()
    if herm > tol:
        raise ValueError(f"density matrix is not Hermitian (deviation {herm:.3e})")
    tr = abs(np.trace(rho) - 1)
    if tr > tol:
        raise ValueError(f"density matrix trace deviates from 1 by {tr:.3e}")
    eig = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
    if eig < -positivity:
        raise ValueError(f"density matrix has negative eigenvalue {eig:.3e}")


def bloch_from_density(rho: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Pauli expectation values (<sx>, <sy>, <sz>) of a state in the |+-> basis.

    Accepts a single 2x2 matrix or a stack ``(..., 2, 2)``.
    """
    rho = np.asarray(rho, dtype=complex)
    herm = np.abs(rho - np.swapaxes(rho, -1, -2).conj()).max(initial=0.0)
    if herm > tol:
        raise ValueError(f"non-Hermitian input (deviation {herm:.3e})")
    rpm = rho[..., 0, 1]
    return np.stack([(rho[..., 0, 0] - rho[..., 1, 1]).real, 2 * rpm.imag, 2 * rpm.real], axis=-1)


def density_from_bloch(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    rx, ry, rz = r[..., 0], r[..., 1], r[..., 2]
    rho = np.empty(r.shape[:-1] + (2, 2), dtype=complex)
    rho[..., 0, 0] = 0.5 * (1 + rx)
    rho[..., 1, 1] = 0.5 * (1 - rx)
    rho[..., 0, 1] = 0.5 * (rz + 1j * ry)
    rho[..., 1, 0] = 0.5 * (rz - 1j * ry)
    return rho


def purity(rho: np.ndarray) -> float:
    return float(np.trace(rho @ rho).real)


@dataclass(frozen=True)
class MeasurementScheme:
    """Projective measurement onto the Pauli-z eigenstates {|e>, |g>}."""

    @property
    def projectors(self) -> tuple[np.ndarray, np.ndarray]:
        # in the |+-> basis, |e> = (1, 1)/sqrt2 and |g> = (1, -1)/sqrt2
        e = np.full((2, 2), 0.5, dtype=complex)
        g = np.array([[0.5, -0.5], [-0.5, 0.5]], dtype=complex)
        return e, g

    def probabilities(self, rho: np.ndarray) -> tuple[float, float]:
        e, g = self.projectors
        return float(np.trace(e @ rho).real), float(np.trace(g @ rho).real)


# ---------------------------------------------------------------------------
# trajectories

@dataclass
class Trajectory:
    """Reduced states of the probe sampled on a time grid."""

    times: np.ndarray
    states: np.ndarray  # (n, 2, 2) in the |+-> basis
    solver: str
    metadata: dict = field(default_factory=dict)

    @property
    def bloch(self) -> np.ndarray:
        return bloch_from_density(self.states, tol=1e-6)

    @property
    def sigma_z(self) -> np.ndarray:
        return 2 * self.states[:, 0, 1].real

    @classmethod
    def from_bloch(cls, times, bloch, solver: str, metadata: dict | None = None) -> "Trajectory":
        return cls(np.asarray(times, float), density_from_bloch(bloch), solver, dict(metadata or {}))


# ---------------------------------------------------------------------------
# numbers in config files

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv,
           ast.Pow: operator.pow}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}


def parse_number(text: str) -> float:
    """Evaluate a plain arithmetic expression; ``pi`` is the only name allowed."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return _UNARY[type(node.op)](ev(node.operand))
        raise ValueError(f"not a number: {text!r}")

    try:
        return ev(ast.parse(text.strip(), mode="eval"))
    except SyntaxError:
        raise ValueError(f"not a number: {text!r}") from None
