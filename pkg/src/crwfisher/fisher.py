"""Classical and quantum Fisher information for estimating the probe frequency.

The derivative with respect to delta is taken by a five-point central
difference over four extra runs at delta +- step and delta +- 2 step. Delta
enters the system Hamiltonian, the bath correlation rate and the centre of the
spectral density, and all of them move together in the shifted runs. Every run
shares one time grid and one integration step so discretisation errors
difference out smoothly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.optimize import minimize_scalar

from . import heom, reference
from .model import ModelSpec, bloch_from_density, initial_density
from .propagate import LinearRK4

log = logging.getLogger(__name__)

SOLVERS = ("heom", "nz", "rwa")
SHIFTS = (-2, -1, 1, 2)
CFI_FLOOR = 1e-12
PURE_STATE_CUTOFF = 1e-10
BLOCH_TOL = 1e-8


# ---------------------------------------------------------------------------
# pointwise formulas

def five_point_derivative(f, x: float, step: float):
    """(-f(x+2h) + 8 f(x+h) - 8 f(x-h) + f(x-2h)) / 12h; exact up to quartics."""
    if step == 0:
        raise ValueError("finite-difference step must be nonzero")
    return combine_shifted({s: f(x + s * step) for s in SHIFTS}, step)


def combine_shifted(values: dict, step: float):
    if step == 0:
        raise ValueError("finite-difference step must be nonzero")
    return (-values[2] + 8 * values[1] - 8 * values[-1] + values[-2]) / (12 * step)


def _check_norm(norm2, what: str):
    if np.any(norm2 > (1 + BLOCH_TOL) ** 2):
        raise ValueError(f"{what} exceeds the Bloch ball: |r| = {math.sqrt(float(np.max(norm2))):.10f}")


def qfi_from_bloch(r, dr):
    """|dr|^2 + (r.dr)^2 / (1 - |r|^2), with the pure-state form near the surface."""
    r, dr = np.asarray(r, float), np.asarray(dr, float)
    norm2 = np.sum(r * r, axis=-1)
    _check_norm(norm2, "Bloch vector")
    gap = 1 - norm2
    mixed = gap >= PURE_STATE_CUTOFF
    second = np.sum(r * dr, axis=-1) ** 2 / np.where(mixed, gap, 1.0)
    out = np.sum(dr * dr, axis=-1) + np.where(mixed, second, 0.0)
    return out if out.ndim else float(out)


def cfi_z_measurement(r, dr, return_flags: bool = False):
    """Fisher information of the {|e>, |g>} outcome distribution.

    Where 1 - r_z^2 falls below 1e-12 with a nonzero derivative, the
    denominator is floored and the sample flagged.
    """
    r, dr = np.asarray(r, float), np.asarray(dr, float)
    rz, drz = r[..., 2], dr[..., 2]
    if np.any(np.abs(rz) > 1 + BLOCH_TOL):
        raise ValueError("|r_z| exceeds 1")
    den = 1 - rz * rz
    floored = (den < CFI_FLOOR) & (drz != 0)
    out = np.where(drz == 0, 0.0, drz * drz / np.maximum(den, CFI_FLOOR))
    if out.ndim == 0:
        out = float(out)
        floored = bool(floored)
    return (out, floored) if return_flags else out


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class DerivativeConfig:
    rel_step: float = 1e-6

    def __post_init__(self):
        if not 0 < self.rel_step < 1e-2:
            raise ValueError("relative step must lie in (0, 1e-2)")


@dataclass(frozen=True)
class FisherConfig:
    solver: str = "heom"
    derivative: DerivativeConfig = DerivativeConfig()
    t_max: float | None = None
    samples: int | None = None
    depth: int | str | None = None  # None: fixed default; "auto": convergence-selected
    dt: float | None = None
    depth_tol: float = 1e-9
    refine: bool = True
    refine_tol: float = 1e-4
    kernel: str = "real"
    omega_variant: str = reference.DEFAULT_OMEGA_VARIANT
    min_samples: int = 2000
    samples_per_period: int = 32
    decay_times: float = 8.0

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; expected one of {SOLVERS}")
        if isinstance(self.depth, str) and self.depth != "auto":
            raise ValueError(f"depth must be an integer or 'auto', got {self.depth!r}")

    def horizon(self, spec: ModelSpec) -> float:
        if self.t_max is not None:
            return float(self.t_max)
        if spec.gamma == 0:
            return 20 * math.pi / spec.delta  # ten free periods
        return self.decay_times / spec.effective_decay

    def n_samples(self, spec: ModelSpec, t_max: float) -> int:
        if self.samples is not None:
            return int(self.samples)
        periods = t_max * spec.delta / (2 * math.pi)
        return max(self.min_samples, math.ceil(self.samples_per_period * periods))


# ---------------------------------------------------------------------------
# solvers behind a common "Bloch vectors of the five delta-shifted runs" view

class _Source:
    """Bloch data for the central and four shifted specs (shift order -2,-1,0,1,2).

    Row 2 is the central Bloch vector; the other rows are increments over it.
    """

    offsets = (-2, -1, 0, 1, 2)

    def grid(self) -> np.ndarray: ...

    def prepare(self, t0: float) -> None: ...

    def at(self, t: float) -> np.ndarray: ...


class _RwaSource(_Source):
    """Closed-form states. The stencil weights sum to zero, so increments give
    the same derivative while avoiding the roundoff of subtracting nearly
    equal states."""

    def __init__(self, specs, times, variant):
        self.specs, self.times, self.variant = specs, times, variant
        self.rho0 = initial_density(specs[2].phi)

    def _bloch(self, t):
        centre = self.specs[2]
        rows = []
        for s in self.specs:
            if s is centre:
                rho = reference.rwa_density(t, self.rho0, s, self.variant)
            else:
                rho = reference.rwa_density_shift(t, self.rho0, centre, s.delta - centre.delta, self.variant)
            rows.append(bloch_from_density(rho))
        return np.stack(rows)

    def grid(self):
        return self._bloch(self.times)

    def prepare(self, t0):
        pass

    def at(self, t):
        return self._bloch(np.asarray(t, float))


class _LinearSource(_Source):
    """Shared driver for the linear-ODE solvers (HEOM and NZ)."""

    def __init__(self, props, y0s, observers, stride, n_samples, times):
        self.props, self.y0s, self.observers = props, y0s, observers
        self.stride, self.n_samples, self.times = stride, n_samples, times
        self._snap = None

    @classmethod
    def with_increments(cls, rk4s, y0, observe, stride, n_samples, times) -> "_LinearSource":
        """Central run plus, for each shift, the increment y_k - y_0 integrated directly.

        With D = M_k - M_0 the increment obeys e' = M_k e + D y_0, and RK4 on the
        block system [[M_0, 0], [D, M_k]] reproduces RK4(M_k) - RK4(M_0) exactly
        in exact arithmetic. Integrated this way the increments carry roundoff
        relative to their own size instead of the size of the state, which keeps
        the five-point derivative accurate at small relative steps.
        """
        centre = rk4s[2]
        n = centre.dim
        props, y0s, observers = [], [], []
        increment = lambda v: observe(v[n:])
        for k, rk in enumerate(rk4s):
            if k == 2:
                props.append(centre)
                y0s.append(y0)
                observers.append(observe)
                continue
            M0, Mk = centre.M, rk.M
            if sps.issparse(M0):
                block = sps.bmat([[M0, None], [Mk - M0, Mk]], format="csr")
            else:
                block = np.block([[M0, np.zeros_like(M0)], [Mk - M0, Mk]])
            props.append(LinearRK4(block, centre.dt, n_samples=n_samples, stride=stride))
            y0s.append(np.concatenate([y0, np.zeros_like(y0)]))
            observers.append(increment)
        return cls(props, y0s, observers, stride, n_samples, times)

    def grid(self):
        return np.stack([p.sample(y0, self.stride, self.n_samples, observe=obs)
                         for p, y0, obs in zip(self.props, self.y0s, self.observers)])

    def prepare(self, t0):
        self._snap = (t0, [p.evolve_to(y0, t0) for p, y0 in zip(self.props, self.y0s)])

    def at(self, t):
        t0, ys = self._snap
        return np.stack([obs(p.evolve_to(y, t - t0)) for p, y, obs in zip(self.props, ys, self.observers)])


def _heom_observe(v):
    return bloch_from_density(v[:4].reshape(2, 2), tol=1e-6)


def _build_source(spec: ModelSpec, cfg: FisherConfig, t_max: float, samples: int):
    step = cfg.derivative.rel_step * spec.delta
    specs = [spec.replace(delta=spec.delta + k * step) for k in _Source.offsets]
    stiffest = specs[-1]
    meta: dict = {"solver": cfg.solver, "rel_step": cfg.derivative.rel_step}
    if cfg.solver == "rwa":
        times = np.linspace(0.0, t_max, samples + 1)
        meta["omega_variant"] = cfg.omega_variant
        return _RwaSource(specs, times, cfg.omega_variant), times, meta
    if cfg.solver == "heom":
        if cfg.depth == "auto":
            depth, scan = heom.select_depth(initial_density(spec.phi), stiffest, t_max, cfg.depth_tol)
            meta["convergence_scan"] = scan.as_dict()
        else:
            depth = heom.default_depth(spec) if cfg.depth is None else cfg.depth
        dt0 = cfg.dt if cfg.dt is not None else heom.default_dt(stiffest, depth)
    else:
        reference._require_spin_boson(spec)
        depth = None
        dt0 = cfg.dt if cfg.dt is not None else reference.nz_default_dt(stiffest, cfg.kernel)
    stride = max(1, math.ceil(t_max / samples / dt0 - 1e-9))
    dt = t_max / (samples * stride)
    times = np.arange(samples + 1) * stride * dt
    meta.update({"dt": dt, "stride": stride})
    if cfg.solver == "heom":
        props = [heom.HeomPropagator(s, depth, dt, n_samples=samples, stride=stride) for s in specs]
        if any(not np.array_equal(p.keep, props[2].keep) for p in props):
            raise RuntimeError("shifted hierarchies prune to different entries")
        rk4s = [p.rk4 for p in props]
        y0 = props[2].initial_vector(initial_density(spec.phi))
        observe = _heom_observe
        meta.update({"depth": depth, "route": props[2].rk4.route, "reachable_dim": props[2].dim})
    else:
        rk4s = [reference.nz_propagator(s, dt, cfg.kernel) for s in specs]
        y0 = reference.nz_initial_vector(bloch_from_density(initial_density(spec.phi)), spec, cfg.kernel)
        observe = lambda v: v[:3].real.copy()
        meta["kernel"] = cfg.kernel
    source = _LinearSource.with_increments(rk4s, y0, observe, stride, samples, times)
    return source, times, meta


def _fisher_from_shifted(bloch: np.ndarray, step: float):
    """bloch: (5, ..., 3) in shift order -2..2 -> (F_C, F_Q, flags)."""
    dr = combine_shifted({-2: bloch[0], -1: bloch[1], 1: bloch[3], 2: bloch[4]}, step)
    r = bloch[2]
    fc, flags = cfi_z_measurement(r, dr, return_flags=True)
    return fc, qfi_from_bloch(r, dr), flags


@dataclass
class FisherSeries:
    times: np.ndarray
    cfi: np.ndarray
    qfi: np.ndarray
    flags: np.ndarray
    spec: ModelSpec
    metadata: dict = field(default_factory=dict)
    _source: _Source | None = field(default=None, repr=False, compare=False)
    _step: float = field(default=0.0, repr=False, compare=False)

    def evaluate(self, t: float) -> tuple[float, float]:
        """Recompute (F_C, F_Q) off-grid at t; needs :meth:`prepare` first for ODE solvers."""
        fc, fq, _ = _fisher_from_shifted(self._source.at(t), self._step)
        return float(fc), float(fq)

    def prepare(self, t0: float) -> None:
        self._source.prepare(t0)


def fisher_series(spec: ModelSpec, cfg: FisherConfig = FisherConfig()) -> FisherSeries:
    t_max = cfg.horizon(spec)
    samples = cfg.n_samples(spec, t_max)
    source, times, meta = _build_source(spec, cfg, t_max, samples)
    step = cfg.derivative.rel_step * spec.delta
    bloch = source.grid()
    if cfg.solver == "heom":
        _check_reduced_states(bloch[2], times)
    fc, fq, flags = _fisher_from_shifted(bloch, step)
    meta.update({"t_max": t_max, "samples": samples, "n_floored": int(np.sum(flags))})
    log.debug("fisher series %s", meta)
    return FisherSeries(times, fc, fq, flags, spec, meta, source, step)


def _check_reduced_states(bloch: np.ndarray, times: np.ndarray) -> None:
    norm = np.linalg.norm(bloch, axis=-1)
    bad = np.flatnonzero(norm > 1 + 2 * heom.TRACE_HARD_FAIL)
    if bad.size:
        i = bad[0]
        raise heom.HeomInvariantError(f"positivity invariant violated at t={times[i]:.6g}: |r| = {norm[i]:.10f}")


# ---------------------------------------------------------------------------
# optimisation over the encoding time

@dataclass
class Optimum:
    t: float
    value: float
    flags: tuple[str, ...] = ()


def max_over_time(series: FisherSeries, refine: bool = True, tol: float = 1e-4) -> dict[str, Optimum]:
    """Optimal encoding time for the CFI ("C") and QFI ("Q").

    Grid argmax (first occurrence wins ties) followed by golden-section search
    on the two neighbouring grid intervals, recomputing the dynamics there.
    """
    out = {}
    for label, values in (("C", series.cfi), ("Q", series.qfi)):
        i = int(np.argmax(values))
        t, best = float(series.times[i]), float(values[i])
        flags: list[str] = []
        last = len(values) - 1
        if i == last:
            flags.append("boundary-max")
        elif i == 0:
            flags.append("initial-max")
        elif refine and series._source is not None and values[i] > values[i - 1] and values[i] > values[i + 1]:
            a, b, c = (float(x) for x in series.times[i - 1:i + 2])
            series.prepare(a)
            pick = 0 if label == "C" else 1
            res = minimize_scalar(lambda x: -series.evaluate(x)[pick], bracket=(a, b, c), method="golden",
                                  options={"xtol": tol})
            if a <= res.x <= c and -res.fun > best:
                t, best = float(res.x), float(-res.fun)
            flags.append("refined")
        out[label] = Optimum(t, best, tuple(flags))
    return out


# ---------------------------------------------------------------------------
# comparison with the rotating-wave limit

@dataclass
class MetricReport:
    spec: ModelSpec
    bath: dict[str, Optimum]
    rwa: dict[str, Optimum]
    solver_metadata: dict = field(default_factory=dict)

    def delta(self, label: str) -> float:
        return self.bath[label].value - self.rwa[label].value

    def ratio(self, label: str) -> float:
        denom = self.bath[label].value
        return self.rwa[label].value / denom if denom else math.inf

    def as_dict(self) -> dict:
        s = self.spec
        gamma_cm1 = s.gamma / s.units.cm1_to_internal
        return {
            "chi": s.chi,
            "gamma_cm1": gamma_cm1,
            "lambda_over_gamma": s.lambda_width / s.gamma if s.gamma > 0 else None,
            "bath": s.bath_kind.value,
            "max_FQ": self.bath["Q"].value,
            "argmax_t_FQ": self.bath["Q"].t,
            "max_FC": self.bath["C"].value,
            "argmax_t_FC": self.bath["C"].t,
            "max_FQ_rwa": self.rwa["Q"].value,
            "argmax_t_FQ_rwa": self.rwa["Q"].t,
            "max_FC_rwa": self.rwa["C"].value,
            "argmax_t_FC_rwa": self.rwa["C"].t,
            "delta_FQ": self.delta("Q"),
            "delta_FC": self.delta("C"),
            "R_Q": self.ratio("Q"),
            "R_C": self.ratio("C"),
            "flags": sorted({f for o in list(self.bath.values()) + list(self.rwa.values()) for f in o.flags}),
            "solver_metadata": self.solver_metadata,
        }


_SHARED = ("delta", "gamma", "lambda_width", "phi", "bath_kind")


def metric_report(bath_series: FisherSeries, rwa_series: FisherSeries, refine: bool = True,
                  tol: float = 1e-4) -> MetricReport:
    a, b = bath_series.spec, rwa_series.spec
    for name in _SHARED:
        if getattr(a, name) != getattr(b, name):
            raise ValueError(f"runs disagree on {name}: {getattr(a, name)!r} vs {getattr(b, name)!r}")
    if b.chi != 0:
        raise ValueError("the reference run must have chi = 0")
    meta = {"bath_run": bath_series.metadata, "rwa_run": rwa_series.metadata}
    return MetricReport(a, max_over_time(bath_series, refine, tol), max_over_time(rwa_series, refine, tol), meta)


def reference_solver(solver: str) -> str:
    """Solver used for the chi = 0 comparison run."""
    return "rwa" if solver == "nz" else solver


def compare_with_rwa(spec: ModelSpec, cfg: FisherConfig = FisherConfig()):
    """Fisher series at ``spec.chi`` and at chi = 0, plus their MetricReport."""
    from dataclasses import replace

    t_max = cfg.horizon(spec)
    cfg = replace(cfg, t_max=t_max)
    bath = fisher_series(spec, cfg)
    rwa_cfg = replace(cfg, solver=reference_solver(cfg.solver))
    if spec.chi == 0 and rwa_cfg.solver == cfg.solver:
        rwa = bath
    else:
        rwa = fisher_series(spec.replace(chi=0.0), rwa_cfg)
    report = metric_report(bath, rwa, cfg.refine, cfg.refine_tol)
    return bath, rwa, report
