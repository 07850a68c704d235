"""Hierarchical equations of motion for a probe in a Lorentzian bath.

The bath correlation function is a single exponential, so the hierarchy is
indexed by pairs (m, n) of nonnegative integers with m + n <= N. Auxiliary
operators beyond the truncation are set to zero; convergence in N is checked
with :func:`convergence_scan` rather than assumed.

Two evaluation routes exist for the right-hand side:

* :func:`heom_rhs_boson` / :func:`heom_rhs_fermion` act on a
  :class:`HierarchyState` directly and mirror the equations term by term;
* :func:`generator` assembles the same linear map as a sparse matrix, which
  :class:`HeomPropagator` prunes to the entries reachable from the initial
  state and integrates with fixed-step RK4.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .model import (
    POSITIVITY_HARD_FAIL,
    BathKind,
    ModelSpec,
    Trajectory,
    check_density,
)
from .propagate import LinearRK4, rk4_step

log = logging.getLogger(__name__)

STABILITY_LIMIT = 0.1
TRACE_HARD_FAIL = 1e-6


class HeomInvariantError(RuntimeError):
    """A recorded reduced state broke a physical invariant."""


# ---------------------------------------------------------------------------
# configuration

def default_depth(spec: ModelSpec) -> int:
    gamma_cm1 = spec.gamma / spec.units.cm1_to_internal
    return 20 if gamma_cm1 <= 0.2 + 1e-12 else 30


def stiffness(spec: ModelSpec, depth: int) -> float:
    c = spec.correlation
    return max(abs(c.beta), spec.delta, depth * math.sqrt(abs(c.alpha)))


def default_dt(spec: ModelSpec, depth: int) -> float:
    c = spec.correlation
    candidates = [0.01 / spec.delta, 0.01 / spec.lambda_width, STABILITY_LIMIT / stiffness(spec, depth)]
    na = depth * abs(c.alpha)
    if na > 0:
        candidates.append(0.02 / math.sqrt(na * max(1.0, abs(c.beta))))
    return min(candidates)


@dataclass(frozen=True)
class HeomConfig:
    depth: int | None = None
    dt: float | None = None
    stride: int = 1

    def __post_init__(self):
        if self.depth is not None and self.depth < 0:
            raise ValueError("truncation depth must be nonnegative")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.stride < 1:
            raise ValueError("record stride must be >= 1")

    def resolve(self, spec: ModelSpec) -> "HeomConfig":
        depth = default_depth(spec) if self.depth is None else self.depth
        dt = default_dt(spec, depth) if self.dt is None else self.dt
        check_stability(spec, depth, dt)
        return HeomConfig(depth=depth, dt=dt, stride=self.stride)


def check_stability(spec: ModelSpec, depth: int, dt: float) -> None:
    s = dt * stiffness(spec, depth)
    if s > STABILITY_LIMIT * (1 + 1e-9):
        raise ValueError(
            f"dt={dt:.4g} violates the stability guard: dt*max(|beta|, delta, N*sqrt|alpha|) = {s:.3g} > {STABILITY_LIMIT}"
        )


# ---------------------------------------------------------------------------
# operators and hierarchy layout

def system_hamiltonian(delta: float) -> np.ndarray:
    """H_s = delta/2 * sigma_x, diagonal in the |+-> basis."""
    return np.diag([0.5 * delta, -0.5 * delta]).astype(complex)


def coupling_operator(chi: float) -> np.ndarray:
    """L = sigma_- + chi sigma_+ with sigma_- = |-><+|."""
    return np.array([[0.0, chi], [1.0, 0.0]], dtype=complex)


class HierarchyIndex:
    """Triangular (m, n) layout with precomputed neighbour lookups.

    Neighbour arrays hold ``size`` (one past the last real slot) where the
    neighbour lies outside the truncation; callers pad with a zero matrix.
    """

    def __init__(self, depth: int):
        self.depth = depth
        self.pairs = [(m, n) for m in range(depth + 1) for n in range(depth + 1 - m)]
        self.position = {p: i for i, p in enumerate(self.pairs)}
        self.size = len(self.pairs)
        self.m = np.array([p[0] for p in self.pairs])
        self.n = np.array([p[1] for p in self.pairs])
        pad = self.size
        look = lambda dm, dn: np.array([self.position.get((m + dm, n + dn), pad) for m, n in self.pairs])
        self.down_m = look(-1, 0)
        self.down_n = look(0, -1)
        self.up_m = look(1, 0)
        self.up_n = look(0, 1)

    def __len__(self):
        return self.size


_INDEX_CACHE: dict[int, HierarchyIndex] = {}


def hierarchy_index(depth: int) -> HierarchyIndex:
    if depth not in _INDEX_CACHE:
        _INDEX_CACHE[depth] = HierarchyIndex(depth)
    return _INDEX_CACHE[depth]


@dataclass
class HierarchyState:
    depth: int
    rho: np.ndarray  # (n_aux, 2, 2)
    t: float = 0.0
    index: HierarchyIndex = field(init=False, repr=False)

    def __post_init__(self):
        self.index = hierarchy_index(self.depth)
        if self.rho.shape != (self.index.size, 2, 2):
            raise ValueError(f"expected {(self.index.size, 2, 2)} auxiliary array, got {self.rho.shape}")

    def __getitem__(self, mn: tuple[int, int]) -> np.ndarray:
        i = self.index.position.get(mn)
        return np.zeros((2, 2), complex) if i is None else self.rho[i]

    @property
    def reduced(self) -> np.ndarray:
        return self.rho[0]

    def cross_conjugacy_error(self) -> float:
        """max |rho^(n,m) - (rho^(m,n))^dagger| over the hierarchy."""
        err = 0.0
        for (m, n), i in self.index.position.items():
            j = self.index.position[(n, m)]
            err = max(err, float(np.abs(self.rho[j] - self.rho[i].conj().T).max()))
        return err

    def as_vector(self) -> np.ndarray:
        return self.rho.reshape(-1).copy()


def init_hierarchy(rho0: np.ndarray, depth: int) -> HierarchyState:
    check_density(rho0)
    idx = hierarchy_index(depth)
    rho = np.zeros((idx.size, 2, 2), dtype=complex)
    rho[0] = rho0
    return HierarchyState(depth, rho, 0.0)


# ---------------------------------------------------------------------------
# right-hand sides, term by term

def _padded(state: HierarchyState) -> np.ndarray:
    return np.concatenate([state.rho, np.zeros((1, 2, 2), complex)])


def _local_terms(state: HierarchyState, spec: ModelSpec) -> np.ndarray:
    idx = state.index
    H = system_hamiltonian(spec.delta)
    beta = spec.correlation.beta
    R = state.rho
    decay = idx.m * beta + idx.n * np.conj(beta)
    return -1j * (H @ R - R @ H) - decay[:, None, None] * R


def heom_rhs_boson(state: HierarchyState, spec: ModelSpec) -> np.ndarray:
    idx = state.index
    alpha = spec.correlation.alpha
    L = coupling_operator(spec.chi)
    Ld = L.conj().T
    Rp = _padded(state)
    d = _local_terms(state, spec)
    d += (idx.m * alpha)[:, None, None] * (L @ Rp[idx.down_m])
    d += (idx.n * np.conj(alpha))[:, None, None] * (Rp[idx.down_n] @ Ld)
    up_m, up_n = Rp[idx.up_m], Rp[idx.up_n]
    d -= Ld @ up_m - up_m @ Ld
    d += L @ up_n - up_n @ L
    return d


def heom_rhs_fermion(state: HierarchyState, spec: ModelSpec) -> np.ndarray:
    idx = state.index
    alpha = spec.correlation.alpha
    L = coupling_operator(spec.chi)
    Ld = L.conj().T
    Rp = _padded(state)
    d = _local_terms(state, spec)
    theta_m, theta_n = idx.m % 2, idx.n % 2
    sign_m, sign_n = (-1.0) ** idx.m, (-1.0) ** idx.n
    d += (theta_m * alpha)[:, None, None] * (L @ Rp[idx.down_m])
    d += (theta_n * np.conj(alpha))[:, None, None] * (Rp[idx.down_n] @ Ld)
    up_m, up_n = Rp[idx.up_m], Rp[idx.up_n]
    d += sign_n[:, None, None] * (up_m @ Ld) - Ld @ up_m
    d += sign_m[:, None, None] * (L @ up_n) - up_n @ L
    return d


def heom_rhs(state: HierarchyState, spec: ModelSpec) -> np.ndarray:
    if spec.bath_kind is BathKind.FERMION:
        return heom_rhs_fermion(state, spec)
    return heom_rhs_boson(state, spec)


# ---------------------------------------------------------------------------
# the same map as a sparse matrix on the row-major vectorised hierarchy

_I2 = np.eye(2)


def _left(A):  # X -> A X
    return np.kron(A, _I2)


def _right(B):  # X -> X B
    return np.kron(_I2, B.T)


def generator(spec: ModelSpec, depth: int) -> sps.csr_matrix:
    idx = hierarchy_index(depth)
    c = spec.correlation
    alpha, beta = c.alpha, c.beta
    H = system_hamiltonian(spec.delta)
    L = coupling_operator(spec.chi)
    Ld = L.conj().T
    comm_H = -1j * (_left(H) - _right(H))
    fermion = spec.bath_kind is BathKind.FERMION
    rows, cols, vals = [], [], []

    def put(i, j, block):
        r, cc = np.nonzero(block)
        rows.extend(4 * i + r)
        cols.extend(4 * j + cc)
        vals.extend(block[r, cc])

    for (m, n), i in idx.position.items():
        put(i, i, comm_H - (m * beta + n * np.conj(beta)) * np.eye(4))
        if fermion:
            down_m, down_n = (m % 2) * alpha, (n % 2) * np.conj(alpha)
            up_m = (-1) ** n * _right(Ld) - _left(Ld)
            up_n = (-1) ** m * _left(L) - _right(L)
        else:
            down_m, down_n = m * alpha, n * np.conj(alpha)
            up_m = -(_left(Ld) - _right(Ld))
            up_n = _left(L) - _right(L)
        if m > 0 and down_m != 0:
            put(i, idx.position[(m - 1, n)], down_m * _left(L))
        if n > 0 and down_n != 0:
            put(i, idx.position[(m, n - 1)], down_n * _right(Ld))
        if (m + 1, n) in idx.position:
            put(i, idx.position[(m + 1, n)], up_m)
        if (m, n + 1) in idx.position:
            put(i, idx.position[(m, n + 1)], up_n)
    dim = 4 * idx.size
    M = sps.csr_matrix((vals, (rows, cols)), shape=(dim, dim))
    M.eliminate_zeros()
    return M


def reachable_mask(M: sps.spmatrix, seeds) -> np.ndarray:
    """Entries of y that can become nonzero under y' = M y from ``seeds``."""
    A = (abs(sps.csr_matrix(M)) > 0).astype(np.int8)
    mask = np.zeros(M.shape[0], bool)
    mask[list(seeds)] = True
    while True:
        grown = mask | (A @ mask.astype(np.int8) > 0)
        if grown.sum() == mask.sum():
            return mask
        mask = grown


class HeomPropagator:
    """Generator restricted to the reachable sub-hierarchy, with an RK4 driver."""

    def __init__(self, spec: ModelSpec, depth: int, dt: float, route: str = "auto",
                 n_samples: int | None = None, stride: int | None = None):
        check_stability(spec, depth, dt)
        self.spec, self.depth, self.dt = spec, depth, dt
        full = generator(spec, depth)
        self.full_dim = full.shape[0]
        self.mask = reachable_mask(full, range(4))
        self.keep = np.flatnonzero(self.mask)
        M = full[self.keep][:, self.keep]
        self.rk4 = LinearRK4(M, dt, route=route, n_samples=n_samples, stride=stride)

    @property
    def dim(self) -> int:
        return len(self.keep)

    def initial_vector(self, rho0: np.ndarray) -> np.ndarray:
        v = np.zeros(self.dim, complex)
        v[:4] = np.asarray(rho0, complex).reshape(-1)  # (0,0) occupies slots 0..3 and is always kept
        return v

    def expand(self, v: np.ndarray) -> HierarchyState:
        full = np.zeros(self.full_dim, complex)
        full[self.keep] = v
        return HierarchyState(self.depth, full.reshape(-1, 2, 2))

    @staticmethod
    def reduced(v: np.ndarray) -> np.ndarray:
        return v[:4].reshape(2, 2).copy()

    def sample(self, rho0: np.ndarray, stride: int, n_samples: int) -> np.ndarray:
        """Reduced states (n_samples+1, 2, 2) every ``stride`` steps."""
        out = self.rk4.sample(self.initial_vector(rho0), stride, n_samples, observe=lambda v: v[:4].copy())
        return out.reshape(-1, 2, 2)


# ---------------------------------------------------------------------------
# driver

def check_trajectory(traj: Trajectory) -> None:
    """Trace, hermiticity and positivity of every recorded rho^(0,0); raises on the first breach."""
    rho = np.asarray(traj.states)
    tr = np.abs(np.trace(rho, axis1=-2, axis2=-1) - 1)
    herm = np.abs(rho - np.swapaxes(rho, -1, -2).conj()).max(axis=(-2, -1))
    eig = np.linalg.eigvalsh(0.5 * (rho + np.swapaxes(rho, -1, -2).conj()))[..., 0]
    checks = (
        ("trace", tr > TRACE_HARD_FAIL, tr, "|Tr rho - 1| = {:.3e}"),
        ("hermiticity", herm > TRACE_HARD_FAIL, herm, "deviation {:.3e}"),
        ("positivity", eig < -POSITIVITY_HARD_FAIL, eig, "eigenvalue {:.3e}"),
    )
    first = None
    for name, bad, values, fmt in checks:
        idx = np.flatnonzero(bad)
        if idx.size and (first is None or idx[0] < first[0]):
            first = (idx[0], name, fmt.format(values[idx[0]]))
    if first is not None:
        i, name, detail = first
        raise HeomInvariantError(f"{name} invariant violated at t={traj.times[i]:.6g}: {detail}")


def step_grid(t_max: float, dt: float, stride: int) -> tuple[int, float]:
    """Number of records and the (possibly shortened) step so records land on t_max."""
    n_steps = max(1, math.ceil(t_max / dt - 1e-9))
    n_records = max(1, math.ceil(n_steps / stride))
    return n_records, t_max / (n_records * stride)


def integrate(rho0: np.ndarray, spec: ModelSpec, cfg: HeomConfig, t_max: float,
              engine: str = "matrix", check: bool = True) -> Trajectory:
    """Reduced dynamics rho^(0,0)(t) on [0, t_max] sampled every ``cfg.stride`` steps.

    ``engine="array"`` integrates :func:`heom_rhs` directly (slow, for
    cross-checks); the default uses the pruned sparse generator.
    """
    cfg = cfg.resolve(spec)
    n_records, dt = step_grid(t_max, cfg.dt, cfg.stride)
    times = np.arange(n_records + 1) * cfg.stride * dt
    if engine == "matrix":
        prop = HeomPropagator(spec, cfg.depth, dt, n_samples=n_records, stride=cfg.stride)
        states = prop.sample(rho0, cfg.stride, n_records)
        route = prop.rk4.route
    elif engine == "array":
        state = init_hierarchy(rho0, cfg.depth)
        shape = state.rho.shape
        f = lambda y: heom_rhs(HierarchyState(cfg.depth, y.reshape(shape)), spec).reshape(-1)
        y = state.as_vector()
        states = [rho0]
        for _ in range(n_records):
            for _ in range(cfg.stride):
                y = rk4_step(f, y, dt)
            states.append(y[:4].reshape(2, 2).copy())
        states = np.array(states)
        route = "array"
    else:
        raise ValueError(f"unknown engine {engine!r}")
    traj = Trajectory(times, np.asarray(states), "heom", {
        "depth": cfg.depth, "dt": dt, "stride": cfg.stride, "route": route,
    })
    if check:
        check_trajectory(traj)
    return traj


@dataclass
class ConvergenceReport:
    depths: list[int]
    deviations: list[float]  # between consecutive depths
    tolerance: float = 1e-6

    @property
    def converged(self) -> bool:
        return bool(self.deviations) and self.deviations[-1] < self.tolerance

    @property
    def converged_depth(self) -> int | None:
        for depth, dev in zip(self.depths[1:], self.deviations):
            if dev < self.tolerance:
                return depth
        return None

    def as_dict(self) -> dict:
        return {"depths": self.depths, "deviations": self.deviations, "tolerance": self.tolerance,
                "converged": self.converged, "converged_depth": self.converged_depth}


def convergence_scan(rho0, spec: ModelSpec, cfg: HeomConfig, t_max: float, depths,
                     tolerance: float = 1e-6) -> ConvergenceReport:
    """Sup-norm change of rho^(0,0)(t) between consecutive truncation depths.

    All depths share the step of the deepest one so only truncation varies.
    """
    depths = list(depths)
    if any(b <= a for a, b in zip(depths, depths[1:])):
        raise ValueError("depths must be strictly increasing")
    dt = cfg.dt if cfg.dt is not None else default_dt(spec, depths[-1])
    runs = [integrate(rho0, spec, HeomConfig(depth=d, dt=dt, stride=cfg.stride), t_max).states for d in depths]
    devs = [float(np.abs(b - a).max()) for a, b in zip(runs, runs[1:])]
    report = ConvergenceReport(depths, devs, tolerance)
    log.info("convergence scan %s", report.as_dict())
    return report


def select_depth(rho0, spec: ModelSpec, t_max: float, tolerance: float = 1e-9, start: int = 4,
                 step: int = 2, max_depth: int = 40, stride: int = 20) -> tuple[int, ConvergenceReport]:
    """Smallest depth whose trajectory differs from the previous depth by less than ``tolerance``.

    Depths grow from ``start`` in increments of ``step``; both members of each
    pair run at the step size of the deeper one so only truncation differs.
    Raises if ``max_depth`` is passed first.
    """
    if spec.gamma == 0:
        return 1, ConvergenceReport([start], [], tolerance)
    depths, devs = [start], []
    depth = start
    while depth + step <= max_depth:
        dt = default_dt(spec, depth + step)
        a, b = (integrate(rho0, spec, HeomConfig(d, dt, stride), t_max).states for d in (depth, depth + step))
        depth += step
        depths.append(depth)
        devs.append(float(np.abs(b - a).max()))
        if devs[-1] < tolerance:
            return depth, ConvergenceReport(depths, devs, tolerance)
    raise RuntimeError(f"hierarchy not converged to {tolerance:g} by depth {max_depth}: {devs}")
