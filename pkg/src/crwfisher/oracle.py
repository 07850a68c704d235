"""Brute-force reference: the probe plus a finite set of bath modes, evolved exactly.

The Lorentzian is sampled on K equally spaced modes across delta +- W*lambda
with midpoint couplings. The Hilbert space is truncated by the total
excitation number (probe excitation plus bath quanta). For chi = 0 that number
is conserved and E_max = 1 is exact; counter-rotating terms change it by two,
so higher cutoffs are needed for chi > 0. Fermionic modes carry Jordan-Wigner
sign strings in ascending-frequency order. Results are only meaningful before
the discrete bath revives, at t = 2 pi / d_omega.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import expm_multiply

from .model import BathKind, ModelSpec, Trajectory, spectral_density

DEFAULT_WINDOW = 20.0
DEFAULT_DIM_CAP = 2_000_000
NORM_TOL = 1e-8
CHUNK = 64


@dataclass(frozen=True)
class DiscretizedBath:
    omegas: np.ndarray
    couplings: np.ndarray
    d_omega: float
    window: float
    kind: BathKind

    @classmethod
    def from_spec(cls, spec: ModelSpec, n_modes: int, window: float = DEFAULT_WINDOW) -> "DiscretizedBath":
        if n_modes < 1:
            raise ValueError("need at least one bath mode")
        lo = spec.delta - window * spec.lambda_width
        d_omega = 2 * window * spec.lambda_width / n_modes
        omegas = lo + (np.arange(n_modes) + 0.5) * d_omega
        couplings = np.sqrt(spectral_density(omegas, spec) * d_omega)
        return cls(omegas, couplings, d_omega, window, spec.bath_kind)

    @property
    def n_modes(self) -> int:
        return len(self.omegas)

    @property
    def recurrence_time(self) -> float:
        return 2 * math.pi / self.d_omega

    def window_weight(self, spec: ModelSpec) -> float:
        """Exact integral of J over the sampled window, (gamma/pi) * lambda * arctan(W)."""
        return spec.gamma * spec.lambda_width / math.pi * math.atan(self.window)

    def tail_fraction(self) -> float:
        """Share of the Lorentzian weight outside the window."""
        return 1 - 2 / math.pi * math.atan(self.window)

    def metadata(self) -> dict:
        return {"K": self.n_modes, "W": self.window, "d_omega": self.d_omega,
                "recurrence_time": self.recurrence_time, "tail_fraction": self.tail_fraction()}


class Basis:
    """Probe state (0 = |+>, 1 = |->) times a bath configuration.

    A configuration is a sorted tuple of occupied mode indices, repeated for
    multiply occupied bosonic modes. The probe's |+> counts as one excitation.
    """

    def __init__(self, n_modes: int, kind: BathKind, e_max: int, cap: int = DEFAULT_DIM_CAP):
        if e_max < 1:
            raise ValueError("excitation cutoff must be at least 1")
        self.n_modes, self.kind, self.e_max = n_modes, kind, e_max
        dim = 2 * sum(self._count(n) for n in range(e_max)) + self._count(e_max)
        if dim > cap:
            raise ValueError(f"basis dimension {dim} exceeds the cap {cap}")
        self.configs: list[tuple[int, ...]] = []
        for n in range(e_max + 1):
            gen = (itertools.combinations_with_replacement if kind is BathKind.BOSON
                   else itertools.combinations)(range(n_modes), n)
            self.configs.extend(gen)
        self.config_index = {c: i for i, c in enumerate(self.configs)}
        # slot of (probe, config); the probe |+> is unavailable on the top level
        self.states = [(s, c) for c in self.configs for s in (0, 1) if len(c) + (s == 0) <= e_max]
        self.index = {st: i for i, st in enumerate(self.states)}
        self.dim = len(self.states)

    def _count(self, n: int) -> int:
        k = self.n_modes
        return math.comb(k + n - 1, n) if self.kind is BathKind.BOSON else math.comb(k, n)

    def excitations(self) -> np.ndarray:
        return np.array([len(c) + (s == 0) for s, c in self.states], float)

    def create(self, config: tuple[int, ...], k: int):
        """c_k^dagger on a configuration: (new configuration, amplitude) or None."""
        if self.kind is BathKind.BOSON:
            n = config.count(k)
            new = tuple(sorted(config + (k,)))
            return new, math.sqrt(n + 1)
        if k in config:
            return None
        sign = -1.0 if sum(1 for q in config if q < k) % 2 else 1.0
        return tuple(sorted(config + (k,))), sign


def build_hamiltonian(bath: DiscretizedBath, spec: ModelSpec, e_max: int | None = None,
                      cap: int = DEFAULT_DIM_CAP) -> tuple[sps.csr_matrix, Basis]:
    """Sparse Hermitian H = H_s + sum w_k c_k^+ c_k + sum g_k (L c_k^+ + L^+ c_k)."""
    if e_max is None:
        e_max = 1 if spec.chi == 0 else 3
    if spec.chi > 0 and e_max < 3:
        raise ValueError("counter-rotating terms need an excitation cutoff of at least 3")
    basis = Basis(bath.n_modes, bath.kind, e_max, cap)
    rows, cols, vals = [], [], []
    half = 0.5 * spec.delta
    for i, (s, c) in enumerate(basis.states):
        rows.append(i)
        cols.append(i)
        vals.append((half if s == 0 else -half) + float(sum(bath.omegas[q] for q in c)))
    # L = |-><+| + chi |+><-|; the Hermitian conjugate terms are added by symmetry
    probe_moves = [(0, 1, 1.0)]  # sigma_- takes |+> to |->
    if spec.chi:
        probe_moves.append((1, 0, spec.chi))
    for i, (s, c) in enumerate(basis.states):
        for s_from, s_to, weight in probe_moves:
            if s != s_from:
                continue
            for k in range(bath.n_modes):
                made = basis.create(c, k)
                if made is None:
                    continue
                new, amp = made
                j = basis.index.get((s_to, new))
                if j is None:
                    continue  # beyond the excitation cutoff
                v = weight * bath.couplings[k] * amp
                rows += [j, i]
                cols += [i, j]
                vals += [v, v]
    H = sps.csr_matrix((vals, (rows, cols)), shape=(basis.dim, basis.dim), dtype=complex)
    return H, basis


def initial_state(basis: Basis, phi: float) -> np.ndarray:
    psi = np.zeros(basis.dim, complex)
    psi[basis.index[(0, ())]] = math.cos(phi)
    psi[basis.index[(1, ())]] = math.sin(phi)
    return psi


def _trace_maps(basis: Basis) -> tuple[np.ndarray, np.ndarray]:
    """Per configuration, the slots holding probe |+> and |->; missing slots point past the end."""
    plus = np.full(len(basis.configs), basis.dim)
    minus = np.full(len(basis.configs), basis.dim)
    for i, (s, c) in enumerate(basis.states):
        (plus if s == 0 else minus)[basis.config_index[c]] = i
    return plus, minus


def reduce_state(psi: np.ndarray, basis: Basis, maps=None) -> np.ndarray:
    """Probe density matrix(es) from amplitude vector(s) of shape (..., dim)."""
    plus, minus = maps if maps is not None else _trace_maps(basis)
    psi = np.asarray(psi)
    pad = np.concatenate([psi, np.zeros(psi.shape[:-1] + (1,), psi.dtype)], axis=-1)
    a, b = pad[..., plus], pad[..., minus]
    rho = np.empty(psi.shape[:-1] + (2, 2), complex)
    rho[..., 0, 0] = np.sum(np.abs(a) ** 2, axis=-1)
    rho[..., 1, 1] = np.sum(np.abs(b) ** 2, axis=-1)
    rho[..., 0, 1] = np.sum(a * b.conj(), axis=-1)
    rho[..., 1, 0] = rho[..., 0, 1].conj()
    return rho


def exact_evolve(H, psi0: np.ndarray, t_max: float, dt: float, basis: Basis,
                 bath: DiscretizedBath | None = None, keep_states: bool = False) -> Trajectory:
    """Reduced probe dynamics sampled every ``dt`` on [0, t_max].

    Refuses horizons beyond the recurrence time of ``bath`` when given. The
    full amplitudes are returned in ``metadata["states"]`` if ``keep_states``.
    """
    if bath is not None and t_max > bath.recurrence_time:
        raise ValueError(f"t_max={t_max:.4g} exceeds the bath recurrence time {bath.recurrence_time:.4g}")
    n = max(1, int(round(t_max / dt)))
    times = np.linspace(0.0, t_max, n + 1)
    h = t_max / n
    maps = _trace_maps(basis)
    norm0 = np.linalg.norm(psi0)
    A = -1j * H
    # records are produced in chunks so memory stays at CHUNK amplitude vectors
    rho, kept, drift_max = [reduce_state(psi0, basis, maps)[None]], [psi0[None]], 0.0
    psi, done = psi0, 0
    while done < n:
        m = min(CHUNK, n - done)
        block = expm_multiply(A, psi, start=0.0, stop=m * h, num=m + 1, endpoint=True)[1:]
        drift = np.abs(np.linalg.norm(block, axis=-1) - norm0)
        if drift.max() > NORM_TOL:
            i = int(np.argmax(drift))
            raise RuntimeError(f"norm drift {drift[i]:.3e} at t={times[done + 1 + i]:.6g}")
        drift_max = max(drift_max, float(drift.max()))
        rho.append(reduce_state(block, basis, maps))
        if keep_states:
            kept.append(block)
        psi, done = block[-1], done + m
    meta = {"E_max": basis.e_max, "dim": basis.dim, "norm_drift": drift_max}
    if bath is not None:
        meta.update(bath.metadata())
    if keep_states:
        meta["states"] = np.concatenate(kept)
    return Trajectory(times, np.concatenate(rho), "oracle", meta)


def oracle_trajectory(spec: ModelSpec, n_modes: int, t_max: float, dt: float,
                      e_max: int | None = None, window: float = DEFAULT_WINDOW) -> Trajectory:
    bath = DiscretizedBath.from_spec(spec, n_modes, window)
    H, basis = build_hamiltonian(bath, spec, e_max)
    return exact_evolve(H, initial_state(basis, spec.phi), t_max, dt, basis, bath)
