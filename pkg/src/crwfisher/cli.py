"""Command-line front end.

    crwfisher simulate --config run.cfg --out results/
    crwfisher fisher   --config run.cfg --out results/
    crwfisher sweep    --config sweep.cfg --out results/ --jobs 4
    crwfisher validate --config run.cfg --out results/

Exit codes: 0 success, 1 solver failure, 2 configuration error, 3 a
validation check failed.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import heom, oracle, reference
from .config import ConfigError, RunConfig, SweepSpec, load_config
from .fisher import SOLVERS, compare_with_rwa
from .model import BathKind, Trajectory, bloch_from_density, initial_density
from .output import atomic_write, fisher_csv, sweep_csv, to_json, trajectory_csv, versions

log = logging.getLogger("crwfisher")

# validation tolerances
RWA_TOL = 1e-3
BATH_KIND_TOL = 1e-8
NZ_TOL = 0.02
ORACLE_TOL = 0.01
CONVERGENCE_TOL = 1e-6
# the Born-level memory equation is only held to NZ_TOL when gamma/delta is this small
NZ_WEAK_COUPLING = 0.01
DEFAULT_ORACLE_MODES = 64


# ---------------------------------------------------------------------------
# shared pieces

def provenance(run: RunConfig, **extra) -> dict:
    meta = {"config": run.values}
    if run.path:
        meta["config_path"] = run.path
    meta.update(extra)
    meta["versions"] = versions()
    return meta


def _resolve_depth(run: RunConfig, spec, t_max: float):
    depth = run.get("depth")
    if depth == "auto":
        depth, scan = heom.select_depth(initial_density(spec.phi), spec, t_max)
        return depth, scan.as_dict()
    return (heom.default_depth(spec) if depth is None else depth), None


def trajectory(run: RunConfig, solver: str) -> Trajectory:
    """Reduced dynamics on [0, t_max] with the record spacing implied by ``samples``."""
    spec = run.spec()
    # the oracle is not a Fisher solver; only the horizon and sampling settings are borrowed
    fcfg = run.fisher_config(solver if solver in SOLVERS else "heom")
    t_max = fcfg.horizon(spec)
    samples = fcfg.n_samples(spec, t_max)
    rho0 = initial_density(spec.phi)
    if solver == "rwa":
        return reference.rwa_trajectory(rho0, spec, np.linspace(0.0, t_max, samples + 1), fcfg.omega_variant)
    if solver == "heom":
        depth, scan = _resolve_depth(run, spec, t_max)
        dt = run.get("dt") or heom.default_dt(spec, depth)
        stride = max(1, math.ceil(t_max / samples / dt - 1e-9))
        traj = heom.integrate(rho0, spec, heom.HeomConfig(depth, dt, stride), t_max)
        if scan:
            traj.metadata["convergence_scan"] = scan
        return traj
    if solver == "nz":
        dt = run.get("dt") or reference.nz_default_dt(spec, fcfg.kernel)
        stride = max(1, math.ceil(t_max / samples / dt - 1e-9))
        return reference.nz_integrate(bloch_from_density(rho0), spec, dt, t_max, stride, fcfg.kernel)
    if solver == "oracle":
        modes = run.get("oracle_modes", DEFAULT_ORACLE_MODES)
        return oracle.oracle_trajectory(spec, modes, t_max, t_max / samples, run.get("oracle_e_max"))
    raise ConfigError(f"unknown solver {solver!r}", run.path, run.lines.get("solver"))


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(run: RunConfig, out: Path) -> list[Path]:
    solver = run.get("solver", "heom")
    traj = trajectory(run, solver)
    spec = run.spec()
    meta = provenance(run, solver=traj.solver, spec=spec.to_config(), solver_metadata=traj.metadata)
    return [atomic_write(out / "trajectory.csv", trajectory_csv(traj, meta))]


def cmd_fisher(run: RunConfig, out: Path) -> list[Path]:
    spec = run.spec()
    bath, rwa, report = compare_with_rwa(spec, run.fisher_config())
    written = [atomic_write(out / "fisher_series.csv",
                            fisher_csv(bath, provenance(run, spec=spec.to_config(), series=bath.metadata)))]
    if rwa is not bath:
        written.append(atomic_write(out / "fisher_series_rwa.csv",
                                    fisher_csv(rwa, provenance(run, spec=rwa.spec.to_config(), series=rwa.metadata))))
    written.append(atomic_write(out / "metrics.json", to_json(report.as_dict())))
    return written


def sweep_point(values: dict, path: str | None, lines: dict, value: float) -> dict:
    """One grid point; failures become an error row instead of propagating."""
    run = RunConfig(values, lines, path)
    try:
        _, _, report = compare_with_rwa(run.spec(), run.fisher_config())
        row = report.as_dict()
        row["status"] = "ok"
    except Exception as exc:  # record-and-continue policy for sweeps
        row = {"chi": values.get("chi", 1.0),
               "gamma_cm1": values.get("gamma_cm1"), "lambda_over_gamma": values.get("lambda_over_gamma"),
               "bath": values.get("bath", "boson"), "status": "error", "error": f"{type(exc).__name__}: {exc}"}
    row["_axis_value"] = value
    return row


def cmd_sweep(run: RunConfig, out: Path, jobs: int = 1) -> list[Path]:
    sweep = SweepSpec.from_config(run)
    points = [sweep.point(v) for v in sweep.values]
    for p in points:
        p.spec()  # configuration errors abort before any work starts
        p.fisher_config()
    args = [(p.values, p.path, p.lines, v) for p, v in zip(points, sweep.values)]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(sweep_point, *zip(*args)))
    else:
        rows = [sweep_point(*a) for a in args]
    rows.sort(key=lambda r: r.pop("_axis_value"))
    meta = provenance(run, axis=sweep.axis, points=len(rows), failed=sum(r["status"] != "ok" for r in rows))
    return [atomic_write(out / "sweep.csv", sweep_csv(rows, meta)),
            atomic_write(out / "sweep.json", to_json({"metadata": meta, "rows": rows}))]


def _check(name, deviation, tolerance, gated=True, **extra) -> dict:
    entry = {"name": name, "deviation": float(deviation), "tolerance": tolerance, "gated": gated,
             "passed": bool(deviation <= tolerance)}
    entry.update(extra)
    return entry


def validation_report(run: RunConfig) -> dict:
    spec = run.spec()
    base = run.with_values(solver="heom")
    traj = trajectory(base, "heom")
    depth = traj.metadata["depth"]
    checks = []
    if spec.chi == 0:
        rwa = reference.rwa_trajectory(initial_density(spec.phi), spec, traj.times)
        checks.append(_check("heom vs rwa <sigma_z>", np.abs(traj.sigma_z - rwa.sigma_z).max(), RWA_TOL))
        other = BathKind.FERMION if spec.bath_kind is BathKind.BOSON else BathKind.BOSON
        twin = trajectory(base.with_values(bath=other.value, depth=depth), "heom")
        checks.append(_check("boson vs fermion rho", np.abs(twin.states - traj.states).max(), BATH_KIND_TOL))
    if spec.chi == 1 and spec.bath_kind is BathKind.BOSON:
        r0 = bloch_from_density(initial_density(spec.phi))
        stride = traj.metadata["stride"]
        nz = reference.nz_integrate(r0, spec, traj.metadata["dt"], traj.times[-1], stride)
        weak = spec.gamma / spec.delta <= NZ_WEAK_COUPLING
        checks.append(_check("heom vs nz <sigma_z>", np.abs(traj.sigma_z - nz.sigma_z).max(), NZ_TOL, gated=weak,
                             note=None if weak else "Born approximation outside its weak-coupling range; reported only"))
    modes = run.get("oracle_modes", DEFAULT_ORACLE_MODES)
    if modes and spec.gamma > 0:
        bath = oracle.DiscretizedBath.from_spec(spec, modes)
        last = int(np.searchsorted(traj.times, bath.recurrence_time, side="right")) - 1
        if last >= 1:
            H, basis = oracle.build_hamiltonian(bath, spec, run.get("oracle_e_max"))
            ora = oracle.exact_evolve(H, oracle.initial_state(basis, spec.phi), traj.times[last], traj.times[1],
                                      basis, bath)
            n = min(len(ora.times), last + 1)
            dev = np.abs(ora.sigma_z[:n] - traj.sigma_z[:n]).max()
            checks.append(_check("heom vs oracle <sigma_z>", dev, ORACLE_TOL, horizon=float(ora.times[n - 1]),
                                 oracle=bath.metadata() | {"E_max": basis.e_max}))
    depths = run.get("scan_depths") or [d for d in (depth - 4, depth - 2, depth) if d >= 1]
    convergence = None
    if len(depths) >= 2:
        scan = heom.convergence_scan(initial_density(spec.phi), spec,
                                     heom.HeomConfig(stride=traj.metadata["stride"], dt=traj.metadata["dt"]),
                                     float(traj.times[-1]), depths, CONVERGENCE_TOL)
        convergence = scan.as_dict()
    return {
        "spec": spec.to_config(),
        "heom": traj.metadata,
        "checks": checks,
        "convergence": convergence,
        "passed": all(c["passed"] for c in checks if c["gated"]),
        "provenance": provenance(run),
    }


def cmd_validate(run: RunConfig, out: Path) -> tuple[list[Path], bool]:
    report = validation_report(run)
    return [atomic_write(out / "validation.json", to_json(report))], report["passed"]


# ---------------------------------------------------------------------------
# entry point

def _depth_arg(text: str):
    if text == "auto":
        return text
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected an integer or 'auto'") from None
    if value < 1:
        raise argparse.ArgumentTypeError("depth must be at least 1")
    return value


def _positive(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crwfisher", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("simulate", "reduced dynamics to CSV"),
                            ("fisher", "Fisher information series and optimum metrics"),
                            ("sweep", "metrics over a chi or gamma grid"),
                            ("validate", "cross-check HEOM against the reference solvers")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="flat key = value configuration file")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--solver", choices=SOLVERS + (("oracle",) if name == "simulate" else ()),
                       help="override the configured solver")
        p.add_argument("--depth", type=_depth_arg, help="hierarchy depth, or 'auto' for a convergence-selected one")
        p.add_argument("--dt", type=_positive, help="integration step in internal time units (ps)")
        p.add_argument("--seedless", action="store_true",
                       help="accepted for scripting symmetry; every computation is deterministic already")
        if name == "sweep":
            p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    out = Path(args.out)
    try:
        run = load_config(args.config)
        overrides = {k: getattr(args, k) for k in ("solver", "depth", "dt") if getattr(args, k) is not None}
        run = run.with_values(**overrides)
        run.spec()
        if args.command == "simulate":
            written = cmd_simulate(run, out)
        elif args.command == "fisher":
            written = cmd_fisher(run, out)
        elif args.command == "sweep":
            written = cmd_sweep(run, out, max(1, args.jobs))
        else:
            written, passed = cmd_validate(run, out)
            for p in written:
                print(p)
            return 0 if passed else 3
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (heom.HeomInvariantError, ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for p in written:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
