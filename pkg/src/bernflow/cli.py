"""Command-line front end: ``bernflow <command> --config run.ini``.

Exit status: 0 clean, 1 invalid configuration, 2 property violation
found (energy monotonicity or nesting), 3 solver failure, 4 a ``--check``
tolerance failed.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from bernflow import io
from bernflow.config import COMMANDS, RunConfig, load_config
from bernflow.errors import BernflowError, ConfigurationError, ContainmentError, SolverError
from bernflow.flow import (
    LEDGER_COLUMNS,
    STATUS_SOLVER,
    FlowConfig,
    FlowRun,
    nesting,
    refinement_study,
    run_flow,
)
from bernflow.grid import Ball, equivalent_radius
from bernflow.jh import free_boundary_residual, minimize_jh
from bernflow.potential import boundary_gradient, capacity_refinement_probe, solve_potential
from bernflow.radial import (
    equilibrium_radius,
    radial_capacity,
    radial_discrete_flow,
    radial_energy,
    radial_flow_ode,
    radial_step,
    radial_velocity,
    sphere_area,
)

log = logging.getLogger("bernflow")

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3, 4


class Checks:
    """Collects PASS/FAIL lines; printed only when ``--check`` is set."""

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.failed = 0

    def __call__(self, name: str, ok: bool, detail: str) -> bool:
        if not ok:
            self.failed += 1
        if self.enabled:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return ok


def concentric_radii(cfg: RunConfig, prefix: str = "shapes") -> tuple[float, float] | None:
    """``(a, b)`` when source and omega are balls with a common center."""
    keys = ("source", "omega") if prefix == "shapes" else ("source_b", "omega_b")
    s, o = (cfg.get(prefix, k) for k in keys)
    if isinstance(s, Ball) and isinstance(o, Ball) and np.allclose(s.center, o.center) and s.radius < o.radius:
        return s.radius, o.radius
    return None


# --------------------------------------------------------------------------- subcommands


def cmd_capacity(cfg: RunConfig, out: Path, checks: Checks) -> int:
    sol = solve_potential(cfg.source, cfg.omega, cfg.solver)
    n = cfg.grid.ndim
    print(f"capacity {sol.capacity:.10g}  (residual {sol.residual:.2e}, grid {cfg.grid.cells})")
    rows = [("grid", sol.capacity)]
    radii = concentric_radii(cfg)
    if radii:
        ref = radial_capacity(radii[0], radii[1], n)
        rel = sol.capacity / ref - 1
        print(f"analytic {ref:.10g}  relative error {rel:+.3%}")
        rows.append(("analytic", ref))
        checks("radial capacity", abs(rel) <= 0.02, f"relative error {rel:+.3%} (tolerance 2%)")
    probe = cfg.get("capacity", "radii")
    if probe:
        caps = capacity_refinement_probe(cfg.source, cfg.omega, list(probe), cfg.solver)
        for r, c in zip(probe, caps):
            print(f"dilation {r:g}: capacity {c:.10g}")
            rows.append((f"dilation_{r:g}", c))
    io.write_csv(out / "capacity.csv", ["quantity", "value"], rows)
    io.write_field_csv(out / "potential.csv", sol.u)
    trace = boundary_gradient(sol)
    io.write_trace_csv(out / "boundary_gradient.csv", trace.points, np.asarray(trace.values), "grad")
    return EXIT_OK


def cmd_minimize(cfg: RunConfig, out: Path, checks: Checks) -> int:
    h = cfg.get("flow", "h")
    res = minimize_jh(cfg.source, cfg.omega, h, cfg.minimizer)
    print(
        f"J {res.jh:.10g}  solves {res.iterations}  moves {res.accepted_moves}  "
        f"converged {res.converged}  free-boundary residual {res.fb_residual:.4f}"
    )
    io.write_pgm(out / "positivity.pgm", res.positivity)
    io.write_field_csv(out / "potential.csv", res.u.u)
    if cfg.get("run", "verbose"):
        io.write_csv(
            out / "minimizer_log.csv",
            ["iteration", "jh", "changed_cells", "relaxation"],
            [(r["iteration"], r["jh"], r["changed_cells"], r["relaxation"]) for r in res.history],
        )
    status = EXIT_OK
    if res.converged:
        fr = free_boundary_residual(res, cfg.omega, h)
        io.write_trace_csv(out / "fb_residual.csv", fr.points, fr.values, "residual")
        checks("free-boundary residual", fr.max_abs <= 0.1, f"max |res| {fr.max_abs:.4f} (tolerance 0.1)")
    else:
        checks("minimizer convergence", False, "minimizer did not converge")
        status = EXIT_SOLVER
    radii = concentric_radii(cfg)
    if radii:
        rho = radial_step(radii[0], radii[1], h, cfg.grid.ndim)
        got = equivalent_radius(res.positivity)
        cells = abs(got - rho) / cfg.grid.dx
        print(f"positivity radius {got:.6f}  radial root {rho:.6f}  ({cells:.2f} cells)")
        checks("radial minimizer", cells <= 2, f"{cells:.2f} cells from the radial root (tolerance 2)")
    return status


class _LedgerWriter:
    """Rewrites the ledger after every state so partial runs keep their rows."""

    def __init__(self, out: Path, every: int, steps: int):
        self.out = out
        self.every = every
        self.steps = steps
        self.rows: list[tuple] = []

    def __call__(self, state):
        if self.rows and self.rows[-1][0] == state.n:
            self.rows[-1] = state.row.as_tuple()
        else:
            self.rows.append(state.row.as_tuple())
        io.write_csv(self.out / "ledger.csv", LEDGER_COLUMNS, self.rows)
        if state.n == 0 or state.n == self.steps or (self.every and state.n % self.every == 0):
            io.write_pgm(self.out / "snapshots" / f"omega_{state.n:05d}.pgm", state.omega)


def _flow_status(run: FlowRun) -> int:
    if run.status == STATUS_SOLVER:
        return EXIT_SOLVER
    if run.violations:
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_flow(cfg: RunConfig, out: Path, checks: Checks) -> int:
    fc = cfg.flow
    writer = _LedgerWriter(out, fc.snapshot_every, fc.steps)
    run = run_flow(cfg.source, cfg.omega, fc, on_state=writer)
    io.write_pgm(out / "snapshots" / f"omega_{run.final.n:05d}.pgm", run.final.omega)
    e = run.energies()
    print(f"status {run.status}  steps {run.final.n}  E0 {e[0]:.8g}  E_final {e[-1]:.8g}  violations {len(run.violations)}")
    if run.error:
        print(f"error: {run.error}")
    checks(
        "energy monotonicity",
        not run.violations and run.status != STATUS_SOLVER,
        f"{len(run.violations)} violating steps of {run.final.n}",
    )
    radii = concentric_radii(cfg)
    if radii:
        dx = cfg.grid.dx
        h = fc.h
        T = run.final.n * h
        traj = radial_flow_ode(radii[0], radii[1], T, cfg.grid.ndim, dt=min(1e-3, h / 10)) if T > 0 else None
        rows = []
        dev = dev_all = 0.0
        for s in run.states:
            r = equivalent_radius(s.omega)
            ref = traj.at(s.time) if traj is not None else radii[1]
            rows.append((s.n, s.time, r, ref))
            dev_all = max(dev_all, abs(r - ref))
            if s.time <= 1.0 + 1e-12:
                dev = max(dev, abs(r - ref))
        io.write_csv(out / "radius.csv", ["n", "t", "grid_radius", "ode_radius"], rows)
        print(f"max radius deviation from the radial ODE over the whole run: {dev_all:.4f}")
        tol = max(3 * dx, 2 * h)
        checks("radial tracking", dev <= tol, f"max deviation {dev:.4f} on t<=1 (tolerance {tol:.4f})")
    return _flow_status(run)


def cmd_radial(cfg: RunConfig, out: Path, checks: Checks) -> int:
    rv = cfg.values["radial"]
    n, a, b0, T = rv["ndim"], rv["a"], rv["b0"], rv["T"]
    h = rv["h"]
    dt = rv["dt"] or (min(1e-3, h / 10) if h else 1e-3)
    b_star = equilibrium_radius(a, n)
    print(f"equilibrium radius {b_star:.7f}")
    traj = radial_flow_ode(a, b0, T, n, dt=dt)
    rows = [(t, b) for t, b in zip(traj.t, traj.b)]
    io.write_csv(out / "trajectory.csv", ["t", "b"], rows)
    print(f"b(T={traj.t[-1]:g}) = {traj.b[-1]:.10g}  collapsed {traj.collapsed}")
    if h:
        disc = radial_discrete_flow(a, b0, h, int(math.floor(T / h + 1e-9)), n)
        io.write_csv(out / "discrete.csv", ["n", "t", "b"], [(k, k * h, b) for k, b in enumerate(disc)])

    ref = _independent_equilibrium(a, n)
    checks("equilibrium radius", abs(b_star - ref) <= 1e-8, f"|b* - independent| = {abs(b_star - ref):.2e}")
    err = hadamard_rate_error(a, traj, n)
    checks("energy rate", err <= 1e-4, f"max relative mismatch {err:.2e} (tolerance 1e-4)")
    return EXIT_OK


def _independent_equilibrium(a: float, n: int) -> float:
    """Closed form for N=3, plain bisection on ``b ln(b/a) = 1`` for N=2."""
    if n == 3:
        return (a + math.sqrt(a * a + 4 * a)) / 2
    lo, hi = a, a + 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid * math.log(mid / a) < 1:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def hadamard_rate_error(a: float, traj, n: int, samples: int = 20) -> float:
    """Max relative gap between the energy rate by central differences and ``-α b^{N-1} V²``."""
    t, b = traj.t, traj.b
    if len(t) < 3:
        return 0.0
    energy = np.array([radial_energy(a, x, n) for x in b])
    idx = np.unique(np.linspace(1, len(t) - 2, samples).astype(int))
    worst = 0.0
    for i in idx:
        fd = (energy[i + 1] - energy[i - 1]) / (t[i + 1] - t[i - 1])
        exact = -sphere_area(n) * b[i] ** (n - 1) * radial_velocity(a, b[i], n) ** 2
        scale = max(abs(exact), 1e-300)
        if abs(exact) < 1e-12 and abs(fd) < 1e-9:
            continue
        worst = max(worst, abs(fd - exact) / scale)
    return worst


def _run_one(args):
    source, omega, fc = args
    return run_flow(source, omega, fc)


def _map(fn, jobs, serial: bool):
    if serial or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(len(jobs), 4)) as pool:
        return list(pool.map(fn, jobs))


def _write_ledger(path: Path, run: FlowRun) -> None:
    io.write_csv(path, LEDGER_COLUMNS, [r.as_tuple() for r in run.rows])


def cmd_compare(cfg: RunConfig, out: Path, checks: Checks) -> int:
    if not cfg.source.issubset(cfg.source_b) or not cfg.omega.issubset(cfg.omega_b):
        raise ConfigurationError("compare needs shapes.source ⊆ compare.source_b and shapes.omega ⊆ compare.omega_b")
    jobs = [(cfg.source, cfg.omega, cfg.flow), (cfg.source_b, cfg.omega_b, cfg.flow)]
    run_a, run_b = _map(_run_one, jobs, cfg.get("run", "serial"))
    for name, run in (("a", run_a), ("b", run_b)):
        (out / name).mkdir(parents=True, exist_ok=True)
        _write_ledger(out / name / "ledger.csv", run)
    rep = nesting(run_a, run_b)
    io.write_csv(out / "nesting.csv", ["n", "cells_outside_band"], list(enumerate(rep.excess)))
    first = "none" if rep.first_violation is None else str(rep.first_violation)
    print(f"steps {rep.steps}  nested {rep.nested}  first violation {first}")
    checks("comparison", rep.nested, f"first violation at step {first}")
    if STATUS_SOLVER in (run_a.status, run_b.status):
        return EXIT_SOLVER
    return EXIT_OK if rep.nested else EXIT_VIOLATION


def cmd_refine(cfg: RunConfig, out: Path, checks: Checks) -> int:
    hs = sorted(cfg.get("refine", "hs"), reverse=True)
    T = cfg.get("refine", "T")
    serial = cfg.get("run", "serial")

    def runner(configs: list[FlowConfig]):
        return _map(_run_one, [(cfg.source, cfg.omega, c) for c in configs], serial)

    rep = refinement_study(cfg.source, cfg.omega, hs, T, minimizer=cfg.minimizer, runner=runner)
    for h, run in rep.runs.items():
        sub = out / f"h_{h:g}"
        sub.mkdir(parents=True, exist_ok=True)
        _write_ledger(sub / "ledger.csv", run)
    rows = []
    radii = concentric_radii(cfg)
    for i, t in enumerate(rep.times):
        for k, h in enumerate(hs):
            haus = rep.hausdorff[t][k] if k < len(hs) - 1 else float("nan")
            rows.append((t, h, rep.radii[h][i], rep.energies[h][i], haus))
    io.write_csv(out / "refinement.csv", ["t", "h", "radius", "energy", "hausdorff_to_next"], rows)
    print("Hausdorff at T between consecutive h:", ", ".join(f"{x:.4f}" for x in rep.hausdorff[T]))
    print("ratios:", ", ".join(f"{x:.3f}" for x in rep.ratios))
    if rep.ratios:
        ok = all(r >= 1.5 for r in rep.ratios)
        checks("refinement Cauchy", ok, "ratios " + ", ".join(f"{x:.3f}" for x in rep.ratios) + " (need >= 1.5)")
    checks("energy in time", all(rep.energy_monotone.values()), "E(t) <= E(s) + 1e-3 E0 at sampled times")
    if radii:
        hmin = hs[-1]
        traj = radial_flow_ode(radii[0], radii[1], T, cfg.grid.ndim, dt=min(1e-3, hmin / 10))
        dev = max(abs(rep.radii[hmin][i] - traj.at(t)) for i, t in enumerate(rep.times))
        tol = 3 * cfg.grid.dx
        print(f"smallest h vs radial ODE: max deviation {dev:.4f}")
        checks("refinement vs ODE", dev <= tol, f"{dev:.4f} (tolerance 3 cells = {tol:.4f})")
    if any(r.status == STATUS_SOLVER for r in rep.runs.values()):
        return EXIT_SOLVER
    return EXIT_OK


HANDLERS = {
    "capacity": cmd_capacity,
    "minimize": cmd_minimize,
    "flow": cmd_flow,
    "radial": cmd_radial,
    "compare": cmd_compare,
    "refine": cmd_refine,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bernflow", description="Discrete Bernoulli free-boundary flow simulator")
    p.add_argument("command", nargs="?", choices=COMMANDS, help="subcommand (defaults to run.command)")
    p.add_argument("--config", required=True, metavar="PATH", help="INI run configuration")
    p.add_argument("--check", action="store_true", help="print PASS/FAIL against acceptance tolerances")
    p.add_argument("--verbose", action="store_true", help="debug logging and per-iteration CSV logs")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides run.output)")
    p.add_argument("--serial", action="store_true", help="no worker processes")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config key")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            print(f"error: --set expects SECTION.KEY=VALUE, got {item!r}", file=sys.stderr)
            return EXIT_CONFIG
        overrides[key.strip()] = val
    if args.command:
        overrides["run.command"] = args.command
    try:
        cfg = load_config(args.config, overrides=overrides)
    except ConfigurationError as exc:
        print("error: invalid configuration", file=sys.stderr)
        for problem in exc.problems:
            print(f"  {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cfg = cfg.with_run_flags(
        output=args.out,
        check=True if args.check else None,
        verbose=True if args.verbose else None,
        serial=True if args.serial else None,
    )
    logging.basicConfig(
        level=logging.DEBUG if cfg.get("run", "verbose") else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    checks = Checks(cfg.get("run", "check"))
    try:
        status = HANDLERS[cfg.command](cfg, out, checks)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContainmentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except BernflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if status == EXIT_OK and checks.enabled and checks.failed:
        return EXIT_CHECK
    return status


if __name__ == "__main__":
    sys.exit(main())
