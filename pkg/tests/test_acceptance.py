"""The eleven acceptance criteria, each at its stated tolerance.

Every test records exactly one PASS/FAIL line; the lines are repeated in
the terminal summary under "acceptance criteria".
"""

import math
import os
import time

import numpy as np
import pytest

from bernflow.config import load_config
from bernflow.flow import FlowConfig, comparison_experiment, initial_state, refinement_study, run_flow, step
from bernflow.grid import (
    Annulus,
    equivalent_radius,
    erode,
    make_grid,
    rasterize_shape,
    signed_distance,
)
from bernflow.jh import MinimizerParams, free_boundary_residual, minimize_jh
from bernflow.potential import solve_potential
from bernflow.radial import (
    equilibrium_radius,
    non_blowup_constant,
    radial_capacity_fd,
    radial_energy,
    radial_flow_ode,
    radial_velocity,
    sphere_area,
    stationary_points,
)

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")
FLOW_CONFIGS = ("radial_shrink", "radial_grow", "equilibrium", "two_component", "dumbbell")


def config(name):
    return load_config(os.path.join(CONFIGS, f"{name}.ini"), env={})


@pytest.fixture(scope="module")
def flows():
    out = {}
    start = time.perf_counter()
    for name in FLOW_CONFIGS:
        cfg = config(name)
        out[name] = (cfg, run_flow(cfg.source, cfg.omega, cfg.flow))
    return out, time.perf_counter() - start


def test_criterion_01_radial_capacity_2d(verdict):
    cfg = config("capacity_n2")
    start = time.perf_counter()
    cap = solve_potential(cfg.source, cfg.omega, cfg.solver).capacity
    elapsed = time.perf_counter() - start
    rel = cap / (2 * math.pi) - 1
    ok = abs(rel) <= 0.02 and elapsed <= 30
    assert verdict(1, "radial capacity N=2", ok, f"{cap:.6f} vs 2π, {rel:+.3%} (tol 2%), {elapsed:.1f}s (limit 30s)")


def test_criterion_02_radial_capacity_3d(verdict):
    start = time.perf_counter()
    cap = radial_capacity_fd(1.0, 2.0, 3)
    elapsed = time.perf_counter() - start
    rel = cap / (8 * math.pi) - 1
    ok = abs(rel) <= 1e-3 and elapsed <= 1
    assert verdict(2, "radial capacity N=3", ok, f"{cap:.8f} vs 8π, {rel:+.2e} (tol 1e-3), {elapsed:.3f}s (limit 1s)")


def _bisect(f, lo, hi):
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if (f(mid) > 0) == (f(lo) > 0):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_criterion_03_equilibrium_radii(verdict):
    e3 = abs(equilibrium_radius(1.0, 3) - (1 + math.sqrt(5)) / 2)
    e2 = abs(equilibrium_radius(1.0, 2) - _bisect(lambda b: b * math.log(b) - 1, 1.0, 3.0))
    ok = e3 <= 1e-8 and e2 <= 1e-8
    assert verdict(3, "equilibrium radii", ok, f"N=3 error {e3:.1e}, N=2 error {e2:.1e} (tol 1e-8)")


def test_criterion_04_energy_monotonicity(verdict, flows):
    runs, elapsed = flows
    bad = []
    for name, (cfg, run) in runs.items():
        e0 = run.states[0].energy
        for prev, nxt in zip(run.states, run.states[1:]):
            de = nxt.energy - prev.energy
            cert, eps = nxt.row.certificate, nxt.row.eps_quad
            if de > 1e-3 * e0 or de > cert + eps or cert > eps:
                bad.append(f"{name}:{nxt.n}")
        if run.status != "completed":
            bad.append(f"{name}:{run.status}")
    steps = sum(len(r.states) - 1 for _, r in runs.values())
    ok = not bad and elapsed <= 300
    detail = f"{steps} steps over 5 configs, violations {bad or 'none'}, {elapsed:.0f}s (limit 300s)"
    assert verdict(4, "energy monotonicity", ok, detail)


def test_criterion_05_comparison(verdict):
    reports = {}
    for name in ("compare_concentric", "compare_sources"):
        cfg = config(name)
        reports[name] = comparison_experiment(cfg.source, cfg.source_b, cfg.omega, cfg.omega_b, cfg.flow)
    cfg = config("compare_concentric")
    outer = cfg.omega_b
    inner = erode(outer, 2 * cfg.flow.h)
    reports["eroded_by_2h"] = comparison_experiment(cfg.source, cfg.source, inner, outer, cfg.flow)
    bad = {k: r.first_violation for k, r in reports.items() if not r.nested or r.steps < 20}
    ok = not bad
    detail = ", ".join(f"{k} {r.steps} steps max excess {max(r.excess)}" for k, r in reports.items())
    assert verdict(5, "comparison principle", ok, detail)


def test_criterion_06_radial_tracking(verdict, flows):
    runs, _ = flows
    cfg, run = runs["radial_shrink"]
    a, b0 = cfg.get("shapes", "source").radius, cfg.get("shapes", "omega").radius
    h, dx = cfg.flow.h, cfg.grid.dx
    ode = radial_flow_ode(a, b0, 1.0, 2, dt=min(1e-3, h / 10))
    dev = max(abs(equivalent_radius(s.omega) - ode.at(s.time)) for s in run.states if s.time <= 1.0 + 1e-12)
    tol = max(3 * dx, 2 * h)
    assert verdict(6, "radial flow tracking", dev <= tol, f"max deviation {dev:.4f} on [0,1] (tol {tol:.4f})")


def test_criterion_07_refinement_cauchy(verdict):
    cfg = config("refine_radial")
    rep = refinement_study(cfg.source, cfg.omega, list(cfg.get("refine", "hs")), cfg.get("refine", "T"), cfg.minimizer)
    haus = rep.hausdorff[rep.times[-1]]
    ok = len(rep.ratios) == len(rep.hs) - 2 and all(r >= 1.5 for r in rep.ratios)
    detail = (
        f"{cfg.grid.cells[0]}², H(0.2,0.1)={haus[0]:.4f}, H(0.1,0.05)={haus[1]:.4f}, "
        f"ratios {', '.join(f'{r:.3f}' for r in rep.ratios)} (need >= 1.5)"
    )
    assert verdict(7, "h-refinement Cauchy", ok, detail)


def test_criterion_08_free_boundary_residual(verdict):
    cfg = config("minimize_large_h")
    h = cfg.get("flow", "h")
    kernel = cfg.minimizer.smoothing_cells * cfg.grid.dx
    res = minimize_jh(cfg.source, cfg.omega, h, cfg.minimizer)
    coarse = free_boundary_residual(res, cfg.omega, h, smoothing=kernel).max_abs
    g = make_grid(cfg.grid.lower, cfg.grid.upper, tuple(2 * c for c in cfg.grid.cells))
    src = rasterize_shape(cfg.get("shapes", "source"), g)
    om = rasterize_shape(cfg.get("shapes", "omega"), g)
    fine_params = MinimizerParams(smoothing_cells=kernel / g.dx)
    fine_res = minimize_jh(src, om, h, fine_params)
    fine = free_boundary_residual(fine_res, om, h, smoothing=kernel).max_abs
    ok = res.converged and fine_res.converged and coarse <= 0.1 and fine < coarse
    detail = f"h={h}: {coarse:.4f} at {cfg.grid.cells[0]}² (tol 0.1), {fine:.4f} at {g.cells[0]}² (must decrease)"
    assert verdict(8, "free-boundary optimality", ok, detail)


NON_BLOWUP_TRIPLES = ((1.0, 2.2, 0.05), (0.95, 2.0, 0.05), (1.1, 2.4, 0.075))


def test_criterion_09_non_blowup(verdict):
    r0 = 0.9
    m = non_blowup_constant(2, r0)
    g = make_grid((-3.6, -3.6), (3.6, 3.6), (288, 288))
    parts = []
    ok = True
    for r, big_r, h in NON_BLOWUP_TRIPLES:
        assert r0 < r < big_r / 2
        sp = stationary_points(r, big_r, h, 2)
        source = rasterize_shape(Annulus((0.0, 0.0), big_r, big_r + 0.2), g)
        omega = rasterize_shape(Annulus((0.0, 0.0), r, big_r + 0.3), g)
        fc = FlowConfig(h=h, steps=1)
        nxt = step(initial_state(source, omega, fc), fc)
        d = signed_distance(nxt.omega).at((0.0, 0.0))
        bound = r - m * h
        ok &= sp.has_roots and sp.rho2 >= bound and d >= bound - 2 * g.dx
        parts.append(f"(r={r}, R={big_r}, h={h}): d={d:.4f}, ρ2={sp.rho2:.4f}, r-Mh={bound:.4f}")
    assert verdict(9, "non-blow-up", bool(ok), f"M={m:.3f}; " + "; ".join(parts))


def test_criterion_10_hadamard_rate(verdict):
    cfg = config("radial_n3")
    n, a, b0, T = (cfg.get("radial", k) for k in ("ndim", "a", "b0", "T"))
    dt = 1e-3
    traj = radial_flow_ode(a, b0, T, n, dt=dt)
    rate = np.array([sphere_area(n) * b ** (n - 1) * radial_velocity(a, b, n) ** 2 for b in traj.b])
    # sample where the rate is above 1e-6 of its initial value; past that the
    # energy differences over one step sit at rounding level
    last = min(int(np.nonzero(rate >= 1e-6 * rate[0])[0][-1]), len(traj.t) - 2)
    idx = np.linspace(1, last, 20).astype(int)
    worst = 0.0
    for i in idx:
        fd = (radial_energy(a, traj.b[i + 1], n) - radial_energy(a, traj.b[i - 1], n)) / (2 * dt)
        worst = max(worst, abs(fd + rate[i]) / rate[i])
    detail = f"max relative mismatch {worst:.2e} at 20 times in [0, {traj.t[last]:.2f}] (tol 1e-4)"
    assert verdict(10, "Hadamard rate", worst <= 1e-4, detail)


def test_criterion_11_two_component_extinction(verdict, flows):
    runs, _ = flows
    cfg, run = runs["two_component"]
    free = cfg.get("shapes", "omega").parts[1]
    h = cfg.flow.h
    region = np.linalg.norm(cfg.grid.centers - np.asarray(free.center), axis=-1) < free.radius + 0.3
    sizes = [np.count_nonzero(s.omega.inside & region) for s in run.states]
    vanish = next((n for n, c in enumerate(sizes) if c == 0), None)
    expected = math.ceil(free.radius / h)
    e = run.energies()
    mono = bool(np.all(np.diff(e) <= 1e-3 * e[0]))
    ok = vanish is not None and abs(vanish - expected) <= 1 and mono
    detail = f"vanished at step {vanish}, expected {expected} ± 1, energy monotone {mono}"
    assert verdict(11, "two-component extinction", ok, detail)
