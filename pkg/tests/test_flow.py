import math

import numpy as np
import pytest

from bernflow.errors import ConfigurationError
from bernflow.flow import (
    LEDGER_COLUMNS,
    STATUS_COMPLETED,
    STATUS_MARGIN,
    STATUS_SOLVER,
    FlowConfig,
    comparison_experiment,
    initial_state,
    monotonicity_certificate,
    refinement_study,
    run_flow,
    step,
)
from bernflow.grid import Ball, Union, equivalent_radius, erode, make_grid, rasterize_shape
from bernflow.jh import MinimizerParams
from bernflow.radial import equilibrium_radius, radial_flow_ode, radial_velocity


@pytest.fixture(scope="module")
def grid():
    return make_grid((-3.2, -3.2), (3.2, 3.2), (256, 256))


def ball(grid, r, c=(0.0, 0.0)):
    return rasterize_shape(Ball(c, r), grid)


@pytest.fixture(scope="module")
def shrink_run(grid):
    return run_flow(ball(grid, 1.0), ball(grid, 2.5), FlowConfig(h=0.05, steps=12), keep_potentials=True)


def test_config_validation(grid):
    with pytest.raises(ConfigurationError):
        FlowConfig(h=0.0, steps=3)
    with pytest.raises(ConfigurationError):
        FlowConfig(h=0.1, steps=0)
    with pytest.raises(ConfigurationError, match="h below resolution guard"):
        initial_state(ball(grid, 1.0), ball(grid, 2.0), FlowConfig(h=grid.dx, steps=1))


def test_ledger_rows(shrink_run):
    assert shrink_run.status == STATUS_COMPLETED
    rows = shrink_run.rows
    assert [r.n for r in rows] == list(range(13))
    for s in shrink_run.states:
        assert s.time == s.n * s.h
        assert s.row.t == s.time
        assert s.row.energy == s.row.volume + s.row.capacity
    assert len(rows[0].as_tuple()) == len(LEDGER_COLUMNS)


def test_shrinking_energy_and_certificate(shrink_run):
    e = shrink_run.energies()
    e0 = e[0]
    assert np.all(np.diff(e) <= 1e-3 * e0)
    assert not shrink_run.violations
    for prev, nxt in zip(shrink_run.states, shrink_run.states[1:]):
        de = nxt.energy - prev.energy
        assert de <= nxt.row.certificate + nxt.row.eps_quad
        assert nxt.row.certificate < 0


def test_erosion_lower_bound(shrink_run):
    for prev, nxt in zip(shrink_run.states, shrink_run.states[1:]):
        assert erode(prev.omega, prev.h).issubset(nxt.omega)


def test_radial_tracking(grid, shrink_run):
    ode = radial_flow_ode(1.0, 2.5, 12 * 0.05, 2)
    vmax = max(abs(radial_velocity(1.0, b, 2)) for b in ode.b)
    tol = max(3 * grid.dx, 2 * 0.05 * vmax)
    for s in shrink_run.states:
        assert abs(equivalent_radius(s.omega) - ode.at(s.time)) <= tol


def test_recomputed_certificate(shrink_run):
    prev, nxt = shrink_run.states[1], shrink_run.states[2]
    assert monotonicity_certificate(prev, nxt, 0.05) == pytest.approx(nxt.row.certificate)


def test_near_equilibrium_moves_less_than_a_cell(grid):
    run = run_flow(ball(grid, 1.0), ball(grid, 1.763), FlowConfig(h=0.05, steps=6))
    radii = [equivalent_radius(s.omega) for s in run.states]
    assert np.all(np.abs(np.diff(radii)) < grid.dx)
    e = run.energies()
    assert np.max(np.abs(e - e[0])) <= 2 * 1e-3 * e[0]
    for s in run.states[1:]:
        assert abs(s.row.certificate) <= s.row.eps_quad


def test_growing_flow(grid):
    run = run_flow(ball(grid, 1.0), ball(grid, 1.2), FlowConfig(h=0.05, steps=6))
    radii = [equivalent_radius(s.omega) for s in run.states]
    assert radii[-1] > radii[0]
    assert radii[-1] < equilibrium_radius(1.0, 2)
    for s in run.states[1:]:
        assert s.row.certificate <= s.row.eps_quad
    assert not run.violations


def test_free_ball_erodes(grid):
    h = 0.1
    src = ball(grid, 0.6, (-1.2, 0.0))
    omega = rasterize_shape(Union((Ball((-1.2, 0.0), 1.4), Ball((1.8, 0.0), 0.5))), grid)
    run = run_flow(src, omega, FlowConfig(h=h, steps=8))
    far = grid.centers[..., 0] > 1.0
    sizes = [np.count_nonzero(s.omega.inside & far) for s in run.states]
    vanish = next(n for n, c in enumerate(sizes) if c == 0)
    assert abs(vanish - math.ceil(0.5 / h)) <= 1
    from bernflow.grid import RegionMask

    r = [equivalent_radius(RegionMask(grid, s.omega.inside & far)) for s in run.states[: vanish - 1]]
    assert np.all(np.abs(np.diff(r) + h) <= 1.5 * grid.dx)
    assert np.all(np.diff(run.energies()) <= 1e-3 * run.energies()[0])


def test_margin_termination():
    g = make_grid((-2.0, -2.0), (2.0, 2.0), (80, 80))
    run = run_flow(ball(g, 1.2), ball(g, 1.4), FlowConfig(h=0.1, steps=40))
    assert run.status == STATUS_MARGIN
    assert run.final.terminated
    with pytest.raises(ConfigurationError):
        step(run.final, FlowConfig(h=0.1, steps=1))


def test_solver_failure_keeps_ledger(grid):
    cfg = FlowConfig(h=0.05, steps=3, minimizer=MinimizerParams(max_outer=1))
    run = run_flow(ball(grid, 1.0), ball(grid, 2.5), cfg)
    assert run.status == STATUS_SOLVER
    assert run.error
    assert len(run.states) == 1 and run.final.row.status == STATUS_SOLVER


def test_comparison_identical_and_eroded(grid):
    cfg = FlowConfig(h=0.1, steps=5)
    s = ball(grid, 1.0)
    o = ball(grid, 2.2)
    same = comparison_experiment(s, s, o, o, cfg)
    assert same.nested and set(same.excess) == {0}
    inner = comparison_experiment(s, s, erode(o, 0.2), o, cfg)
    assert inner.nested


def test_comparison_requires_inclusion(grid):
    with pytest.raises(ConfigurationError):
        comparison_experiment(ball(grid, 1.0), ball(grid, 1.0), ball(grid, 2.0), ball(grid, 1.8), FlowConfig(h=0.1, steps=1))


def test_refinement_single_h(grid):
    rep = refinement_study(ball(grid, 1.0), ball(grid, 2.5), [0.25], 0.5)
    assert rep.ratios == [] and all(v == [] for v in rep.hausdorff.values())
    assert rep.energy_monotone[0.25]
    ode = radial_flow_ode(1.0, 2.5, 0.5, 2)
    assert abs(rep.radii[0.25][-1] - ode.at(0.5)) <= 2 * 0.25


@pytest.mark.xfail(
    strict=True,
    reason="cell-granular minimizers cannot move once |V| h < Δx/2; the shrinking disk stalls "
    "near radius 1.86 while the ODE keeps approaching 1.76",
)
def test_radial_tracking_full_horizon(grid):
    h, steps = 0.05, 40
    run = run_flow(ball(grid, 1.0), ball(grid, 2.5), FlowConfig(h=h, steps=steps))
    ode = radial_flow_ode(1.0, 2.5, steps * h, 2)
    vmax = max(abs(radial_velocity(1.0, b, 2)) for b in ode.b)
    tol = max(3 * grid.dx, 2 * h * vmax)
    dev = max(abs(equivalent_radius(s.omega) - ode.at(s.time)) for s in run.states)
    assert dev <= tol


def test_stall_matches_pinning_threshold(grid):
    # a disk at rest satisfies |V(b)| h <= Δx / 2
    h = 0.05
    run = run_flow(ball(grid, 1.0), ball(grid, 1.86), FlowConfig(h=h, steps=4))
    radii = [equivalent_radius(s.omega) for s in run.states]
    assert max(radii) - min(radii) < grid.dx
    assert abs(radial_velocity(1.0, radii[-1], 2)) * h <= 0.5 * grid.dx + 1e-3
