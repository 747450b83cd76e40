"""Discrete motion driven by the penalized functional, with an energy ledger.

One step maps ``Ω_n`` to ``{u_n > 0} ∪ {d^s_{Ω_n} < -h}`` where ``u_n``
minimizes the penalized functional for ``Ω_n``.  Each step records the
energy ``|Ω| + cap_S(Ω)`` and the certificate

    C_n = Σ (1_{Ω_n∖Ω̂} - 1_{A∖Ω̂}) d^s_{Ω_n} / h · Δx^N,   A = {u_n > 0},

which bounds the energy change from above and is itself non-positive.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from bernflow.errors import BernflowError, ConfigurationError, ContainmentError, SolverError
from bernflow.grid import (
    RegionMask,
    boundary_faces,
    dilate,
    equivalent_radius,
    erode,
    hausdorff_distance,
    signed_distance,
    strictly_contains,
    volume,
)
from bernflow.jh import RESOLUTION_GUARD, MinimizerParams, MinimizerResult, minimize_jh
from bernflow.potential import PotentialSolution, solve_potential

log = logging.getLogger(__name__)

STATUS_INITIAL = "initial"
STATUS_OK = "ok"
STATUS_VIOLATION = "monotonicity_violation"
STATUS_COMPLETED = "completed"
STATUS_CONTAINMENT = "terminated_containment"
STATUS_MARGIN = "terminated_margin"
STATUS_SOLVER = "solver_failure"

LEDGER_COLUMNS = ("n", "t", "volume", "capacity", "energy", "certificate", "fb_residual", "status")


@dataclass(frozen=True)
class FlowConfig:
    """Step size, horizon and tolerances of a flow run.

    ``energy_tolerance`` is the allowed per-step energy increase as a
    fraction of the initial energy; ``quadrature_constant`` scales the
    certificate allowance ``C · Δx · (face count) · Δx^{N-1}``.
    """

    h: float
    steps: int
    minimizer: MinimizerParams = field(default_factory=MinimizerParams)
    snapshot_every: int = 0
    energy_tolerance: float = 1e-3
    quadrature_constant: float = 4.0

    def __post_init__(self):
        if not self.h > 0:
            raise ConfigurationError(f"h must be positive, got {self.h}")
        if self.steps < 1:
            raise ConfigurationError(f"steps must be at least 1, got {self.steps}")
        if self.snapshot_every < 0:
            raise ConfigurationError("snapshot_every must be non-negative")

    def check_grid(self, grid) -> None:
        if self.h < RESOLUTION_GUARD * grid.dx * (1 - 1e-12):
            raise ConfigurationError(
                f"h below resolution guard: h={self.h} < {RESOLUTION_GUARD}·Δx = {RESOLUTION_GUARD * grid.dx}"
            )


@dataclass(frozen=True)
class LedgerRow:
    n: int
    t: float
    volume: float
    capacity: float
    energy: float
    certificate: float
    fb_residual: float
    status: str
    eps_quad: float = 0.0

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, c) for c in LEDGER_COLUMNS)


@dataclass(frozen=True, eq=False)
class FlowState:
    n: int
    h: float
    source: RegionMask
    omega: RegionMask
    potential: PotentialSolution | None
    row: LedgerRow
    minimizer: MinimizerResult | None = None
    status: str = STATUS_OK

    @property
    def time(self) -> float:
        return self.n * self.h

    @property
    def energy(self) -> float:
        return self.row.energy

    @property
    def terminated(self) -> bool:
        return self.status in (STATUS_CONTAINMENT, STATUS_MARGIN, STATUS_SOLVER)


def quadrature_tolerance(omega: RegionMask, constant: float = 4.0) -> float:
    """Perimeter-scaled allowance ``C · Δx · (face count) · Δx^{N-1}``."""
    grid = omega.grid
    return constant * grid.dx * len(boundary_faces(omega)) * grid.dx ** (grid.ndim - 1)


def initial_state(source: RegionMask, omega0: RegionMask, config: FlowConfig) -> FlowState:
    config.check_grid(omega0.grid)
    if not strictly_contains(omega0, source):
        raise ContainmentError("initial set must strictly contain the source")
    sol = solve_potential(source, omega0, config.minimizer.solver)
    vol = volume(omega0)
    row = LedgerRow(0, 0.0, vol, sol.capacity, vol + sol.capacity, 0.0, 0.0, STATUS_INITIAL)
    return FlowState(0, config.h, source, omega0, sol, row, status=STATUS_INITIAL)


def monotonicity_certificate(prev: FlowState, nxt: FlowState, h: float) -> float:
    """``Σ (1_{Ω∖Ω̂} - 1_{A∖Ω̂}) d^s_Ω / h · Δx^N`` for the step ``prev → nxt``.

    ``A`` is the positivity set of the minimizer stored on ``nxt``; without
    one, ``Ω_{n+1}`` itself is used.
    """
    omega = prev.omega
    d = signed_distance(omega).values
    hat = erode(omega, h).inside
    pos = nxt.minimizer.positivity.inside if nxt.minimizer is not None else nxt.omega.inside
    weight = (omega.inside & ~hat).astype(float) - (pos & ~hat).astype(float)
    return float(np.sum(weight * d)) / h * omega.grid.cell_volume


def step(state: FlowState, config: FlowConfig) -> FlowState:
    """Advance one step; containment losses come back as terminated states.

    Raises ``SolverError`` if the minimizer does not converge.
    """
    if state.terminated:
        raise ConfigurationError(f"cannot step a terminated flow (status {state.status})")
    h = config.h
    source = state.source
    try:
        res = minimize_jh(source, state.omega, h, config.minimizer, initial=state.potential)
    except ContainmentError as exc:
        return _terminal(state, STATUS_MARGIN, str(exc))
    if not res.converged:
        raise SolverError(
            f"minimizer did not converge at step {state.n + 1}",
            residual=res.fb_residual,
            diagnostics={"iterations": res.iterations, "history": res.history},
        )
    new = res.positivity | erode(state.omega, h)
    if not strictly_contains(new, source):
        return _terminal(state, STATUS_CONTAINMENT, "new set no longer strictly contains the source")
    try:
        sol = solve_potential(source, new, config.minimizer.solver)
    except ContainmentError as exc:
        return _terminal(state, STATUS_MARGIN, str(exc))
    vol = volume(new)
    n = state.n + 1
    row = LedgerRow(n, n * h, vol, sol.capacity, vol + sol.capacity, 0.0, res.fb_residual, STATUS_OK)
    nxt = FlowState(n, h, source, new, sol, row, res, STATUS_OK)
    cert = monotonicity_certificate(state, nxt, h)
    eps = quadrature_tolerance(state.omega, config.quadrature_constant)
    row = replace(row, certificate=cert, eps_quad=eps)
    return replace(nxt, row=row)


def _terminal(state: FlowState, status: str, message: str) -> FlowState:
    log.info("flow stopped at step %d: %s", state.n, message)
    row = replace(state.row, status=status)
    return replace(state, row=row, status=status, minimizer=None)


def step_violates(prev: FlowState, nxt: FlowState, e0: float, config: FlowConfig) -> bool:
    """Energy increase beyond the allowance or a broken certificate chain."""
    de = nxt.energy - prev.energy
    cert = nxt.row.certificate
    eps = nxt.row.eps_quad
    return de > config.energy_tolerance * e0 or de > cert + eps or cert > eps


@dataclass(frozen=True, eq=False)
class FlowRun:
    states: list[FlowState]
    status: str
    violations: list[int]
    error: str | None = None

    @property
    def rows(self) -> list[LedgerRow]:
        return [s.row for s in self.states]

    @property
    def final(self) -> FlowState:
        return self.states[-1]

    def energies(self) -> np.ndarray:
        return np.array([s.energy for s in self.states])

    def at_time(self, t: float) -> FlowState:
        """Last state with ``n h <= t``."""
        n = int(math.floor(t / self.states[0].h + 1e-9))
        return self.states[min(n, len(self.states) - 1)]


def run_flow(
    source: RegionMask, omega0: RegionMask, config: FlowConfig, on_state=None, keep_potentials: bool = False
) -> FlowRun:
    """Run ``config.steps`` steps or until the flow terminates.

    ``on_state`` is called with every new state (used for snapshots and
    streaming ledgers).  Solver failures end the run with the ledger so
    far; potentials are dropped from stored states unless requested.
    """
    state = initial_state(source, omega0, config)
    e0 = state.energy
    states = [state]
    violations: list[int] = []
    if on_state:
        on_state(state)
    status = STATUS_COMPLETED
    error = None
    for _ in range(config.steps):
        try:
            nxt = step(state, config)
        except (SolverError, BernflowError) as exc:
            status, error = STATUS_SOLVER, str(exc)
            log.warning("flow failed at step %d: %s", state.n + 1, exc)
            states[-1] = _terminal(states[-1], STATUS_SOLVER, str(exc))
            if on_state:
                on_state(states[-1])
            break
        if nxt.terminated:
            status = nxt.status
            states[-1] = nxt
            if on_state:
                on_state(nxt)
            break
        if step_violates(state, nxt, e0, config):
            violations.append(nxt.n)
            nxt = replace(nxt, row=replace(nxt.row, status=STATUS_VIOLATION), status=STATUS_VIOLATION)
        if not keep_potentials:
            states[-1] = replace(states[-1], potential=None, minimizer=_light(states[-1].minimizer))
        states.append(nxt)
        if on_state:
            on_state(nxt)
        state = nxt
        log.debug("step %d: E=%.8g cert=%.3g", nxt.n, nxt.energy, nxt.row.certificate)
    return FlowRun(states, status, violations, error)


def _light(res: MinimizerResult | None) -> MinimizerResult | None:
    if res is None:
        return None
    return replace(res, u=None, penalty=None)


# --------------------------------------------------------------------------- experiments


@dataclass(frozen=True, eq=False)
class NestingReport:
    steps: int
    excess: list[int]
    first_violation: int | None
    status_a: str
    status_b: str

    @property
    def nested(self) -> bool:
        return self.first_violation is None


def comparison_experiment(
    source_a: RegionMask, source_b: RegionMask, omega_a: RegionMask, omega_b: RegionMask, config: FlowConfig
) -> NestingReport:
    """Run both flows and check ``Ω_n^A ⊆ Ω_n^B`` up to a one-cell band at every step.

    The band is the one-cell neighbourhood including diagonal neighbours;
    a face-neighbour band is only ``Δx/√2`` wide along grid diagonals.
    """
    if not source_a.issubset(source_b) or not omega_a.issubset(omega_b):
        raise ConfigurationError("comparison needs source_a ⊆ source_b and omega_a ⊆ omega_b")
    run_a = run_flow(source_a, omega_a, config)
    run_b = run_flow(source_b, omega_b, config)
    return nesting(run_a, run_b)


def nesting(run_a: FlowRun, run_b: FlowRun) -> NestingReport:
    n = min(len(run_a.states), len(run_b.states))
    excess = []
    first = None
    for k in range(n):
        a = run_a.states[k].omega
        b = dilate(run_b.states[k].omega, 1, diagonal=True)
        out = int(np.count_nonzero(a.inside & ~b.inside))
        excess.append(out)
        if out and first is None:
            first = k
    return NestingReport(n - 1, excess, first, run_a.status, run_b.status)


@dataclass(frozen=True, eq=False)
class RefinementReport:
    hs: list[float]
    times: list[float]
    hausdorff: dict[float, list[float]]
    ratios: list[float]
    energies: dict[float, list[float]]
    radii: dict[float, list[float]]
    energy_monotone: dict[float, bool]
    e0: float
    runs: dict[float, FlowRun] = field(repr=False, default_factory=dict)


def refinement_study(
    source: RegionMask,
    omega0: RegionMask,
    hs: list[float],
    T: float,
    minimizer: MinimizerParams | None = None,
    energy_tolerance: float = 1e-3,
    runner=None,
) -> RefinementReport:
    """Flows for each ``h`` compared at ``T/4, T/2, T``.

    ``hausdorff[t]`` lists distances between consecutive ``h`` at time
    ``t``; ``ratios`` are successive quotients at ``T``.  ``runner`` maps a
    list of ``FlowConfig`` to runs (defaults to sequential execution).
    """
    hs = sorted(hs, reverse=True)
    if not hs:
        raise ConfigurationError("refinement study needs at least one h")
    times = [T / 4, T / 2, T]
    minimizer = minimizer or MinimizerParams()
    configs = [FlowConfig(h=h, steps=max(1, int(math.floor(T / h + 1e-9))), minimizer=minimizer) for h in hs]
    if runner is None:
        runs = [run_flow(source, omega0, c) for c in configs]
    else:
        runs = runner(configs)
    by_h = dict(zip(hs, runs))
    e0 = runs[0].states[0].energy
    haus: dict[float, list[float]] = {}
    for t in times:
        haus[t] = [
            hausdorff_distance(by_h[h1].at_time(t).omega, by_h[h2].at_time(t).omega) for h1, h2 in zip(hs, hs[1:])
        ]
    ratios = [a / b if b > 0 else math.inf for a, b in zip(haus[T], haus[T][1:])]
    energies = {h: [by_h[h].at_time(t).energy for t in times] for h in hs}
    radii = {h: [equivalent_radius(by_h[h].at_time(t).omega) for t in times] for h in hs}
    mono = {
        h: all(e2 <= e1 + energy_tolerance * e0 for e1, e2 in zip(energies[h], energies[h][1:])) for h in hs
    }
    return RefinementReport(hs, times, haus, ratios, energies, radii, mono, e0, by_h)
