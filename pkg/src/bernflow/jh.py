"""Penalized capacity functional and its approximate minimizer.

For a current set ``Ω`` and step ``h`` the functional is

    J(A) = ∫_{R^N∖S} |∇u_A|² + ∫_{A∖S} g,      g = (1 + d^s_Ω / h)_+,

where ``u_A`` is the capacity potential of ``A``.  Minimizers satisfy
``|∇u|² = g`` on their free boundary, with ``g = 0`` where ``A`` reaches
into the retracted set ``{d^s_Ω < -h}``.

The minimizer is a relaxed free-boundary iteration on cells: solve for
``u`` on the current guess, extend the smoothed boundary value of
``|∇u|²`` into a band around the boundary, and move the band toward the
cells where it exceeds ``g``.  Moves are kept only when they lower ``J``
and the iteration starts from ``A = Ω``, so the result is never worse
than leaving the set in place.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from bernflow.errors import ConfigurationError, ContractError
from bernflow.grid import (
    RegionMask,
    ScalarField,
    boundary_faces,
    dilate,
    erode,
    signed_distance,
    touching,
)
from bernflow.potential import (
    PotentialSolution,
    SolverParams,
    _smoothing_matrix,
    boundary_gradient,
    dirichlet_energy,
    solve_potential,
)

log = logging.getLogger(__name__)

POSITIVITY_EPS = 1e-8
RESOLUTION_GUARD = 2.0


@dataclass(frozen=True)
class MinimizerParams:
    max_outer: int = 200
    band_cells: float = 3.0
    smoothing_cells: float = 8.0
    min_relaxation: float = 0.125
    fb_tolerance: float | None = None
    positivity_eps: float = POSITIVITY_EPS
    solver: SolverParams = field(default_factory=SolverParams)

    def __post_init__(self):
        if self.max_outer < 1:
            raise ConfigurationError("max_outer must be at least 1")
        if not self.band_cells >= 1:
            raise ConfigurationError("band_cells must be at least 1")
        if not 0 < self.min_relaxation <= 1:
            raise ConfigurationError("min_relaxation must lie in (0, 1]")
        if self.smoothing_cells < 0:
            raise ConfigurationError("smoothing_cells must be non-negative")


@dataclass(frozen=True, eq=False)
class PenaltyField:
    g: ScalarField
    distance: ScalarField
    h: float

    def at_faces(self, faces) -> np.ndarray:
        """Penalty at face midpoints, from the mean signed distance of the two cells."""
        d = self.distance.values
        grid = self.g.grid
        outer = tuple(np.clip(o, 0, n - 1) for o, n in zip(faces.outer, grid.cells))
        dm = 0.5 * (d[faces.inner] + d[outer])
        return np.maximum(1.0 + dm / self.h, 0.0)


def penalty_field(omega: RegionMask, h: float) -> PenaltyField:
    if not h > 0:
        raise ConfigurationError(f"time step must be positive, got {h}")
    d = signed_distance(omega)
    g = np.maximum(1.0 + d.values / h, 0.0)
    return PenaltyField(ScalarField(omega.grid, g), d, h)


def _check_h(omega: RegionMask, h: float) -> None:
    dx = omega.grid.dx
    if h < RESOLUTION_GUARD * dx * (1 - 1e-12):
        raise ConfigurationError(f"h below resolution guard: h={h} < {RESOLUTION_GUARD}·Δx = {RESOLUTION_GUARD * dx}")


def _penalty_mass(penalty: PenaltyField, positivity: RegionMask, source: RegionMask) -> float:
    cells = positivity.inside & ~source.inside
    return float(np.sum(penalty.g.values[cells])) * positivity.grid.cell_volume


def evaluate_jh(
    source: RegionMask,
    omega: RegionMask,
    u: ScalarField,
    positivity: RegionMask,
    h: float,
    penalty: PenaltyField | None = None,
) -> float:
    """Dirichlet energy of ``u`` outside the source plus penalty mass over ``positivity``.

    ``u`` must equal 1 on the source and vanish off ``positivity``.
    """
    vals = u.values
    if not np.allclose(vals[source.inside], 1.0, rtol=0, atol=1e-12):
        raise ContractError("u must equal 1 on every source cell")
    if np.any(np.abs(vals[~positivity.inside]) > 0):
        raise ContractError("u must vanish outside the positivity set")
    if not source.issubset(positivity):
        raise ContractError("positivity set must contain the source")
    penalty = penalty or penalty_field(omega, h)
    return dirichlet_energy(vals, source, positivity) + _penalty_mass(penalty, positivity, source)


@dataclass(frozen=True, eq=False)
class MinimizerResult:
    """Selected iterate of the free-boundary iteration.

    ``history`` has one row per accepted move (jh value, changed cells,
    relaxation used); row 0 is the stay-put candidate ``A = Ω``.
    ``iterations`` counts potential solves.
    """

    u: PotentialSolution
    positivity: RegionMask
    jh: float
    fb_residual: float
    iterations: int
    converged: bool
    accepted_moves: int
    penalty: PenaltyField
    history: list[dict] = field(default_factory=list)


def _positivity(sol: PotentialSolution, eps: float) -> RegionMask:
    u = sol.u.values
    inside = (u > eps * sol.grid.dx**2) | sol.source.inside
    return touching(RegionMask(sol.grid, inside), sol.source)


def _extended_gradient_sq(
    sol: PotentialSolution, support: RegionMask, band: float, sigma: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Band around ``∂support``, signed distance to it, and ``|∇u|²`` of the nearest face."""
    grid = support.grid
    trace = boundary_gradient(sol, support, smoothing=sigma)
    tree = cKDTree(trace.points)
    dist, idx = tree.query(grid.centers.reshape(-1, grid.ndim), distance_upper_bound=band)
    hit = np.isfinite(dist)
    g2 = np.zeros(dist.shape)
    g2[hit] = np.asarray(trace.values)[idx[hit]] ** 2
    hit = hit.reshape(grid.shape)
    d = np.where(support.inside, -1.0, 1.0) * np.where(hit, dist.reshape(grid.shape), band)
    return hit, d, g2.reshape(grid.shape)


@dataclass
class _Iterate:
    jh: float
    sol: PotentialSolution
    support: RegionMask


def _evaluate(source, current, penalty, params) -> _Iterate:
    sol = solve_potential(source, current, params.solver)
    support = _positivity(sol, params.positivity_eps)
    return _Iterate(sol.capacity + _penalty_mass(penalty, support, source), sol, support)


def minimize_jh(
    source: RegionMask,
    omega: RegionMask,
    h: float,
    params: MinimizerParams | None = None,
    initial: PotentialSolution | None = None,
) -> MinimizerResult:
    """Approximate minimizer of ``J`` over sets containing the source.

    Each outer iteration moves the boundary toward the set where the
    extended ``|∇u|²`` exceeds the penalty, by a fraction ``θ`` of the
    predicted displacement ``h (|∇u|² - g)``.  A move is accepted only if
    it lowers ``J``; otherwise ``θ`` is halved down to ``min_relaxation``.
    ``converged`` means a fixed point or a set that no admissible move
    improves; with ``fb_tolerance`` set, a larger free-boundary residual
    also clears it.  ``initial`` may carry an already computed potential
    of ``omega`` to skip the first solve.
    """
    params = params or MinimizerParams()
    _check_h(omega, h)
    grid = omega.grid
    dx = grid.dx
    penalty = penalty_field(omega, h)
    g = penalty.g.values
    core = erode(omega, h) | dilate(source, 1)
    band = params.band_cells * dx
    sigma = params.smoothing_cells * dx

    if initial is not None and initial.omega.equals(omega) and initial.source.equals(source):
        support = _positivity(initial, params.positivity_eps)
        cur = _Iterate(initial.capacity + _penalty_mass(penalty, support, source), initial, support)
    else:
        cur = _evaluate(source, omega, penalty, params)
    history: list[dict] = [{"iteration": 0, "jh": cur.jh, "changed_cells": 0, "relaxation": 0.0}]
    solves = 1
    theta = 1.0
    converged = False
    while solves < params.max_outer:
        near, d, g2 = _extended_gradient_sq(cur.sol, cur.support, band, sigma)
        target = h * (g2 - g)
        accepted = None
        while theta >= params.min_relaxation and solves < params.max_outer:
            psi = (1.0 - theta) * d - theta * target
            cand = RegionMask(grid, (cur.support.inside & ~near) | (near & (psi < 0)) | core.inside)
            cand = touching(cand, source)
            if cand.equals(cur.support):
                break
            trial = _evaluate(source, cand, penalty, params)
            solves += 1
            if trial.jh < cur.jh:
                accepted = trial
                break
            theta *= 0.5
        if accepted is None:
            converged = solves < params.max_outer or theta < params.min_relaxation
            break
        moved = int(np.count_nonzero(accepted.support.inside ^ cur.support.inside))
        history.append({"iteration": len(history), "jh": accepted.jh, "changed_cells": moved, "relaxation": theta})
        log.debug("outer %d: J=%.10g, changed cells %d, relaxation %g", len(history) - 1, accepted.jh, moved, theta)
        cur = accepted
        theta = min(1.0, 2.0 * theta)

    res = _residual(cur.sol, cur.support, penalty, sigma)
    fb = res.max_abs
    if params.fb_tolerance is not None and fb > params.fb_tolerance:
        converged = False
    return MinimizerResult(
        u=cur.sol,
        positivity=cur.support,
        jh=cur.jh,
        fb_residual=fb,
        iterations=solves,
        converged=converged,
        accepted_moves=len(history) - 1,
        penalty=penalty,
        history=history,
    )


@dataclass(frozen=True, eq=False)
class FaceResidual:
    """Signed residual ``|∇u|² - g`` at the boundary faces of the positivity set."""

    points: np.ndarray
    values: np.ndarray

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if len(self.values) else 0.0


def _residual(sol: PotentialSolution, support: RegionMask, penalty: PenaltyField, sigma: float) -> FaceResidual:
    faces = boundary_faces(support)
    if len(faces) == 0:
        return FaceResidual(faces.points, np.zeros(0))
    grad = np.asarray(boundary_gradient(sol, support, smoothing=sigma).values)
    gf = penalty.at_faces(faces)
    if sigma > 0:
        w = _smoothing_matrix(faces.points, sigma)
        gf = (w @ gf) / np.asarray(w.sum(axis=1)).ravel()
    return FaceResidual(faces.points, grad**2 - gf)


def free_boundary_residual(
    result: MinimizerResult,
    omega: RegionMask,
    h: float,
    smoothing: float | None = None,
    on: RegionMask | None = None,
) -> FaceResidual:
    """Per-face ``|∇u|² - (1 + d^s_Ω/h)_+`` on the boundary of the positivity set.

    Both terms are averaged with the same boundary kernel (default
    ``8 Δx``) so the cell-scale staircase does not dominate.  ``on``
    evaluates on another boundary instead, such as the positivity set
    joined with the retracted set.
    """
    if not result.converged:
        raise ContractError("free-boundary residual requested for a non-converged minimizer")
    dx = omega.grid.dx
    sigma = MinimizerParams().smoothing_cells * dx if smoothing is None else smoothing
    penalty = result.penalty if result.penalty.h == h else penalty_field(omega, h)
    return _residual(result.u, result.positivity if on is None else on, penalty, sigma)
