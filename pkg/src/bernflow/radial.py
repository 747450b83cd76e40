"""Closed-form radial solutions used as ground truth.

Everything here is one-dimensional: concentric balls ``B_a ⊂ B_b`` in
``R^N``.  For ``N >= 3`` the capacity potential of the annulus is
``(r^{2-N} - b^{2-N}) / (a^{2-N} - b^{2-N})``; for ``N = 2`` it is the
logarithmic analogue ``ln(b/r) / ln(b/a)``.

The penalized functional for the complement problem (source ``B_R^c``,
set ``B_r^c``, potential vanishing on ``B_ρ``) uses the same two
potentials; the N = 2 branch follows the same steps with ``ln`` in place
of the power law (see ``docs/radial_n2.md``).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gamma, log, pi, sqrt

import numpy as np
from scipy.optimize import brentq

from bernflow.errors import DomainError


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere in ``R^n`` (2π for n=2, 4π for n=3)."""
    return 2.0 * pi ** (n / 2) / gamma(n / 2)


def ball_volume(n: int) -> float:
    return sphere_area(n) / n


def _check_dim(n: int) -> None:
    if n < 2 or int(n) != n:
        raise DomainError(f"dimension must be an integer >= 2, got {n}")


def _check_radii(a: float, b: float) -> None:
    if not (0 < a < b) or not np.isfinite(b):
        raise DomainError(f"need 0 < a < b < inf, got a={a}, b={b}")


@dataclass(frozen=True)
class RadialParams:
    """Dimension, source radius ``a``, set radius ``b`` and time step ``h``."""

    ndim: int = 2
    a: float = 1.0
    b: float = 2.0
    h: float = 0.05

    def __post_init__(self):
        _check_dim(self.ndim)
        _check_radii(self.a, self.b)
        if not self.h > 0:
            raise DomainError("time step must be positive")

    @property
    def alpha(self) -> float:
        return sphere_area(self.ndim)


def radial_capacity(a: float, b: float, n: int) -> float:
    """Capacity of ``B_b`` relative to ``B_a``."""
    _check_dim(n)
    _check_radii(a, b)
    if n == 2:
        return 2 * pi / log(b / a)
    return sphere_area(n) * (n - 2) / (a ** (2 - n) - b ** (2 - n))


def radial_boundary_gradient(a: float, b: float, n: int) -> float:
    """``|∇u|`` on the outer sphere ``|x| = b``."""
    _check_dim(n)
    _check_radii(a, b)
    if n == 2:
        return 1.0 / (b * log(b / a))
    return (n - 2) * b ** (1 - n) / (a ** (2 - n) - b ** (2 - n))


def radial_energy(a: float, b: float, n: int) -> float:
    """Volume plus capacity of the ball ``B_b``."""
    return ball_volume(n) * b**n + radial_capacity(a, b, n)


def radial_capacity_fd(a: float, b: float, n: int, cells: int = 20000) -> float:
    """Capacity from a conservative finite-difference solve of ``(r^{N-1} u')' = 0``.

    Independent of the closed form: the 1D problem is a chain of
    conductances ``r_{i+1/2}^{N-1} / Δr`` in series, solved as a tridiagonal
    system, and the capacity is the discrete Dirichlet energy.
    """
    _check_dim(n)
    _check_radii(a, b)
    from scipy.linalg import solve_banded

    r = np.linspace(a, b, cells + 1)
    dr = r[1] - r[0]
    mid = 0.5 * (r[1:] + r[:-1])
    c = mid ** (n - 1) / dr
    # interior unknowns u_1 .. u_{cells-1}, u_0 = 1, u_cells = 0
    diag = c[:-1] + c[1:]
    upper = -c[1:-1]
    ab = np.zeros((3, cells - 1))
    ab[0, 1:] = upper
    ab[1] = diag
    ab[2, :-1] = upper
    rhs = np.zeros(cells - 1)
    rhs[0] = c[0]
    u = np.concatenate([[1.0], solve_banded((1, 1), ab, rhs), [0.0]])
    return sphere_area(n) * float(np.sum(c * np.diff(u) ** 2))


# --------------------------------------------------------------------------- complement problem


def _shell_gradient(rho: float, big_r: float, n: int) -> float:
    """``|∇v_ρ|`` at ``|x| = ρ`` for the potential equal to 0 on ``B_ρ`` and 1 outside ``B_R``."""
    if n == 2:
        return 1.0 / (rho * log(big_r / rho))
    return (n - 2) / (rho * (1.0 - (rho / big_r) ** (n - 2)))


def _shell_capacity(rho: float, big_r: float, n: int) -> float:
    if n == 2:
        return 2 * pi / log(big_r / rho)
    return sphere_area(n) * (n - 2) / (rho ** (2 - n) - big_r ** (2 - n))


def _check_complement(r: float, big_r: float, h: float, n: int) -> None:
    _check_dim(n)
    if not (r > 0 and h > 0 and r + h < big_r):
        raise DomainError(f"need r > 0, h > 0 and r + h < R, got r={r}, h={h}, R={big_r}")


def jh_radial(rho: float, r: float, big_r: float, h: float, n: int) -> float:
    """Penalized functional of ``v_ρ`` for source ``B_R^c`` and set ``B_r^c``.

    ``rho = 0`` gives the constant-potential value ``J_h(0+)``.
    """
    _check_complement(r, big_r, h, n)
    if not 0 <= rho < big_r:
        raise DomainError(f"need 0 <= rho < R, got rho={rho}")
    alpha = sphere_area(n)
    top = r + h
    if rho == 0:
        return alpha * top ** (n + 1) / (h * n * (n + 1))
    cap = _shell_capacity(rho, big_r, n)
    if rho > top:
        return cap
    penalty = top ** (n + 1) / (n * (n + 1)) + rho ** (n + 1) / (n + 1) - top * rho**n / n
    return cap + alpha * penalty / h


def stationarity_function(rho: float, r: float, big_r: float, h: float, n: int) -> float:
    """``f(ρ) = |∇v_ρ(ρ)|² - (r + h - ρ)/h``; ``J_h' = α ρ^{N-1} f`` on ``(0, r+h]``."""
    return _shell_gradient(rho, big_r, n) ** 2 - (r + h - rho) / h


@dataclass(frozen=True)
class StationaryPoints:
    rho1: float | None
    rho2: float | None
    scan_min: float

    @property
    def has_roots(self) -> bool:
        return self.rho2 is not None


def _bisect(f, lo: float, hi: float, tol: float) -> float:
    flo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def stationary_points(
    r: float, big_r: float, h: float, n: int, samples: int = 10_000, tol: float = 1e-14
) -> StationaryPoints:
    """Roots ``ρ1 <= ρ2`` of the stationarity function on ``(0, r+h]``.

    The function is convex there, so a sign scan followed by bisection
    finds both roots when it takes a negative value.  Without a sign
    change both roots are ``None``.
    """
    _check_complement(r, big_r, h, n)
    top = r + h

    def f(x):
        return stationarity_function(x, r, big_r, h, n)

    grid = np.linspace(top / samples, top, samples)
    vals = np.array([f(x) for x in grid])
    neg = np.nonzero(vals < 0)[0]
    if len(neg) == 0:
        return StationaryPoints(None, None, float(vals.min()))
    i, j = neg[0], neg[-1]
    rho1 = _bisect(f, grid[i - 1], grid[i], tol) if i > 0 else _bisect(f, 0.5 * grid[0], grid[0], tol)
    rho2 = top if j == samples - 1 else _bisect(f, grid[j], grid[j + 1], tol)
    return StationaryPoints(float(rho1), float(rho2), float(vals.min()))


def non_blowup_constant(n: int, r0: float) -> float:
    """Smallest admissible ``M`` in the non-blow-up bound ``d >= r - M h``.

    N >= 3: ``1 + M = 16 (N-2)² / r0²``.  N = 2: the same argument with the
    logarithmic gradient ``1/(ρ ln(R/ρ))`` and ``ρ <= R/2`` gives
    ``1 + M = 4 / (r0 ln 2)²``.
    """
    _check_dim(n)
    if n == 2:
        return 4.0 / (r0 * log(2.0)) ** 2 - 1.0
    return 16.0 * (n - 2) ** 2 / r0**2 - 1.0


# --------------------------------------------------------------------------- radial motion


def radial_velocity(a: float, b: float, n: int) -> float:
    """Normal velocity ``-1 + |∇u(b)|²`` of the sphere ``|x| = b``."""
    return -1.0 + radial_boundary_gradient(a, b, n) ** 2


def equilibrium_radius(a: float, n: int, tol: float = 1e-13) -> float:
    """The radius ``b* > a`` at which ``|∇u(b*)| = 1``."""
    _check_dim(n)
    if not a > 0:
        raise DomainError("source radius must be positive")
    lo = a * (1 + 1e-12)
    hi = 2 * a + 1
    while radial_boundary_gradient(a, hi, n) > 1:
        hi *= 2
    return brentq(lambda b: radial_boundary_gradient(a, b, n) - 1.0, lo, hi, xtol=tol, rtol=1e-15)


@dataclass(frozen=True, eq=False)
class RadialTrajectory:
    t: np.ndarray
    b: np.ndarray
    collapsed: bool = False

    def at(self, time: float) -> float:
        return float(np.interp(time, self.t, self.b))


def radial_flow_ode(a: float, b0: float, T: float, n: int, dt: float = 1e-3) -> RadialTrajectory:
    """Integrate ``b' = -1 + |∇u(b)|²`` with classical RK4.

    Output is sampled every ``dt``; a step is split into substeps whenever
    it would move the radius by more than 5% of its distance to the
    source, which keeps the explicit scheme stable where the velocity
    blows up.  Stops early with ``collapsed=True`` if the radius reaches
    the source.
    """
    _check_radii(a, b0)
    if dt <= 0:
        raise DomainError("dt must be positive")
    steps = int(round(T / dt))
    dt = T / steps if steps else dt

    def rhs(b):
        return radial_velocity(a, b, n)

    def rk4(b, tau):
        k1 = rhs(b)
        k2 = rhs(b + 0.5 * tau * k1)
        k3 = rhs(b + 0.5 * tau * k2)
        k4 = rhs(b + tau * k3)
        return b + tau * (k1 + 2 * k2 + 2 * k3 + k4) / 6

    ts = [0.0]
    bs = [b0]
    b = b0
    for k in range(steps):
        try:
            sub = max(1, int(np.ceil(abs(rhs(b)) * dt / (0.05 * (b - a)))))
            for _ in range(sub):
                b = rk4(b, dt / sub)
        except (DomainError, ValueError, ZeroDivisionError):
            return RadialTrajectory(np.array(ts), np.array(bs), collapsed=True)
        if b <= a:
            return RadialTrajectory(np.array(ts), np.array(bs), collapsed=True)
        ts.append((k + 1) * dt)
        bs.append(b)
    return RadialTrajectory(np.array(ts), np.array(bs))


def radial_step(a: float, b: float, h: float, n: int) -> float:
    """Radius of the radial J_h minimizer started from ``B_b``.

    Unique root of ``|∇u(ρ)|² = 1 + (ρ - b)/h``; an implicit Euler step of
    the radial motion.
    """
    _check_radii(a, b)

    def f(rho):
        return radial_boundary_gradient(a, rho, n) ** 2 - 1.0 - (rho - b) / h

    lo = max(a * (1 + 1e-12), b - h)
    hi = b + h * (radial_boundary_gradient(a, max(lo, a * (1 + 1e-9)), n) ** 2) + h
    while f(hi) > 0:
        hi = b + 2 * (hi - b)
    if f(lo) <= 0:
        return lo
    return brentq(f, lo, hi, xtol=1e-14)


def radial_discrete_flow(a: float, b0: float, h: float, steps: int, n: int) -> np.ndarray:
    """Radii of the radial minimizing-movement sequence."""
    out = [b0]
    for _ in range(steps):
        out.append(radial_step(a, out[-1], h, n))
    return np.array(out)


def golden_ratio() -> float:
    return (1 + sqrt(5)) / 2
