"""Uniform Cartesian grids, cell masks and the geometry built on them.

Sets are stored per cell: a cell belongs to a set when its center does.
The boundary of a mask is the collection of cell faces separating an
inside cell from an outside one; distances are measured to the midpoints
of those faces.  Everything here is N-dimensional numpy code, exercised
for N = 2 and N = 3.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from bernflow.errors import ConfigurationError, ContainmentError, DegenerateSetError

MIN_CELLS = 8


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Cell-centered uniform grid over the box ``[lower, upper]``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    cells: tuple[int, ...]

    @property
    def ndim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.cells)

    @cached_property
    def dx(self) -> float:
        return (self.upper[0] - self.lower[0]) / self.cells[0]

    @property
    def cell_volume(self) -> float:
        return self.dx**self.ndim

    @cached_property
    def axes(self) -> list[np.ndarray]:
        """1D arrays of cell-center coordinates, one per axis."""
        return [lo + (np.arange(n) + 0.5) * self.dx for lo, n in zip(self.lower, self.cells)]

    @cached_property
    def centers(self) -> np.ndarray:
        """Cell centers as an array of shape ``(*cells, ndim)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        out = np.stack(mesh, axis=-1)
        out.flags.writeable = False
        return out

    def point(self, index: Sequence[int]) -> np.ndarray:
        return np.asarray(self.lower) + (np.asarray(index) + 0.5) * self.dx

    def index_of(self, x: Sequence[float]) -> tuple[int, ...]:
        """Index of the cell containing ``x`` (clipped to the grid)."""
        idx = np.floor((np.asarray(x, dtype=float) - np.asarray(self.lower)) / self.dx).astype(int)
        return tuple(int(i) for i in np.clip(idx, 0, np.asarray(self.cells) - 1))

    def same_as(self, other: GridSpec) -> bool:
        return self is other or (
            self.cells == other.cells and self.lower == other.lower and self.upper == other.upper
        )


def make_grid(lower: Sequence[float], upper: Sequence[float], cells: Sequence[int]) -> GridSpec:
    """Build a :class:`GridSpec`, rejecting coarse or anisotropic grids."""
    lower = tuple(float(v) for v in lower)
    upper = tuple(float(v) for v in upper)
    cells = tuple(int(n) for n in cells)
    if not (len(lower) == len(upper) == len(cells)):
        raise ConfigurationError("lower, upper and cells must have the same length")
    if len(cells) not in (2, 3):
        raise ConfigurationError(f"dimension must be 2 or 3, got {len(cells)}")
    if any(n < MIN_CELLS for n in cells):
        raise ConfigurationError(f"at least {MIN_CELLS} cells per axis required, got {cells}")
    if any(u <= lo for lo, u in zip(lower, upper)):
        raise ConfigurationError("upper corner must exceed lower corner componentwise")
    sizes = [(u - lo) / n for lo, u, n in zip(lower, upper, cells)]
    if max(sizes) - min(sizes) > 1e-9 * max(sizes):
        raise ConfigurationError(f"anisotropic cells {sizes}: cell size must agree on every axis")
    return GridSpec(lower, upper, cells)


@dataclass(frozen=True, eq=False)
class RegionMask:
    """A set represented by the cells whose centers lie inside it."""

    grid: GridSpec
    inside: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.inside, dtype=bool)
        if arr.shape != self.grid.shape:
            raise ConfigurationError(f"mask shape {arr.shape} does not match grid {self.grid.shape}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "inside", arr)

    @property
    def count(self) -> int:
        return int(self.inside.sum())

    @property
    def empty(self) -> bool:
        return not self.inside.any()

    @property
    def full(self) -> bool:
        return bool(self.inside.all())

    @property
    def degenerate(self) -> bool:
        """True for masks of at most one cell (sub-resolution shapes)."""
        return self.count <= 1

    def _other(self, other: RegionMask) -> np.ndarray:
        if not self.grid.same_as(other.grid):
            raise ConfigurationError("masks live on different grids")
        return other.inside

    def __or__(self, other: RegionMask) -> RegionMask:
        return RegionMask(self.grid, self.inside | self._other(other))

    def __and__(self, other: RegionMask) -> RegionMask:
        return RegionMask(self.grid, self.inside & self._other(other))

    def __sub__(self, other: RegionMask) -> RegionMask:
        return RegionMask(self.grid, self.inside & ~self._other(other))

    def __invert__(self) -> RegionMask:
        return RegionMask(self.grid, ~self.inside)

    def issubset(self, other: RegionMask) -> bool:
        return not (self.inside & ~self._other(other)).any()

    def equals(self, other: RegionMask) -> bool:
        return bool(np.array_equal(self.inside, self._other(other)))


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.shape != self.grid.shape:
            raise ConfigurationError(f"field shape {arr.shape} does not match grid {self.grid.shape}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    def at(self, x: Sequence[float]) -> float:
        """Value of the cell containing ``x``."""
        return float(self.values[self.grid.index_of(x)])


def empty_mask(grid: GridSpec) -> RegionMask:
    return RegionMask(grid, np.zeros(grid.shape, dtype=bool))


# --------------------------------------------------------------------------- shapes


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float

    def contains(self, pts: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        return np.sum((pts - c) ** 2, axis=-1) < self.radius**2

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center, dtype=float)
        return c - self.radius, c + self.radius


@dataclass(frozen=True)
class Annulus:
    center: tuple[float, ...]
    inner: float
    outer: float

    def __post_init__(self):
        if not 0 <= self.inner < self.outer:
            raise ConfigurationError("annulus needs 0 <= inner < outer")

    def contains(self, pts: np.ndarray) -> np.ndarray:
        r2 = np.sum((pts - np.asarray(self.center, dtype=float)) ** 2, axis=-1)
        return (r2 >= self.inner**2) & (r2 < self.outer**2)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center, dtype=float)
        return c - self.outer, c + self.outer


@dataclass(frozen=True)
class Union:
    parts: tuple = field(default_factory=tuple)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        out = np.zeros(pts.shape[:-1], dtype=bool)
        for p in self.parts:
            out |= p.contains(pts)
        return out

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        bs = [p.bounds() for p in self.parts]
        return np.min([b[0] for b in bs], axis=0), np.max([b[1] for b in bs], axis=0)


@dataclass(frozen=True)
class Difference:
    base: object
    hole: object

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return self.base.contains(pts) & ~self.hole.contains(pts)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.base.bounds()


def rasterize_shape(shape, grid: GridSpec) -> RegionMask:
    """Mark every cell whose center satisfies the shape predicate.

    Raises :class:`ContainmentError` if the shape's bounding box leaves the
    grid domain.  Shapes below grid resolution give a mask whose
    ``degenerate`` flag is set.
    """
    lo, hi = shape.bounds()
    if len(lo) != grid.ndim:
        raise ConfigurationError(f"shape is {len(lo)}-dimensional, grid is {grid.ndim}-dimensional")
    if np.any(lo < np.asarray(grid.lower)) or np.any(hi > np.asarray(grid.upper)):
        raise ContainmentError(f"shape bounds {lo}..{hi} leave the grid domain {grid.lower}..{grid.upper}")
    return RegionMask(grid, shape.contains(grid.centers))


# --------------------------------------------------------------------------- boundaries


def _cross(ndim: int) -> np.ndarray:
    return ndimage.generate_binary_structure(ndim, 1)


def _padded(inside: np.ndarray) -> np.ndarray:
    return np.pad(inside, 1, constant_values=False)


@dataclass(frozen=True, eq=False)
class BoundaryFaces:
    """Faces separating inside from outside cells.

    ``inner`` holds the index tuple of the inside cell of each face and
    ``outer`` the (possibly off-grid) outside neighbour; ``axis`` and
    ``sign`` give the outward normal ``sign * e_axis``.
    """

    points: np.ndarray
    inner: tuple[np.ndarray, ...]
    outer: tuple[np.ndarray, ...]
    axis: np.ndarray
    sign: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


def boundary_faces(mask: RegionMask) -> BoundaryFaces:
    grid = mask.grid
    pad = _padded(mask.inside)
    pts, inner, outer, axes, signs = [], [], [], [], []
    for ax in range(grid.ndim):
        for sgn in (1, -1):
            nb = np.roll(pad, -sgn, axis=ax)
            hit = pad & ~nb
            hit_core = hit[tuple(slice(1, -1) for _ in range(grid.ndim))]
            idx = np.nonzero(hit_core)
            if len(idx[0]) == 0:
                continue
            out_idx = list(idx)
            out_idx[ax] = idx[ax] + sgn
            p = np.stack(
                [np.asarray(grid.lower[k]) + (idx[k] + 0.5) * grid.dx for k in range(grid.ndim)], axis=-1
            )
            p[:, ax] += 0.5 * sgn * grid.dx
            pts.append(p)
            inner.append(np.stack(idx, axis=-1))
            outer.append(np.stack(out_idx, axis=-1))
            axes.append(np.full(len(p), ax))
            signs.append(np.full(len(p), sgn))
    if not pts:
        z = np.zeros((0,), dtype=int)
        return BoundaryFaces(np.zeros((0, grid.ndim)), (z,) * grid.ndim, (z,) * grid.ndim, z, z)
    inner_arr = np.concatenate(inner)
    outer_arr = np.concatenate(outer)
    return BoundaryFaces(
        np.concatenate(pts),
        tuple(inner_arr.T),
        tuple(outer_arr.T),
        np.concatenate(axes),
        np.concatenate(signs),
    )


def boundary_layer(mask: RegionMask) -> np.ndarray:
    """Inside cells with at least one face neighbour outside (grid exterior counts as outside)."""
    pad = _padded(mask.inside)
    eroded = ndimage.binary_erosion(pad, structure=_cross(mask.grid.ndim))
    core = tuple(slice(1, -1) for _ in range(mask.grid.ndim))
    return mask.inside & ~eroded[core]


def dilate(mask: RegionMask, cells: int = 1, diagonal: bool = False) -> RegionMask:
    """Grow by ``cells`` layers of face neighbours, or of all ``3^N - 1`` neighbours if ``diagonal``."""
    if cells <= 0:
        return mask
    n = mask.grid.ndim
    structure = np.ones((3,) * n, dtype=bool) if diagonal else _cross(n)
    out = ndimage.binary_dilation(mask.inside, structure=structure, iterations=cells)
    return RegionMask(mask.grid, out)


def components(mask: RegionMask) -> tuple[np.ndarray, int]:
    """Face-connected component labels (the coupling of the 5/7-point stencil)."""
    return ndimage.label(mask.inside, structure=_cross(mask.grid.ndim))


def touching(mask: RegionMask, seed: RegionMask) -> RegionMask:
    """Union of the face-connected components of ``mask | seed`` that meet ``seed``."""
    both = mask.inside | seed.inside
    labels, _ = ndimage.label(both, structure=_cross(mask.grid.ndim))
    keep = np.unique(labels[seed.inside])
    keep = keep[keep > 0]
    return RegionMask(mask.grid, np.isin(labels, keep))


def margin_cells(mask: RegionMask) -> int:
    """Smallest number of cells between an inside cell and the grid edge."""
    if mask.empty:
        return min(mask.grid.cells)
    idx = np.nonzero(mask.inside)
    return int(min(min(i.min(), n - 1 - i.max()) for i, n in zip(idx, mask.grid.cells)))


def strictly_contains(outer: RegionMask, inner: RegionMask) -> bool:
    """``inner ⊂⊂ outer`` at grid level: a full layer of outer cells surrounds inner."""
    return dilate(inner, 1).issubset(outer)


# --------------------------------------------------------------------------- distances


def _face_distance(mask: RegionMask) -> np.ndarray:
    faces = boundary_faces(mask)
    grid = mask.grid
    tree = cKDTree(faces.points)
    dist, _ = tree.query(grid.centers.reshape(-1, grid.ndim))
    return dist.reshape(grid.shape)


def signed_distance(mask: RegionMask) -> ScalarField:
    """Signed distance from cell centers to the face midpoints of ``∂mask``.

    Negative inside, positive outside.  The nearest-point search is exact
    (k-d tree over the face midpoints), so the only error relative to the
    continuum set is the staircase itself.
    """
    if mask.empty or mask.full:
        raise DegenerateSetError("signed distance needs a mask that is neither empty nor full")
    d = _face_distance(mask)
    return ScalarField(mask.grid, np.where(mask.inside, -d, d))


def erode(mask: RegionMask, h: float) -> RegionMask:
    """The retracted set ``{d^s < -h}``.

    The result never keeps a cell of the boundary layer, so for
    ``h`` below half a cell this still strips exactly one layer.
    """
    if h <= 0:
        raise ConfigurationError(f"erosion depth must be positive, got {h}")
    if mask.empty:
        return mask
    d = _face_distance(mask)
    keep = mask.inside & (d > h) & ~boundary_layer(mask)
    return RegionMask(mask.grid, keep)


def volume(mask: RegionMask) -> float:
    return mask.count * mask.grid.cell_volume


def _distance_to(mask: RegionMask) -> np.ndarray:
    return ndimage.distance_transform_edt(~mask.inside) * mask.grid.dx


def hausdorff_distance(a: RegionMask, b: RegionMask) -> float:
    """Hausdorff distance between the cell-center sets of two masks."""
    if a.empty or b.empty:
        raise DegenerateSetError("Hausdorff distance of an empty mask is undefined")
    if not a.grid.same_as(b.grid):
        raise ConfigurationError("masks live on different grids")
    da = _distance_to(a)
    db = _distance_to(b)
    return float(max(db[a.inside].max(), da[b.inside].max()))


def equivalent_radius(mask: RegionMask) -> float:
    """Radius of the ball with the same volume as ``mask``."""
    from math import gamma, pi

    n = mask.grid.ndim
    unit = pi ** (n / 2) / gamma(n / 2 + 1)
    return (volume(mask) / unit) ** (1.0 / n)
