import math

import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st

from bernflow.errors import ConfigurationError, ContainmentError, DegenerateSetError
from bernflow.grid import (
    Annulus,
    Ball,
    Difference,
    RegionMask,
    Union,
    boundary_layer,
    dilate,
    empty_mask,
    equivalent_radius,
    erode,
    hausdorff_distance,
    make_grid,
    rasterize_shape,
    signed_distance,
    strictly_contains,
    volume,
)


def test_cell_size_and_centers():
    g = make_grid((-2, -2), (2, 2), (128, 128))
    assert g.dx == 0.03125
    assert np.allclose(g.point((0, 0)), (-2 + 0.5 * 0.03125, -2 + 0.5 * 0.03125))
    assert np.allclose(g.centers[5, 7], (-2 + 5.5 * g.dx, -2 + 7.5 * g.dx))


@pytest.mark.parametrize(
    "lower, upper, cells",
    [((-2, -2), (2, 2), (4, 4)), ((0, 0), (1, 2), (64, 64)), ((0, 0), (0, 1), (16, 16)), ((0,), (1,), (16,))],
)
def test_make_grid_rejects(lower, upper, cells):
    with pytest.raises(ConfigurationError):
        make_grid(lower, upper, cells)


def test_three_dimensional_grid():
    g = make_grid((-1, -1, -1), (1, 1, 1), (16, 16, 16))
    assert g.ndim == 3 and g.centers.shape == (16, 16, 16, 3)


def test_unit_disk_volume(grid128):
    m = rasterize_shape(Ball((0, 0), 1.0), grid128)
    perimeter = 2 * math.pi
    assert abs(volume(m) - math.pi) <= 2 * grid128.dx * perimeter


def test_unit_disk_volume_fine():
    g = make_grid((-2, -2), (2, 2), (256, 256))
    assert volume(rasterize_shape(Ball((0, 0), 1.0), g)) == pytest.approx(math.pi, abs=0.02)


def test_volume_empty_and_full(grid128):
    assert volume(empty_mask(grid128)) == 0
    full = RegionMask(grid128, np.ones(grid128.shape, bool))
    assert volume(full) == 16.0


def test_subresolution_ball_is_degenerate(grid128):
    m = rasterize_shape(Ball((0.01, 0.02), 0.4 * grid128.dx), grid128)
    assert m.degenerate


def test_shape_outside_domain(grid128):
    with pytest.raises(ContainmentError):
        rasterize_shape(Union((Ball((0, 0), 1), Ball((3, 0), 0.5))), grid128)


def test_annulus_and_difference_agree(grid128):
    a = rasterize_shape(Annulus((0, 0), 0.5, 1.5), grid128)
    d = rasterize_shape(Difference(Ball((0, 0), 1.5), Ball((0, 0), 0.5)), grid128)
    assert a.equals(d)


def test_signed_distance_ball(grid128):
    d = signed_distance(rasterize_shape(Ball((0, 0), 1.5), grid128))
    dx = grid128.dx
    assert abs(d.at((0, 0)) + 1.5) <= 1.5 * dx
    assert abs(d.at((1.9, 0)) - 0.4) <= 1.5 * dx


def test_signed_distance_spec_points():
    g = make_grid((-4, -4), (4, 4), (128, 128))
    d = signed_distance(rasterize_shape(Ball((0, 0), 2.0), g))
    assert abs(d.at((0, 0)) + 2) <= 1.5 * g.dx
    assert abs(d.at((3, 0)) - 1) <= 1.5 * g.dx


def test_signed_distance_boundary_cells(grid128):
    m = rasterize_shape(Ball((0.1, -0.2), 1.1), grid128)
    d = signed_distance(m).values
    layer = boundary_layer(m)
    outer = dilate(m, 1).inside & ~m.inside
    assert np.all(np.abs(d[layer]) <= grid128.dx)
    assert np.all(np.abs(d[outer]) <= grid128.dx)


def test_signed_distance_matches_ball_formula(grid128):
    r = 1.2
    d = signed_distance(rasterize_shape(Ball((0, 0), r), grid128)).values
    exact = np.linalg.norm(grid128.centers, axis=-1) - r
    assert np.max(np.abs(d - exact)) <= 1.5 * grid128.dx


def test_eikonal_residual_away_from_skeleton(grid128):
    d = signed_distance(rasterize_shape(Ball((0, 0), 1.2), grid128)).values
    gy, gx = np.gradient(d, grid128.dx)
    r = np.linalg.norm(grid128.centers, axis=-1)
    band = (np.abs(r - 1.2) > 4 * grid128.dx) & (r > 0.3) & (r < 1.9)
    assert np.max(np.abs(np.hypot(gx, gy)[band] - 1)) <= 0.1


def test_signed_distance_degenerate(grid128):
    with pytest.raises(DegenerateSetError):
        signed_distance(empty_mask(grid128))
    with pytest.raises(DegenerateSetError):
        signed_distance(RegionMask(grid128, np.ones(grid128.shape, bool)))


def test_erode_ball(grid128):
    m = rasterize_shape(Ball((0, 0), 1.0), grid128)
    e = erode(m, 0.25)
    ref = rasterize_shape(Ball((0, 0), 0.75), grid128)
    assert hausdorff_distance(e, ref) <= 1.5 * grid128.dx
    assert erode(m, 1.5).empty


def test_minimal_erosion_strips_one_layer(grid128):
    m = rasterize_shape(Union((Ball((-0.5, 0), 0.7), Ball((0.6, 0.3), 0.5))), grid128)
    e = erode(m, grid128.dx / 10)
    assert np.array_equal(e.inside, m.inside & ~boundary_layer(m))


def test_hausdorff_identity_and_offset(grid128):
    a = rasterize_shape(Ball((0, 0), 1.0), grid128)
    b = rasterize_shape(Ball((0, 0), 1.2), grid128)
    assert hausdorff_distance(a, a) == 0
    assert abs(hausdorff_distance(a, b) - 0.2) <= 1.5 * grid128.dx
    assert hausdorff_distance(a, b) == hausdorff_distance(b, a)
    with pytest.raises(DegenerateSetError):
        hausdorff_distance(a, empty_mask(grid128))


def test_strict_containment(grid128):
    outer = rasterize_shape(Ball((0, 0), 1.0), grid128)
    assert strictly_contains(outer, rasterize_shape(Ball((0, 0), 0.8), grid128))
    assert not strictly_contains(outer, outer)


def test_equivalent_radius(grid128):
    assert equivalent_radius(rasterize_shape(Ball((0, 0), 1.0), grid128)) == pytest.approx(1.0, abs=grid128.dx)


# --------------------------------------------------------------------------- properties

G = make_grid((-2, -2), (2, 2), (48, 48))
centers = st.tuples(st.floats(-0.6, 0.6), st.floats(-0.6, 0.6))
radii = st.floats(0.3, 1.0)
depths = st.floats(0.01, 0.5)


def blob(c1, r1, c2, r2):
    return rasterize_shape(Union((Ball(c1, r1), Ball(c2, r2))), G)


@pytest.mark.xfail(
    strict=True,
    reason="face-midpoint erosion re-measures from the new staircase, which can sit up to half a cell "
    "deeper than the first offset, so exact cellwise composition fails by a sub-cell margin",
)
@example((0.0, 0.0), 1.0, (0.0, 0.0), 1.0, 0.2, 0.2)
@given(centers, radii, centers, radii, depths, depths)
def test_erosion_composition(c1, r1, c2, r2, h1, h2):
    m = blob(c1, r1, c2, r2)
    twice = erode(erode(m, h1), h2)
    once = erode(m, h1 + h2)
    assert twice.issubset(once)
    assert once.issubset(m)


@given(centers, radii, st.floats(0.05, 0.5))
def test_signed_distance_monotone_in_set(c, r, grow):
    a = rasterize_shape(Ball(c, r), G)
    b = rasterize_shape(Ball(c, r + grow), G)
    assert np.all(signed_distance(b).values <= signed_distance(a).values + 2 * G.dx)


@given(st.floats(-1.5, -0.5), st.floats(0.5, 1.5), st.floats(0.2, 0.4))
def test_volume_additive_on_disjoint_masks(x1, x2, r):
    a = rasterize_shape(Ball((x1, 0), r), G)
    b = rasterize_shape(Ball((x2, 0), r), G) - a
    assert (a | b).count == a.count + b.count
    # the cell volume is not dyadic in general, so compare up to one rounding
    assert volume(a | b) == pytest.approx(volume(a) + volume(b), rel=4 * np.finfo(float).eps)


@given(centers, radii, centers, radii, centers, radii)
def test_hausdorff_triangle(c1, r1, c2, r2, c3, r3):
    a, b, c = (rasterize_shape(Ball(cc, rr), G) for cc, rr in ((c1, r1), (c2, r2), (c3, r3)))
    ab, bc, ac = hausdorff_distance(a, b), hausdorff_distance(b, c), hausdorff_distance(a, c)
    assert ac <= ab + bc + 1e-12
    assert ab == hausdorff_distance(b, a)


@given(centers, radii, centers, radii, depths, depths)
def test_erosion_composition_margin(c1, r1, c2, r2, h1, h2):
    # the offending cells all lie within half a cell of the combined offset
    m = blob(c1, r1, c2, r2)
    extra = erode(erode(m, h1), h2).inside & ~erode(m, h1 + h2).inside
    d = signed_distance(m).values
    assert np.all(d[extra] < -(h1 + h2) + 0.5 * G.dx)
