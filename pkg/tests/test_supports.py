import numpy as np
import pytest
from scipy import ndimage

from accesstopo.grid import GridDims, ScalarGrid
from accesstopo.supports import (BuildSpec, SupportError, build_axis, generate_supports,
                                 layer_coefficients, layer_index, layer_weight_field,
                                 overhang_points, supported_violations)

UP3 = BuildSpec((0, 0, 1), 90)
UP2 = BuildSpec((0, 1), 90)


def grid(a):
    a = np.asarray(a, float)
    if a.ndim == 2:
        a = a[:, :, None]
    return ScalarGrid(GridDims(*a.shape), a)


def staircase(n=8):
    a = np.zeros((n, n, 1))
    for k in range(n):
        a[: k + 1, k] = 1             # layer k reaches one voxel further than layer k - 1
    return grid(a)


def blob(rng, shape=(14, 12, 10)):
    a = ndimage.gaussian_filter(rng.random(shape), 1.5)
    return grid((a > np.quantile(a, 0.7)).astype(float))


def test_build_spec_validation():
    with pytest.raises(ValueError, match="unit"):
        BuildSpec((0, 0, 2))
    with pytest.raises(ValueError, match="overhang"):
        BuildSpec((0, 0, 1), 0)
    with pytest.raises(SupportError, match="rotate the domain"):
        build_axis(BuildSpec((0.6, 0, 0.8)), GridDims(4, 4, 4))
    assert build_axis(BuildSpec((0, -1, 0)), GridDims(4, 4, 4)) == (1, -1)


def test_stencil_choice():
    assert not BuildSpec(alpha=90).diagonal_stencil
    assert not BuildSpec(alpha=70).diagonal_stencil
    assert BuildSpec(alpha=60).diagonal_stencil
    assert BuildSpec(alpha=45).diagonal_stencil
    assert BuildSpec(alpha=30).diagonal_stencil


# --- overhang points ------------------------------------------------------------

def test_column_has_no_overhang():
    a = np.zeros((5, 5, 8))
    a[2, 2, :] = 1
    assert overhang_points(grid(a), UP3).count() == 0


def test_floating_voxel_is_overhang():
    a = np.zeros((5, 5, 8))
    a[2, 2, 4] = 1
    oh = overhang_points(grid(a), UP3)
    assert oh.count() == 1 and oh.values[2, 2, 4] == 1


def test_staircase_overhangs():
    s = staircase()
    assert overhang_points(s, BuildSpec((0, 1), 45)).count() == 0
    oh = overhang_points(s, UP2).values[:, :, 0]
    expected = np.zeros((8, 8))
    for k in range(1, 8):
        expected[k, k] = 1            # the tread edge of each step
    assert np.array_equal(oh, expected)


# --- supports -------------------------------------------------------------------

def test_supported_part_needs_nothing():
    a = np.zeros((6, 6, 6))
    a[1:5, 1:5, :4] = 1
    nn = generate_supports(grid(a), UP3)
    assert nn.supports.count() == 0
    assert generate_supports(staircase(), BuildSpec((0, 1), 45)).supports.count() == 0


def test_cantilevered_bar_columns():
    n, h = 16, 9
    a = np.zeros((n, n, n))
    a[1:3, 6:9, : h + 1] = 1          # pillar
    a[3:13, 6:9, h] = 1               # bar at height h hanging off it
    nn = generate_supports(grid(a), UP3)
    assert nn.supports.count() == 10 * 3 * h
    assert np.all(nn.supports.values[3:13, 6:9, :h] == 1)


def test_supports_land_on_platform():
    a = np.zeros((8, 1, 8))
    a[2:6, 0, 5] = 1
    plat = np.zeros_like(a)
    plat[:, :, 0] = 1
    nn = generate_supports(grid(a), UP3, grid(plat))
    assert nn.supports.count() == 4 * 4       # layers 1..4 under the bar
    assert np.all(nn.supports.values[:, :, 0] == 0)


def test_supports_land_on_part():
    a = np.zeros((6, 6, 1))
    a[:, 0] = 1
    a[1:3, 1] = 1                   # ledge
    a[1:4, 4] = 1                   # roof above part of the ledge
    nn = generate_supports(grid(a), UP2)
    s = nn.supports.values[:, :, 0]
    assert s[1, 2:4].all() and s[2, 2:4].all()
    assert s[3, 1:4].all()
    assert s.sum() == 7


def test_2d_build_along_minus_y():
    a = np.zeros((5, 8, 1))
    a[2, 2] = 1
    nn = generate_supports(grid(a), BuildSpec((0, -1), 90))
    assert np.array_equal(np.argwhere(nn.supports.values[:, :, 0]), [[2, y] for y in range(3, 8)])


def test_platform_errors():
    a = np.zeros((4, 4, 6))
    a[1, 1, 0] = 1
    plat = np.zeros_like(a)
    plat[:, :, :2] = 1
    with pytest.raises(SupportError, match="below the platform"):
        generate_supports(grid(a), UP3, grid(plat))
    b = np.zeros_like(a)
    b[1, 1, 1] = 1
    plat1 = np.zeros_like(a)
    plat1[:, :, 1] = 1
    with pytest.raises(SupportError, match="overlaps"):
        generate_supports(grid(b), UP3, grid(plat1))


@pytest.mark.parametrize("seed", range(5))
def test_invariants_on_random_blobs(seed):
    rng = np.random.default_rng(seed)
    part = blob(rng)
    s90 = generate_supports(part, BuildSpec((0, 0, 1), 90)).supports
    s45 = generate_supports(part, BuildSpec((0, 0, 1), 45)).supports
    assert not supported_violations(part, s90, BuildSpec((0, 0, 1), 90)).any()
    assert not supported_violations(part, s45, BuildSpec((0, 0, 1), 45)).any()
    assert np.all(s45.values <= s90.values)
    assert not np.any((part.values > 0.5) & (s90.values > 0))
    # already supported near-net shapes need no further supports
    near = grid(np.maximum(part.values, s90.values))
    assert generate_supports(near, BuildSpec((0, 0, 1), 90)).supports.count() == 0


def test_density_threshold():
    a = np.zeros((3, 3, 4))
    a[1, 1, 3] = 0.4
    assert generate_supports(grid(a), UP3).supports.count() == 0
    assert generate_supports(grid(a), BuildSpec((0, 0, 1), 90, 0.3)).supports.count() == 3


# --- layer coefficients ------------------------------------------------------------

def test_layer_coefficients_examples():
    assert layer_coefficients(7, 3.0)[0] == 1.0
    assert np.allclose(layer_coefficients(4, 1.0), [1, 0.75, 0.5, 0.25])
    assert layer_coefficients(10, 4.0)[-1] == pytest.approx(1e-4, rel=1e-12)
    assert np.all(layer_coefficients(5, 0.0) == 1)
    with pytest.raises(ValueError):
        layer_coefficients(0, 1)
    with pytest.raises(ValueError):
        layer_coefficients(3, -1)


def test_layer_fields_follow_build_sign():
    d = GridDims(3, 4, 1)
    up = layer_index(d, BuildSpec((0, 1)))
    down = layer_index(d, BuildSpec((0, -1)))
    assert np.array_equal(up[0, :, 0], [1, 2, 3, 4])
    assert np.array_equal(down[0, :, 0], [4, 3, 2, 1])
    w = layer_weight_field(d, BuildSpec((0, 1)), 1.0)
    assert np.allclose(w[1, :, 0], [1, 0.75, 0.5, 0.25])
