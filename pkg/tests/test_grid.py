import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from padis.grid import (
    PartitionSpec,
    all_partitions,
    coordinate,
    embed,
    extract_border,
    extract_patch_array,
    extract_patches,
    make_partition,
    pad,
    crop,
    positional_channels,
    positional_grid,
    positional_patch,
    scatter_patch_array,
    scatter_patches,
)


@pytest.mark.parametrize("N,P,expected", [(256, 56, (4, 24)), (256, 96, (2, 32)), (8, 4, (2, 4))])
def test_make_partition_values(N, P, expected):
    assert make_partition(N, P) == expected


def test_divisible_side_keeps_full_patch_pad():
    assert make_partition(64, 16) == (4, 16)


@pytest.mark.parametrize("N,P", [(8, 8), (8, 9), (8, 0), (8, -1)])
def test_make_partition_rejects(N, P):
    with pytest.raises(ValueError):
        make_partition(N, P)


@given(N=st.integers(2, 300), data=st.data())
def test_pad_width_bounds(N, data):
    P = data.draw(st.integers(1, N - 1))
    k, M = make_partition(N, P)
    assert k == N // P
    assert 1 <= M <= P
    assert (k + 1) * P == N + M


def test_spec_rejects_offsets_outside_range():
    with pytest.raises(ValueError):
        PartitionSpec.create(8, 4, i=0, j=1)
    with pytest.raises(ValueError):
        PartitionSpec.create(8, 4, i=1, j=5)
    with pytest.raises(ValueError):
        PartitionSpec(i=1, j=1, P=4, k=3, N=8)


def test_first_partition_locations_small_case():
    spec = PartitionSpec.create(8, 4, 1, 1)
    assert spec.canvas_size == 16
    assert spec.locations() == [(r, c) for r in (0, 4, 8) for c in (0, 4, 8)]
    assert len(extract_patches(np.zeros((1, 16, 16)), spec)) == 9


def test_patch_count_large_case(rng):
    spec = PartitionSpec.create(256, 56, 7, 19)
    canvas = np.zeros((1, spec.canvas_size, spec.canvas_size))
    assert extract_patch_array(canvas, spec).shape == (25, 1, 56, 56)


def test_patches_are_row_major():
    spec = PartitionSpec.create(10, 4, 2, 1)
    L = spec.canvas_size
    canvas = np.arange(L * L, dtype=float).reshape(1, L, L)
    for patch, (r, c) in extract_patches(canvas, spec):
        np.testing.assert_array_equal(patch, canvas[:, r:r + 4, c:c + 4])
    locs = spec.locations()
    assert locs == sorted(locs)


@settings(max_examples=40, deadline=None)
@given(N=st.integers(3, 24), data=st.data())
def test_scatter_extract_roundtrip(N, data):
    P = data.draw(st.integers(1, N - 1))
    _, M = make_partition(N, P)
    i = data.draw(st.integers(1, M))
    j = data.draw(st.integers(1, M))
    spec = PartitionSpec.create(N, P, i, j)
    L = spec.canvas_size
    canvas = np.random.default_rng(N * 31 + P).standard_normal((2, L, L))
    back = scatter_patch_array(extract_patch_array(canvas, spec), spec)
    mask = spec.patch_mask()
    np.testing.assert_array_equal(back[:, mask], canvas[:, mask])
    assert np.all(back[:, ~mask] == 0)
    back2 = scatter_patches(extract_patches(canvas, spec), spec, out=np.zeros_like(canvas))
    np.testing.assert_array_equal(back, back2)


def test_border_counts_and_values(rng):
    N, P = 10, 4
    img = rng.random((1, N, N))
    _, M = make_partition(N, P)
    canvas = pad(img, M)
    for spec in all_partitions(N, P):
        border = extract_border(canvas, spec)
        assert border.values.shape[1] == spec.canvas_size**2 - (spec.k + 1) ** 2 * P**2
        assert np.all(border.values == 0)
    noise = rng.standard_normal(canvas.shape)
    spec = PartitionSpec.create(N, P, 1, 2)
    border = extract_border(canvas + noise, spec)
    np.testing.assert_array_equal(border.values, noise[:, border.rows, border.cols])


def test_pad_crop_embed(rng):
    img = rng.random((3, 6, 6))
    canvas = pad(img, 2)
    assert canvas.shape == (3, 10, 10)
    assert np.all(canvas[:, :2] == 0) and np.all(canvas[:, :, -2:] == 0)
    np.testing.assert_array_equal(crop(canvas, 6, 2), img)
    other = np.ones((3, 10, 10))
    out = embed(img, 2, other)
    np.testing.assert_array_equal(crop(out, 6, 2), img)
    assert out[0, 0, 0] == 1.0


def test_positional_grid_structure():
    g = positional_grid(9)
    assert g.xcoord[0, 0] == -1.0 and g.xcoord[0, -1] == 1.0
    assert g.ycoord[0, 0] == -1.0 and g.ycoord[-1, 0] == 1.0
    assert np.all(g.xcoord == g.xcoord[0:1, :])  # varies along columns only
    assert np.all(g.ycoord == g.ycoord[:, 0:1])
    assert g.xcoord[4, 4] == 0.0 and g.ycoord[4, 4] == 0.0
    np.testing.assert_allclose(np.diff(g.xcoord[0]), 0.25)


def test_positional_patch_values():
    g = positional_grid(16)
    x, y = positional_patch(g, (0, 0), 4)
    assert x[0, 0] == -1.0 and y[0, 0] == -1.0
    with pytest.raises(ValueError):
        positional_patch(g, (13, 0), 4)
    # vertical flip of the canvas negates the y coordinate of the mirrored patch
    a = positional_patch(g, (2, 5), 4)[1]
    b = positional_patch(g, (16 - 2 - 4, 5), 4)[1]
    np.testing.assert_allclose(np.flipud(b), -a, atol=1e-15)


def test_positional_channels_match_grid():
    g = positional_grid(20)
    locs = [(0, 0), (3, 7), (16, 16)]
    pos = positional_channels(20, locs, 4)
    for n, loc in enumerate(locs):
        x, y = positional_patch(g, loc, 4)
        np.testing.assert_array_equal(pos[n, 0], x)
        np.testing.assert_array_equal(pos[n, 1], y)
    outside = positional_channels(20, [(18, 18)], 4)
    assert outside[0, 0, 0, -1] == pytest.approx(coordinate(21, 20))
