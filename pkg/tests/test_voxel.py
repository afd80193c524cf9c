import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eyeparse.errors import BoundsError, CapacityError, InputError
from eyeparse.voxel import (EyeWindow, OccupancyGrid, PointCloud, box_iou, extract_window,
                            nearest_indices, read_points, resample_to_cnn_input, voxelize,
                            write_grid, write_points)


def _cloud(n, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return PointCloud(rng.uniform(0, scale, size=(n, 3)), rng.integers(0, 256, size=(n, 3)))


def test_two_points_share_unit_mean_colour():
    cloud = PointCloud([[0.01, 0.01, 0.01], [0.02, 0.02, 0.02], [0.5, 0.5, 0.5]],
                       [[100, 0, 0], [200, 0, 0], [0, 0, 0]])
    grid = voxelize(cloud, 0.05, origin=(0, 0, 0))
    assert grid.counts[0, 0, 0] == 2
    np.testing.assert_allclose(grid.colors[0, 0, 0], [150, 0, 0])


def test_single_point_occupies_one_unit():
    cloud = PointCloud([[1.0, 2.0, 3.0]], [[10, 20, 30]])
    grid = voxelize(cloud, 0.05)
    assert grid.dims == (1, 1, 1)
    assert grid.counts.sum() == 1


def test_membership_matches_floor_division_oracle():
    cloud = _cloud(10, seed=3)
    grid = voxelize(cloud, 0.05)
    origin = cloud.xyz.min(axis=0)
    dims = np.array(grid.dims)
    expected = np.zeros(grid.dims, dtype=int)
    for p in cloud.xyz:
        idx = [min(int(np.floor((c - o) / 0.05)), d - 1) for c, o, d in zip(p, origin, dims)]
        expected[tuple(idx)] += 1
    np.testing.assert_array_equal(grid.counts, expected)


def test_boundary_point_clamps_into_last_unit():
    cloud = PointCloud([[0.0, 0.0, 0.0], [0.1, 0.1, 0.1]], [[0, 0, 0]] * 2)
    grid = voxelize(cloud, 0.05)
    assert grid.dims == (2, 2, 2)
    assert grid.counts[1, 1, 1] == 1


def test_empty_cloud_is_an_input_error():
    with pytest.raises(InputError):
        voxelize(PointCloud(np.zeros((0, 3)), np.zeros((0, 3))), 0.05)


def test_unit_budget_is_enforced():
    with pytest.raises(CapacityError):
        voxelize(_cloud(5, scale=1.0), 0.01, unit_budget=1000)


def test_bad_colours_rejected():
    with pytest.raises(InputError):
        PointCloud([[0, 0, 0]], [[0, 0, 300]])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 200), st.integers(0, 10_000))
def test_counts_sum_to_points_and_order_does_not_matter(n, seed):
    cloud = _cloud(n, seed)
    grid = voxelize(cloud, 0.1)
    assert grid.counts.sum() == n
    perm = np.random.default_rng(seed + 1).permutation(n)
    assert voxelize(cloud.subset(perm), 0.1) == grid
    occ = grid.counts > 0
    assert np.all(grid.colors[~occ] == 0)
    assert grid.colors.min() >= 0 and grid.colors.max() <= 255


def _fixture_grid(dims=(6, 5, 4), seed=0):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 3, size=dims)
    colors = np.where(counts[..., None] > 0, rng.uniform(0, 255, size=dims + (3,)), 0.0)
    return OccupancyGrid(counts, colors, 0.1, (0.0, 0.0, 0.0))


def test_extract_full_window_is_identity():
    g = _fixture_grid()
    assert extract_window(g, EyeWindow.full(g.dims)) == g


def test_extract_matches_direct_indexing():
    g = _fixture_grid()
    w = EyeWindow((1, 2, 1), (3, 4, 3))
    sub = extract_window(g, w)
    assert sub.dims == (2, 2, 2)
    for i, j, k in itertools.product(range(2), repeat=3):
        assert sub.counts[i, j, k] == g.counts[1 + i, 2 + j, 1 + k]
    np.testing.assert_allclose(sub.origin, (0.1, 0.2, 0.1))


def test_extract_empty_region():
    counts = np.zeros((4, 4, 4), dtype=int)
    counts[0, 0, 0] = 1
    g = OccupancyGrid(counts, np.zeros((4, 4, 4, 3)), 0.1, (0, 0, 0))
    assert not extract_window(g, EyeWindow((2, 2, 2), (4, 4, 4))).occupied.any()


def test_extract_out_of_bounds():
    with pytest.raises(BoundsError):
        extract_window(_fixture_grid(), EyeWindow((0, 0, 0), (7, 2, 2)))


def test_nested_extraction_equals_direct():
    g = _fixture_grid((8, 8, 8), seed=2)
    outer = EyeWindow((1, 1, 1), (7, 6, 8))
    inner = EyeWindow((2, 1, 3), (4, 4, 6))
    rel = EyeWindow(np.subtract(inner.lo, outer.lo), np.subtract(inner.hi, outer.lo))
    a = extract_window(extract_window(g, outer), rel)
    b = extract_window(g, inner)
    np.testing.assert_array_equal(a.counts, b.counts)
    np.testing.assert_allclose(a.origin, b.origin)


def test_window_invariants():
    with pytest.raises(InputError):
        EyeWindow((0, 0, 0), (1, 2, 2))
    w = EyeWindow((1, 2, 3), (4, 6, 8))
    assert w.size == (3, 4, 5) and w.volume == 60


def test_resample_identity_at_32():
    g = _fixture_grid((32, 32, 32), seed=4)
    x = resample_to_cnn_input(g)
    assert x.shape == (4, 32, 32, 32) and x.dtype == np.float32
    np.testing.assert_array_equal(x[0], g.counts > 0)
    np.testing.assert_allclose(x[1:], np.moveaxis(g.colors, -1, 0) / 255.0, rtol=1e-6)


def test_resample_uniform_colour():
    counts = np.ones((3, 7, 5), dtype=int)
    colors = np.broadcast_to(np.array([51.0, 102.0, 204.0]), (3, 7, 5, 3)).copy()
    x = resample_to_cnn_input(OccupancyGrid(counts, colors, 0.1, (0, 0, 0)))
    assert np.all(x[0] == 1)
    np.testing.assert_allclose(x[1:, 0, 0, 0], [0.2, 0.4, 0.8], rtol=1e-6)
    assert np.all(x[1] == x[1, 0, 0, 0])


def test_resample_16_each_unit_appears_eight_times():
    idx = nearest_indices(16, 32)
    assert np.all(np.bincount(idx, minlength=16) == 2)
    counts = np.arange(16 ** 3).reshape(16, 16, 16) + 1
    g = OccupancyGrid(counts, np.zeros((16, 16, 16, 3)), 0.1, (0, 0, 0))
    ix = nearest_indices(16, 32)
    seen = counts[np.ix_(ix, ix, ix)]
    assert np.all(np.bincount(seen.ravel())[1:] == 8)
    assert resample_to_cnn_input(g)[0].all()


@settings(max_examples=40, deadline=None)
@given(st.tuples(st.integers(2, 40), st.integers(2, 40), st.integers(2, 40)),
       st.integers(0, 1000))
def test_resample_preserves_occupancy_fraction(dims, seed):
    rng = np.random.default_rng(seed)
    # occupy a random slab per axis so the fraction is a product of 1-D fractions
    masks = []
    for d in dims:
        a = int(rng.integers(0, d))
        b = int(rng.integers(a + 1, d + 1))
        m = np.zeros(d, dtype=bool)
        m[a:b] = True
        masks.append(m)
    occ = masks[0][:, None, None] & masks[1][None, :, None] & masks[2][None, None, :]
    g = OccupancyGrid(occ.astype(int), np.zeros(dims + (3,)), 0.1, (0, 0, 0))
    x = resample_to_cnn_input(g)
    for axis, (m, d) in enumerate(zip(masks, dims)):
        got = np.count_nonzero(m[nearest_indices(d, 32)])
        want = m.mean() * 32
        assert abs(got - want) <= 32 / d + 1
    assert x[0].sum() == np.prod([np.count_nonzero(m[nearest_indices(d, 32)])
                                  for m, d in zip(masks, dims)])


def _brute_iou(a, b):
    ua = {u for u in itertools.product(*[range(l, h) for l, h in zip(a.lo, a.hi)])}
    ub = {u for u in itertools.product(*[range(l, h) for l, h in zip(b.lo, b.hi)])}
    return len(ua & ub) / len(ua | ub)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=6, max_size=6),
       st.lists(st.integers(0, 6), min_size=6, max_size=6))
def test_iou_matches_unit_counting(p, q):
    def box(v):
        lo = v[:3]
        return EyeWindow(lo, [l + 2 + s for l, s in zip(lo, v[3:])])
    a, b = box(p), box(q)
    assert box_iou(a, b) == pytest.approx(_brute_iou(a, b), abs=1e-12)


def test_point_file_round_trip(tmp_path):
    cloud = PointCloud(np.round(np.random.default_rng(0).uniform(0, 3, (20, 3)), 4),
                       np.random.default_rng(1).integers(0, 256, (20, 3)),
                       np.arange(20) % 4)
    path = tmp_path / "pts.txt"
    write_points(path, cloud, header="fixture")
    back = read_points(path)
    np.testing.assert_allclose(back.xyz, cloud.xyz)
    np.testing.assert_array_equal(back.rgb, cloud.rgb)
    np.testing.assert_array_equal(back.labels, cloud.labels)
    assert path.read_text().startswith("# fixture\n")


def test_point_file_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("0 0 0 1 2\n")
    with pytest.raises(InputError):
        read_points(bad)
    mixed = tmp_path / "mixed.txt"
    mixed.write_text("0 0 0 1 2 3 1\n0 0 0 1 2 3\n")
    with pytest.raises(InputError):
        read_points(mixed)


def test_grid_text_dump(tmp_path):
    g = _fixture_grid((3, 3, 3), seed=5)
    path = tmp_path / "g.grid"
    write_grid(path, g)
    lines = path.read_text().splitlines()
    assert lines[0].split()[:3] == ["3", "3", "3"]
    assert len(lines) - 1 == int(g.occupied.sum())
