import numpy as np
import pytest

from cubefield.errors import BinvoxFormatError, DataError
from cubefield.intervals import Box3, Interval
from cubefield.voxels import (DESK_SHAPES, VoxelGrid, cell_index, cell_lower_corners,
                              desk_dataset, downsample, gen_shape, grid_cells,
                              load_binvox, resample, sample_point, save_binvox,
                              upsample)


def test_grid_cells_n1_is_unit_cube():
    (cell,) = grid_cells(1)
    assert np.allclose(cell.lo, 0.0) and np.allclose(cell.hi, 1.0)


def test_grid_cells_n2_first_cell():
    cells = grid_cells(2)
    assert len(cells) == 8
    assert np.allclose(cells[0].lo, 0.0)
    assert np.allclose(cells[0].hi, 0.5)


def test_grid_cells_rejects_zero():
    with pytest.raises(DataError):
        grid_cells(0)


def test_grid_cells_tile_unit_cube():
    for n in (1, 2, 3, 5):
        cells = grid_cells(n)
        volumes = [np.prod(c.hi - c.lo) for c in cells]
        assert abs(sum(volumes) - 1.0) < 1e-12
        # interiors disjoint: lower corners are all distinct lattice points
        corners = {tuple(np.round(c.lo * n).astype(int)) for c in cells}
        assert len(corners) == n ** 3


def test_indexing_bijection_exhaustive():
    for n in range(1, 9):
        cells = grid_cells(n)
        for x in range(n):
            for y in range(n):
                for z in range(n):
                    k = cell_index(n, x, y, z)
                    assert np.allclose(cells[k].lo, [x / n, y / n, z / n])
        lows = cell_lower_corners(n, np.arange(n ** 3))
        assert np.allclose(lows, [c.lo for c in cells])


def test_dense_roundtrip_matches_flat_order():
    rng = np.random.default_rng(0)
    for n in (1, 2, 4):
        occ = (rng.uniform(size=n ** 3) < 0.5).astype(np.uint8)
        grid = VoxelGrid(n, occ)
        dense = grid.dense()
        for x in range(n):
            for y in range(n):
                for z in range(n):
                    assert dense[x, y, z] == occ[cell_index(n, x, y, z)]
        assert np.array_equal(VoxelGrid.from_dense(dense).occupancy, occ)


def test_sample_point_stays_in_cube():
    rng = np.random.default_rng(1)
    cube = Box3(Interval(0.25, 0.375), Interval(0.5, 0.625), Interval(0.0, 0.125))
    for _ in range(500):
        p = sample_point(cube, rng)
        assert cube.contains(p)


def test_sample_point_mean_near_center():
    rng = np.random.default_rng(2)
    cube = Box3(Interval(0.25, 0.375), Interval(0.5, 0.625), Interval(0.0, 0.125))
    pts = np.array([sample_point(cube, rng) for _ in range(100_000)])
    # 5 sigma for a uniform on width 1/8: sigma = (1/8)/sqrt(12)/sqrt(N)
    tol = 5 * (0.125 / np.sqrt(12)) / np.sqrt(len(pts))
    assert np.max(np.abs(pts.mean(axis=0) - cube.center)) < max(tol, 0.01)


def test_sample_point_degenerate_cube():
    rng = np.random.default_rng(3)
    cube = Box3(Interval(0.5, 0.5), Interval(0.25, 0.25), Interval(0.75, 0.75))
    assert np.array_equal(sample_point(cube, rng), [0.5, 0.25, 0.75])


# ---- binvox ------------------------------------------------------------------


def _write_binvox_bytes(tmp_path, dim_line, payload):
    path = tmp_path / "t.binvox"
    path.write_bytes(b"#binvox 1\n" + dim_line + b"translate 0 0 0\nscale 1\ndata\n" + payload)
    return path


def test_load_binvox_all_occupied(tmp_path):
    path = _write_binvox_bytes(tmp_path, b"dim 2 2 2\n", bytes([1, 8]))
    grid = load_binvox(path)
    assert grid.n == 2
    assert grid.count == 8


def test_load_binvox_rle_semantics(tmp_path):
    path = _write_binvox_bytes(tmp_path, b"dim 2 2 2\n", bytes([0, 4, 1, 4]))
    grid = load_binvox(path)
    assert np.array_equal(grid.occupancy, [0, 0, 0, 0, 1, 1, 1, 1])


def test_load_binvox_bad_magic(tmp_path):
    path = tmp_path / "bad.binvox"
    path.write_bytes(b"#notvox 1\ndim 2 2 2\ndata\n" + bytes([1, 8]))
    with pytest.raises(BinvoxFormatError) as exc:
        load_binvox(path)
    assert exc.value.reason == "bad-magic"


def test_load_binvox_truncated_rle(tmp_path):
    path = _write_binvox_bytes(tmp_path, b"dim 2 2 2\n", bytes([1, 4, 0]))
    with pytest.raises(BinvoxFormatError) as exc:
        load_binvox(path)
    assert exc.value.reason == "truncated-rle"


def test_load_binvox_count_mismatch(tmp_path):
    for payload in (bytes([1, 7]), bytes([1, 9])):
        path = _write_binvox_bytes(tmp_path, b"dim 2 2 2\n", payload)
        with pytest.raises(BinvoxFormatError) as exc:
            load_binvox(path)
        assert exc.value.reason == "count-mismatch"


def test_load_binvox_non_cubic(tmp_path):
    path = _write_binvox_bytes(tmp_path, b"dim 2 2 3\n", bytes([1, 12]))
    with pytest.raises(BinvoxFormatError) as exc:
        load_binvox(path)
    assert exc.value.reason == "non-cubic"


def test_save_binvox_empty_grid_single_run(tmp_path):
    grid = VoxelGrid(4, np.zeros(64, dtype=np.uint8))
    path = tmp_path / "e.binvox"
    save_binvox(grid, path)
    payload = path.read_bytes().split(b"data\n", 1)[1]
    assert payload == bytes([0, 64])


def test_save_binvox_splits_runs_at_255(tmp_path):
    n = 7  # 343 cells: 300 ones then 43 zeros
    occ = np.zeros(343, dtype=np.uint8)
    occ[:300] = 1
    path = tmp_path / "s.binvox"
    save_binvox(VoxelGrid(n, occ), path)
    payload = path.read_bytes().split(b"data\n", 1)[1]
    assert payload == bytes([1, 255, 1, 45, 0, 43])


def test_save_binvox_rle_size_bound(tmp_path):
    rng = np.random.default_rng(4)
    grid = VoxelGrid(4, (rng.uniform(size=64) < 0.5).astype(np.uint8))
    path = tmp_path / "b.binvox"
    save_binvox(grid, path)
    payload = path.read_bytes().split(b"data\n", 1)[1]
    assert len(payload) <= 128


def test_binvox_roundtrip_procedural(tmp_path):
    for i, (name, kind, params) in enumerate(DESK_SHAPES):
        grid = gen_shape(kind, 16, params)
        p1 = tmp_path / f"{i}.binvox"
        p2 = tmp_path / f"{i}_again.binvox"
        save_binvox(grid, p1)
        loaded = load_binvox(p1)
        assert np.array_equal(loaded.occupancy, grid.occupancy)
        save_binvox(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()


# ---- procedural shapes ---------------------------------------------------------


def test_gen_sphere_volume():
    grid = gen_shape("sphere", 32, {"center": (0.5, 0.5, 0.5), "radius": 0.3})
    expected = (4 / 3) * np.pi * 0.3 ** 3 * 32 ** 3
    assert abs(grid.count - expected) / expected < 0.05


def test_gen_box_exact_cell_aligned():
    grid = gen_shape("box", 16, {"lo": (0.25, 0.25, 0.25), "hi": (0.75, 0.75, 0.75)})
    assert grid.count == 8 ** 3


def test_gen_two_spheres_is_union():
    p = {"center1": (0.3, 0.3, 0.3), "radius1": 0.15,
         "center2": (0.7, 0.7, 0.7), "radius2": 0.12}
    union = gen_shape("two_spheres", 24, p)
    a = gen_shape("sphere", 24, {"center": p["center1"], "radius": p["radius1"]})
    b = gen_shape("sphere", 24, {"center": p["center2"], "radius": p["radius2"]})
    assert np.array_equal(union.occupancy, np.maximum(a.occupancy, b.occupancy))


def test_gen_shape_accepts_spec_alias():
    assert np.array_equal(gen_shape("union-of-two-spheres", 16).occupancy,
                          gen_shape("two_spheres", 16).occupancy)


def test_gen_shape_rejects_out_of_cube():
    with pytest.raises(DataError):
        gen_shape("sphere", 16, {"center": (0.9, 0.5, 0.5), "radius": 0.3})
    with pytest.raises(DataError):
        gen_shape("box", 16, {"lo": (-0.1, 0.2, 0.2), "hi": (0.8, 0.8, 0.8)})


def test_gen_shape_rejects_small_n():
    with pytest.raises(DataError):
        gen_shape("sphere", 3)


def test_gen_torus_and_frame_nontrivial():
    torus = gen_shape("torus", 32)
    frame = gen_shape("frame", 32)
    for grid in (torus, frame):
        assert 0 < grid.count < 32 ** 3


def test_desk_dataset_has_eight_shapes():
    data = desk_dataset(16)
    assert len(data) == 8
    names = [name for name, _ in data]
    assert len(set(names)) == 8
    assert all(g.n == 16 for _, g in data)


# ---- resolution changes ----------------------------------------------------------


def test_downsample_all_ones():
    grid = VoxelGrid(8, np.ones(512, dtype=np.uint8))
    for k in (1, 2, 4):
        assert downsample(grid, k).count == (8 // k) ** 3


def test_downsample_identity():
    rng = np.random.default_rng(5)
    grid = VoxelGrid(8, (rng.uniform(size=512) < 0.5).astype(np.uint8))
    assert downsample(grid, 1) is grid


def test_downsample_tie_rounds_to_occupied():
    dense = np.zeros((2, 2, 2), dtype=np.uint8)
    dense[0, 0, 0] = dense[0, 0, 1] = dense[0, 1, 0] = dense[1, 0, 0] = 1  # 4 of 8
    grid = VoxelGrid.from_dense(dense)
    assert downsample(grid, 2).count == 1


def test_downsample_majority_below_half_is_empty():
    dense = np.zeros((2, 2, 2), dtype=np.uint8)
    dense[0, 0, 0] = dense[0, 0, 1] = dense[0, 1, 0] = 1  # 3 of 8
    assert downsample(VoxelGrid.from_dense(dense), 2).count == 0


def test_downsample_rejects_bad_factor():
    grid = VoxelGrid(8, np.zeros(512, dtype=np.uint8))
    with pytest.raises(DataError):
        downsample(grid, 3)


def test_upsample_then_downsample_is_identity():
    rng = np.random.default_rng(6)
    grid = VoxelGrid(4, (rng.uniform(size=64) < 0.5).astype(np.uint8))
    assert np.array_equal(downsample(upsample(grid, 3), 3).occupancy, grid.occupancy)


def test_resample_dispatch():
    grid = gen_shape("sphere", 16)
    assert resample(grid, 16) is grid
    assert resample(grid, 32).n == 32
    assert resample(grid, 8).n == 8
    with pytest.raises(DataError):
        resample(grid, 24)
