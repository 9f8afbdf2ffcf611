"""Grid construction tests: semantic collapse, square dilation against a
brute-force oracle, the procedural generator, episode sampling, and file I/O."""

import numpy as np
import pytest

from hybridnav.mapgen import (
    EpisodeSpec,
    GenerationError,
    OccupancyGrid,
    SamplingExhaustedError,
    SemanticRaster,
    build_episode_dataset,
    collapse_semantics,
    distance_to_obstacles,
    generate_urban_map,
    inflate,
    load_episode_manifest,
    load_grid,
    load_raster,
    sample_episode,
    save_episode_manifest,
    save_grid,
    save_raster,
)
from hybridnav.planner import astar

ROAD, BUILDING = 10, 15


def make_raster(cells, table=None):
    cells = np.asarray(cells)
    return SemanticRaster(
        width=cells.shape[1],
        height=cells.shape[0],
        resolution=0.5,
        origin=(0.0, 0.0),
        cells=cells,
        class_table=table or {ROAD: False, BUILDING: True},
    )


def make_grid(cells, resolution=1.0):
    cells = np.asarray(cells, dtype=bool)
    return OccupancyGrid(
        width=cells.shape[1],
        height=cells.shape[0],
        resolution=resolution,
        origin=(0.0, 0.0),
        cells=cells,
    )


# --- collapse_semantics ---


def test_collapse_all_free():
    grid = collapse_semantics(make_raster(np.full((4, 6), ROAD)))
    assert not grid.cells.any()
    assert (grid.width, grid.height, grid.resolution) == (6, 4, 0.5)


def test_collapse_all_occupied():
    grid = collapse_semantics(make_raster(np.full((4, 6), BUILDING)))
    assert grid.cells.all()


def test_collapse_checkerboard_matches_table_lookup():
    rng = np.random.default_rng(0)
    ids = np.where((np.indices((8, 8)).sum(axis=0) % 2).astype(bool), BUILDING, ROAD)
    raster = make_raster(ids)
    grid = collapse_semantics(raster)
    for y in range(8):
        for x in range(8):
            assert grid.cells[y, x] == (raster.class_table[int(ids[y, x])])
    del rng


def test_collapse_unknown_class_names_the_id():
    raster = make_raster(np.array([[ROAD, 99]]), table={ROAD: False})
    with pytest.raises(ValueError, match="99"):
        collapse_semantics(raster)


def test_collapse_round_trip_is_idempotent():
    rng = np.random.default_rng(3)
    grid = make_grid(rng.random((10, 10)) < 0.4)
    # occupied -> occupied-class, free -> free-class, collapse again
    ids = np.where(grid.cells, BUILDING, ROAD)
    again = collapse_semantics(
        SemanticRaster(10, 10, grid.resolution, grid.origin, ids,
                       {ROAD: False, BUILDING: True})
    )
    assert np.array_equal(again.cells, grid.cells)


# --- inflate ---


def brute_force_dilate(cells: np.ndarray, r: int) -> np.ndarray:
    h, w = cells.shape
    out = np.zeros_like(cells)
    for y in range(h):
        for x in range(w):
            if not cells[y, x]:
                continue
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    if 0 <= y + dy < h and 0 <= x + dx < w:
                        out[y + dy, x + dx] = True
    return out


def test_inflate_radius_zero_is_identity():
    grid = make_grid(np.eye(5, dtype=bool))
    assert np.array_equal(inflate(grid, 0).cells, grid.cells)


def test_inflate_single_cell_becomes_square_block():
    cells = np.zeros((11, 11), dtype=bool)
    cells[5, 5] = True
    out = inflate(make_grid(cells), 2)
    expected = np.zeros((11, 11), dtype=bool)
    expected[3:8, 3:8] = True
    assert np.array_equal(out.cells, expected)


def test_inflate_matches_brute_force_on_random_grids():
    rng = np.random.default_rng(7)
    for _ in range(20):
        cells = rng.random((30, 30)) < 0.2
        grid = make_grid(cells)
        assert np.array_equal(inflate(grid, 3).cells, brute_force_dilate(cells, 3))


def test_inflate_monotone_in_radius():
    rng = np.random.default_rng(11)
    cells = rng.random((25, 25)) < 0.15
    grid = make_grid(cells)
    prev = inflate(grid, 0).cells
    for r in (1, 2, 4):
        cur = inflate(grid, r).cells
        assert (prev <= cur).all()
        prev = cur


def test_inflate_rejects_negative_radius():
    with pytest.raises(ValueError):
        inflate(make_grid(np.zeros((3, 3), dtype=bool)), -1)


# --- generate_urban_map ---


def test_generate_target_zero_is_all_free():
    grid = generate_urban_map(50, 50, 0.0, seed=1)
    assert not grid.cells.any()


def test_generate_fraction_within_tolerance_by_counting():
    grid = generate_urban_map(200, 200, 0.15, seed=1)
    fraction = grid.cells.sum() / (200 * 200)
    assert 0.10 <= fraction <= 0.20


def test_generate_is_deterministic():
    a = generate_urban_map(120, 80, 0.12, seed=9)
    b = generate_urban_map(120, 80, 0.12, seed=9)
    assert np.array_equal(a.cells, b.cells)
    assert a.origin == b.origin and a.resolution == b.resolution


def test_generate_keeps_free_space_connected():
    grid = generate_urban_map(150, 150, 0.2, seed=4)
    labels = grid.free_labels
    free = labels >= 0
    counts = np.bincount(labels[free].ravel())
    assert counts.max() >= 0.5 * free.sum()


def test_generate_unreachable_target_raises():
    # tiny grid cannot fit enough buildings under the corridor margins
    with pytest.raises(GenerationError):
        generate_urban_map(12, 12, 0.8, seed=0, max_attempts=200)


# --- sample_episode ---


def test_sample_episode_distance_threshold_on_empty_grid():
    grid = make_grid(np.zeros((100, 100), dtype=bool), resolution=1.0)
    spec = sample_episode(grid, 3, 0.75, seed=2)
    assert np.linalg.norm(spec.goal - spec.start) >= 75.0


def test_sample_episode_full_wall_exhausts():
    cells = np.zeros((10, 40), dtype=bool)
    cells[:, 20] = True  # split a short corridor map in two
    grid = make_grid(cells, resolution=1.0)
    # any pair at >= 0.9 * 40 m apart must straddle the wall, so no path exists
    with pytest.raises(SamplingExhaustedError):
        sample_episode(grid, 1, 0.9, seed=5, max_attempts=100)


def test_sampled_episode_passes_independent_astar():
    rng = np.random.default_rng(21)
    for seed in range(5):
        grid = generate_urban_map(80, 80, 0.12, seed=seed, resolution=0.5)
        spec = sample_episode(grid, 2, 0.6, seed=seed + 100)
        inflated = inflate(grid, 1)
        path = astar(inflated, grid.cell_of(spec.start), grid.cell_of(spec.goal))
        assert path is not None
    del rng


def test_dataset_filter_rejects_sparse_maps():
    episodes = build_episode_dataset(
        6,
        seed=0,
        width=70,
        height=70,
        resolution=0.5,
        obstacle_fraction=0.10,
        footprint_cells=2,
        min_goal_fraction=0.6,
        min_occupied_fraction=0.05,
    )
    assert len(episodes) == 6
    for spec in episodes:
        assert spec.grid.occupied_fraction() >= 0.05


def test_distance_to_obstacles_matches_brute_force():
    rng = np.random.default_rng(13)
    cells = rng.random((20, 20)) < 0.15
    cells[0, 0] = True
    grid = make_grid(cells, resolution=0.5)
    half = 0.25
    centers = grid.occupied_centers
    for _ in range(50):
        p = rng.uniform(0, 10, size=2)
        dx = np.maximum(np.abs(p[0] - centers[:, 0]) - half, 0)
        dy = np.maximum(np.abs(p[1] - centers[:, 1]) - half, 0)
        expected = np.sqrt(dx * dx + dy * dy).min()
        assert distance_to_obstacles(grid, p) == pytest.approx(expected, abs=1e-12)
        capped = distance_to_obstacles(grid, p, cap=1.0)
        assert capped == pytest.approx(min(expected, 1.0), abs=1e-12)


# --- file formats ---


def test_grid_file_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(17)
    grid = OccupancyGrid(
        width=23,
        height=11,
        resolution=0.1,
        origin=(-3.25, 7.5),
        cells=rng.random((11, 23)) < 0.3,
    )
    path = tmp_path / "g.txt"
    save_grid(grid, path)
    loaded = load_grid(path)
    assert np.array_equal(loaded.cells, grid.cells)
    assert loaded.resolution == grid.resolution
    assert loaded.origin == grid.origin
    # byte-for-byte stable across a second save
    save_grid(loaded, tmp_path / "g2.txt")
    assert (tmp_path / "g.txt").read_bytes() == (tmp_path / "g2.txt").read_bytes()


def test_raster_file_round_trip(tmp_path):
    raster = make_raster(np.array([[ROAD, BUILDING], [BUILDING, ROAD]]))
    save_raster(raster, tmp_path / "r.txt", tmp_path / "classes.txt")
    loaded = load_raster(tmp_path / "r.txt", tmp_path / "classes.txt")
    assert np.array_equal(loaded.cells, raster.cells)
    assert loaded.class_table == raster.class_table
    assert loaded.resolution == raster.resolution


def test_episode_manifest_round_trip(tmp_path):
    grid = generate_urban_map(40, 40, 0.1, seed=3, resolution=0.5)
    episodes = [sample_episode(grid, 2, 0.5, seed=s) for s in (1, 2)]
    save_episode_manifest(episodes, tmp_path)
    loaded = load_episode_manifest(tmp_path / "episodes.txt")
    assert len(loaded) == 2
    for a, b in zip(loaded, episodes):
        assert np.array_equal(a.start, b.start)
        assert np.array_equal(a.goal, b.goal)
        assert a.seed == b.seed
        assert np.array_equal(a.grid.cells, b.grid.cells)
    # both episodes share one grid object after loading
    assert loaded[0].grid is loaded[1].grid


def test_grid_validation_errors():
    with pytest.raises(ValueError):
        OccupancyGrid(3, 3, 0.0, (0, 0), np.zeros((3, 3), dtype=bool))
    with pytest.raises(ValueError):
        OccupancyGrid(3, 2, 0.1, (0, 0), np.zeros((3, 3), dtype=bool))
    spec = EpisodeSpec(
        grid=make_grid(np.zeros((3, 3), dtype=bool)),
        start=np.array([0.5, 0.5]),
        goal=np.array([2.5, 2.5]),
        seed=0,
    )
    assert spec.seed == 0
