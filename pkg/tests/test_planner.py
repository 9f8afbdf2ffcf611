"""Planner tests: A* against an independent Dijkstra oracle, heuristic
admissibility, checkpoint placement geometry and selection strategies."""

import heapq
import math

import numpy as np
import pytest

from hybridnav.mapgen import OccupancyGrid
from hybridnav.planner import (
    Checkpoint,
    GlobalPath,
    InvalidEndpointError,
    astar,
    load_checkpoints,
    load_path_points,
    path_cost_cells,
    place_checkpoints,
    save_checkpoints,
    save_path,
    select_checkpoints,
)

SQRT2 = math.sqrt(2.0)


def make_grid(cells, resolution=1.0):
    cells = np.asarray(cells, dtype=bool)
    return OccupancyGrid(
        width=cells.shape[1],
        height=cells.shape[0],
        resolution=resolution,
        origin=(0.0, 0.0),
        cells=cells,
    )


def dijkstra_cost(grid, start, goal, allow_corner_cutting=False):
    """Independent oracle: uniform-cost search with the same edge rules.

    Returns the canonical cost (straights + sqrt2 * diagonals) of an optimal
    path, or None. Written without reference to the A* implementation.
    """
    occ = grid.cells
    w, h = grid.width, grid.height
    dist = {start: (0.0, 0, 0)}  # accumulated, straights, diagonals
    heap = [(0.0, 0, start)]
    counter = 0
    done = set()
    while heap:
        d, _, cell = heapq.heappop(heap)
        if cell in done:
            continue
        done.add(cell)
        if cell == goal:
            _, ns, nd = dist[cell]
            return ns + SQRT2 * nd
        x, y = cell
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                nx, ny = x + dx, y + dy
                if not (0 <= nx < w and 0 <= ny < h) or occ[ny, nx]:
                    continue
                diagonal = dx != 0 and dy != 0
                if diagonal and not allow_corner_cutting:
                    if occ[y, nx] or occ[ny, x]:
                        continue
                nd = d + (SQRT2 if diagonal else 1.0)
                if (nx, ny) not in dist or nd < dist[(nx, ny)][0]:
                    _, s_cnt, d_cnt = dist[cell]
                    dist[(nx, ny)] = (
                        nd,
                        s_cnt + (0 if diagonal else 1),
                        d_cnt + (1 if diagonal else 0),
                    )
                    counter += 1
                    heapq.heappush(heap, (nd, counter, (nx, ny)))
    return None


def dijkstra_from(grid, source):
    """True geodesic cost from `source` to every reachable cell (oracle)."""
    occ = grid.cells
    w, h = grid.width, grid.height
    dist = {source: 0.0}
    heap = [(0.0, source)]
    done = set()
    while heap:
        d, cell = heapq.heappop(heap)
        if cell in done:
            continue
        done.add(cell)
        x, y = cell
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                nx, ny = x + dx, y + dy
                if not (0 <= nx < w and 0 <= ny < h) or occ[ny, nx]:
                    continue
                if dx != 0 and dy != 0 and (occ[y, nx] or occ[ny, x]):
                    continue
                nd = d + (SQRT2 if dx != 0 and dy != 0 else 1.0)
                if (nx, ny) not in dist or nd < dist[(nx, ny)]:
                    dist[(nx, ny)] = nd
                    heapq.heappush(heap, (nd, (nx, ny)))
    return dist


# --- astar ---


def test_straight_line_cost():
    grid = make_grid(np.zeros((10, 10), dtype=bool))
    path = astar(grid, (0, 0), (0, 9))
    assert path is not None
    assert path_cost_cells(path.cells) == 9.0
    assert path.length_m == 9.0
    assert path.cells[0] == (0, 0) and path.cells[-1] == (0, 9)


def test_start_equals_goal():
    grid = make_grid(np.zeros((5, 5), dtype=bool))
    path = astar(grid, (2, 2), (2, 2))
    assert path.cells == [(2, 2)]
    assert path.length_m == 0.0


def test_invalid_endpoints_are_distinct_from_no_path():
    cells = np.zeros((5, 5), dtype=bool)
    cells[2, 2] = True
    grid = make_grid(cells)
    with pytest.raises(InvalidEndpointError):
        astar(grid, (2, 2), (0, 0))
    with pytest.raises(InvalidEndpointError):
        astar(grid, (0, 0), (9, 9))
    # a genuine no-path returns None instead
    walled = np.zeros((5, 5), dtype=bool)
    walled[:, 2] = True
    assert astar(make_grid(walled), (0, 0), (4, 4)) is None


def test_path_respects_adjacency_and_occupancy():
    rng = np.random.default_rng(2)
    cells = rng.random((30, 30)) < 0.25
    cells[0, 0] = cells[29, 29] = False
    grid = make_grid(cells)
    path = astar(grid, (0, 0), (29, 29))
    if path is None:
        return
    for (x0, y0), (x1, y1) in zip(path.cells, path.cells[1:]):
        assert max(abs(x1 - x0), abs(y1 - y0)) == 1
    for x, y in path.cells:
        assert not grid.is_occupied(x, y)


def test_astar_equals_dijkstra_on_random_grids():
    rng = np.random.default_rng(42)
    solvable = 0
    for _ in range(100):
        cells = rng.random((50, 50)) < 0.2
        cells[0, 0] = cells[49, 49] = False
        grid = make_grid(cells)
        path = astar(grid, (0, 0), (49, 49))
        oracle = dijkstra_cost(grid, (0, 0), (49, 49))
        if oracle is None:
            assert path is None
        else:
            solvable += 1
            assert path is not None
            assert path_cost_cells(path.cells) == oracle  # exact float equality
    assert solvable >= 60


def test_heuristic_is_admissible_against_oracle_distances():
    rng = np.random.default_rng(3)
    cells = rng.random((30, 30)) < 0.2
    cells[5, 5] = False
    grid = make_grid(cells)
    goal = (5, 5)
    true_cost = dijkstra_from(grid, goal)  # symmetric edges: cost to goal
    for (x, y), cost in true_cost.items():
        h = math.hypot(x - goal[0], y - goal[1])
        assert h <= cost + 1e-9


def test_corner_cutting_flag():
    # diagonal gap between two blocks: blocked by default, open with the flag
    cells = np.zeros((3, 3), dtype=bool)
    cells[0, 1] = True  # (x=1, y=0)
    cells[1, 0] = True  # (x=0, y=1)
    grid = make_grid(cells)
    default = astar(grid, (0, 0), (1, 1))
    literal = astar(grid, (0, 0), (1, 1), allow_corner_cutting=True)
    assert literal is not None and path_cost_cells(literal.cells) == SQRT2
    assert default is None or path_cost_cells(default.cells) > SQRT2


def test_astar_is_deterministic():
    rng = np.random.default_rng(8)
    cells = rng.random((40, 40)) < 0.2
    cells[0, 0] = cells[39, 39] = False
    grid = make_grid(cells)
    a = astar(grid, (0, 0), (39, 39))
    b = astar(grid, (0, 0), (39, 39))
    if a is None:
        assert b is None
    else:
        assert a.cells == b.cells


# --- checkpoints ---


def straight_path(length_m, resolution=1.0):
    n = int(length_m / resolution)
    cells = [(i, 0) for i in range(n + 1)]
    points = np.array([[(i + 0.5) * resolution, 0.5 * resolution] for i in range(n + 1)])
    return GlobalPath(cells=cells, points=points, length_m=float(length_m))


def test_checkpoints_on_50m_path_every_15m():
    cps = place_checkpoints(straight_path(50.0), 15.0, 5.0)
    assert [round(float(np.linalg.norm(cp.center - np.array([0.5, 0.5]))), 6) for cp in cps] == [
        15.0,
        30.0,
        45.0,
    ]
    assert [cp.index for cp in cps] == [0, 1, 2]


def test_short_path_yields_no_checkpoints():
    assert place_checkpoints(straight_path(10.0), 15.0, 5.0) == []


def test_checkpoint_centers_on_straight_45m_path():
    cps = place_checkpoints(straight_path(45.0), 15.0, 5.0)
    xs = [float(cp.center[0]) for cp in cps]
    ys = [float(cp.center[1]) for cp in cps]
    assert xs == pytest.approx([15.5, 30.5, 45.5], abs=1e-9)  # offset by cell center
    assert ys == pytest.approx([0.5, 0.5, 0.5], abs=1e-12)


def test_checkpoint_spacing_within_resolution_on_random_paths():
    rng = np.random.default_rng(9)
    for _ in range(20):
        cells = rng.random((40, 40)) < 0.15
        cells[0, 0] = cells[39, 39] = False
        grid = make_grid(cells, resolution=0.5)
        path = astar(grid, (0, 0), (39, 39))
        if path is None:
            continue
        cps = place_checkpoints(path, 3.0, 1.0)
        seg = np.linalg.norm(np.diff(path.points, axis=0), axis=1)
        cumulative = np.concatenate([[0.0], np.cumsum(seg)])

        def arc_of(center):
            # project the center back onto the polyline
            best = np.inf
            best_s = 0.0
            for i in range(len(seg)):
                p0, p1 = path.points[i], path.points[i + 1]
                if seg[i] == 0:
                    continue
                t = np.clip(np.dot(center - p0, p1 - p0) / seg[i] ** 2, 0, 1)
                proj = p0 + t * (p1 - p0)
                d = np.linalg.norm(center - proj)
                if d < best:
                    best, best_s = d, cumulative[i] + t * seg[i]
            assert best < 1e-9  # centers lie on the polyline
            return best_s

        arcs = [arc_of(cp.center) for cp in cps]
        for k, s in enumerate(arcs):
            assert abs(s - (k + 1) * 3.0) <= grid.resolution + 1e-9


def make_checkpoints(n, spacing=10.0):
    return [
        Checkpoint(center=np.array([(k + 1) * spacing, 0.0]), radius=2.0, index=k)
        for k in range(n)
    ]


def test_select_initial_sequential():
    cps = make_checkpoints(5)
    sel = select_checkpoints(cps, -1, 2)
    assert [cp.index for cp in sel] == [0, 1]


def test_select_nearest_first_skips_ahead():
    cps = make_checkpoints(6)
    robot = np.array([40.0, 0.5])  # adjacent to checkpoint index 3
    sel = select_checkpoints(cps, 0, 2, robot_pos=robot, strategy="nearest_first")
    assert [cp.index for cp in sel] == [3, 4]
    assert all(cp.index > 0 for cp in sel)


def test_select_all_visited_pads_with_final():
    cps = make_checkpoints(4)
    sel = select_checkpoints(cps, 3, 3)
    assert [cp.index for cp in sel] == [3, 3, 3]


def test_select_pads_when_few_remain():
    cps = make_checkpoints(3)
    sel = select_checkpoints(cps, 1, 4)
    assert [cp.index for cp in sel] == [2, 2, 2, 2]


def test_select_sequential_ignores_robot_position():
    cps = make_checkpoints(5)
    a = select_checkpoints(cps, 1, 2, robot_pos=np.array([999.0, 0]))
    b = select_checkpoints(cps, 1, 2, robot_pos=np.array([-999.0, 0]))
    assert [c.index for c in a] == [c.index for c in b] == [2, 3]


def test_select_validates_arguments():
    with pytest.raises(ValueError):
        select_checkpoints([], 0, 2)
    with pytest.raises(ValueError):
        select_checkpoints(make_checkpoints(3), -2, 2)
    with pytest.raises(ValueError):
        select_checkpoints(make_checkpoints(3), 0, 0)


def test_checkpoint_contains_is_strict():
    cp = Checkpoint(center=np.array([0.0, 0.0]), radius=2.0, index=0)
    assert cp.contains(np.array([1.99, 0.0]))
    assert not cp.contains(np.array([2.0, 0.0]))  # boundary circle excluded


def test_path_and_checkpoint_files_round_trip(tmp_path):
    path = straight_path(45.0)
    cps = place_checkpoints(path, 15.0, 5.0)
    save_path(path, tmp_path / "p.txt")
    save_checkpoints(cps, tmp_path / "c.txt")
    pts = load_path_points(tmp_path / "p.txt")
    assert np.array_equal(pts, path.points)
    loaded = load_checkpoints(tmp_path / "c.txt")
    assert len(loaded) == len(cps)
    for a, b in zip(loaded, cps):
        assert np.array_equal(a.center, b.center)
        assert a.radius == b.radius
