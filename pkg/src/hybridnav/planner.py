"""Global planning: 8-connected A* over occupancy grids and conversion of the
resulting path into distance-spaced circular checkpoints."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from heapq import heappush, heappop

import numpy as np

from .mapgen import OccupancyGrid

SQRT2 = math.sqrt(2.0)

_ORTHO = ((1, 0), (-1, 0), (0, 1), (0, -1))
_DIAG = ((1, 1), (1, -1), (-1, 1), (-1, -1))


class InvalidEndpointError(ValueError):
    """Start or goal cell is occupied or out of bounds (distinct from no-path)."""


@dataclass(frozen=True)
class GlobalPath:
    """Ordered 8-adjacent free cells from start to goal, plus world polyline."""

    cells: list[tuple[int, int]]
    points: np.ndarray  # cell-center polyline, shape (len(cells), 2)
    length_m: float

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=float))
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)


@dataclass
class Checkpoint:
    """Circular waypoint on the global path; pays its reward at most once."""

    center: np.ndarray
    radius: float
    index: int
    visited: bool = False

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("checkpoint radius must be > 0")
        self.center = np.asarray(self.center, dtype=float)

    def contains(self, point) -> bool:
        # strict inequality: the boundary circle itself does not count
        return float(np.linalg.norm(np.asarray(point) - self.center)) < self.radius


def path_cost_cells(cells: list[tuple[int, int]]) -> float:
    """Canonical path cost in cell units: straights + sqrt(2) * diagonals."""
    straight = diag = 0
    for (x0, y0), (x1, y1) in zip(cells, cells[1:]):
        if x0 != x1 and y0 != y1:
            diag += 1
        else:
            straight += 1
    return straight + SQRT2 * diag


def astar(
    grid: OccupancyGrid,
    start_cell: tuple[int, int],
    goal_cell: tuple[int, int],
    *,
    allow_corner_cutting: bool = False,
) -> GlobalPath | None:
    """Minimal-cost 8-connected path with costs 1 (orthogonal) / sqrt(2) (diagonal).

    Euclidean heuristic; ties broken by lowest f, then lowest h, then insertion
    order, so expansions are fully deterministic. Diagonal moves through an
    occupied corner are rejected unless ``allow_corner_cutting`` is set.
    Returns None when no path exists.
    """
    for name, (cx, cy) in (("start", start_cell), ("goal", goal_cell)):
        if not grid.in_bounds(cx, cy):
            raise InvalidEndpointError(f"{name} cell {(cx, cy)} out of bounds")
        if grid.is_occupied(cx, cy):
            raise InvalidEndpointError(f"{name} cell {(cx, cy)} is occupied")

    start = (int(start_cell[0]), int(start_cell[1]))
    goal = (int(goal_cell[0]), int(goal_cell[1]))
    gx, gy = goal

    def h(cell):
        return math.hypot(cell[0] - gx, cell[1] - gy)

    occ = grid.cells
    g_score = {start: 0.0}
    came_from: dict[tuple[int, int], tuple[int, int]] = {}
    closed: set[tuple[int, int]] = set()
    counter = 0
    open_heap = [(h(start), h(start), counter, start)]

    while open_heap:
        _, _, _, current = heappop(open_heap)
        if current in closed:
            continue
        closed.add(current)
        if current == goal:
            cells = [current]
            while current in came_from:
                current = came_from[current]
                cells.append(current)
            cells.reverse()
            points = np.array([grid.cell_center(x, y) for x, y in cells])
            return GlobalPath(
                cells=cells,
                points=points,
                length_m=path_cost_cells(cells) * grid.resolution,
            )
        cx, cy = current
        g_cur = g_score[current]
        for dx, dy in _ORTHO + _DIAG:
            nx, ny = cx + dx, cy + dy
            if not (0 <= nx < grid.width and 0 <= ny < grid.height):
                continue
            if occ[ny, nx]:
                continue
            diagonal = dx != 0 and dy != 0
            if diagonal and not allow_corner_cutting:
                # both orthogonal cells must be free to slip through
                if occ[cy, nx] or occ[ny, cx]:
                    continue
            neighbor = (nx, ny)
            if neighbor in closed:
                continue
            tentative = g_cur + (SQRT2 if diagonal else 1.0)
            if neighbor in g_score and tentative >= g_score[neighbor]:
                continue
            g_score[neighbor] = tentative
            came_from[neighbor] = current
            hn = h(neighbor)
            counter += 1
            heappush(open_heap, (tentative + hn, hn, counter, neighbor))
    return None


def place_checkpoints(
    path: GlobalPath, spacing_d: float, radius: float
) -> list[Checkpoint]:
    """Interpolate checkpoint centers at arc lengths D, 2D, ... along the path.

    Placement stops when the remaining arc length is shorter than D; a short
    path yields an empty list. Centers lie exactly on the cell-center polyline.
    """
    if spacing_d <= 0:
        raise ValueError("spacing_d must be > 0")
    if radius <= 0:
        raise ValueError("radius must be > 0")
    pts = path.points
    if len(pts) < 2:
        return []
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cumulative = np.concatenate([[0.0], np.cumsum(seg)])
    total = float(cumulative[-1])
    checkpoints: list[Checkpoint] = []
    k = 0
    while True:
        s = (k + 1) * spacing_d
        if s > total + 1e-9:
            break
        s = min(s, total)
        i = int(np.searchsorted(cumulative, s, side="right") - 1)
        i = min(i, len(seg) - 1)
        frac = 0.0 if seg[i] == 0 else (s - cumulative[i]) / seg[i]
        center = pts[i] + frac * (pts[i + 1] - pts[i])
        checkpoints.append(Checkpoint(center=center, radius=radius, index=k))
        k += 1
    return checkpoints


def select_checkpoints(
    checkpoints: list[Checkpoint],
    last_visited_index: int,
    k: int,
    robot_pos=None,
    strategy: str = "sequential",
) -> list[Checkpoint]:
    """Pick the K checkpoints the policy should look at next.

    ``sequential`` starts right after the last visited index m; ``nearest_first``
    starts at the unvisited checkpoint (index > m) closest to the robot. When
    fewer than K remain the final checkpoint is repeated to keep the feature
    width fixed.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if last_visited_index < -1:
        raise ValueError("last_visited_index must be >= -1")
    if not checkpoints:
        raise ValueError("checkpoint list is empty")
    n = len(checkpoints)
    m = last_visited_index
    if m >= n - 1:
        return [checkpoints[-1]] * k
    if strategy == "sequential":
        s = m + 1
    elif strategy == "nearest_first":
        if robot_pos is None:
            raise ValueError("nearest_first selection needs the robot position")
        pos = np.asarray(robot_pos, dtype=float)
        best, s = math.inf, m + 1
        for i in range(m + 1, n):
            d = float(np.linalg.norm(checkpoints[i].center - pos))
            if d < best:
                best, s = d, i
    else:
        raise ValueError(f"unknown selection strategy {strategy!r}")
    selected = checkpoints[s : s + k]
    while len(selected) < k:
        selected.append(selected[-1])
    return selected


# --- text I/O ---------------------------------------------------------------


def save_path(path: GlobalPath, file) -> None:
    """One `x y` world-coordinate pair per line."""
    with open(file, "w") as fh:
        for x, y in path.points:
            fh.write(f"{float(x)!r} {float(y)!r}\n")


def load_path_points(file) -> np.ndarray:
    with open(file) as fh:
        rows = [[float(v) for v in line.split()] for line in fh if line.strip()]
    return np.array(rows)


def save_checkpoints(checkpoints: list[Checkpoint], file) -> None:
    """One `x y radius` row per checkpoint."""
    with open(file, "w") as fh:
        for cp in checkpoints:
            fh.write(
                f"{float(cp.center[0])!r} {float(cp.center[1])!r} {float(cp.radius)!r}\n"
            )


def load_checkpoints(file) -> list[Checkpoint]:
    out = []
    with open(file) as fh:
        for i, line in enumerate(ln for ln in fh if ln.strip()):
            x, y, r = (float(v) for v in line.split())
            out.append(Checkpoint(center=np.array([x, y]), radius=r, index=i))
    return out
