"""Occupancy-grid construction: semantic collapse, inflation, procedural
urban maps and start/goal episode sampling.

Grids are immutable value objects; every generator is a pure function of
its inputs and an explicit seed.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np


class GenerationError(RuntimeError):
    """Raised when the procedural generator cannot hit its occupancy target."""


class SamplingExhaustedError(RuntimeError):
    """Raised when no valid start/goal pair is found within the retry budget."""


@dataclass(frozen=True)
class OccupancyGrid:
    """Binary traversability raster.

    ``cells[y, x]`` is True for occupied. ``origin`` is the world position of
    the outer corner of cell (0, 0); cell centers sit at
    ``origin + (i + 0.5) * resolution``.
    """

    width: int
    height: int
    resolution: float
    origin: tuple[float, float]
    cells: np.ndarray

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError(f"resolution must be > 0, got {self.resolution}")
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be >= 1")
        if self.cells.shape != (self.height, self.width):
            raise ValueError(
                f"cells shape {self.cells.shape} != (height, width) "
                f"({self.height}, {self.width})"
            )
        cells = np.ascontiguousarray(self.cells.astype(bool))
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def world_width(self) -> float:
        return self.width * self.resolution

    @property
    def world_height(self) -> float:
        return self.height * self.resolution

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def is_occupied(self, x: int, y: int) -> bool:
        return bool(self.cells[y, x])

    def cell_center(self, x: int, y: int) -> np.ndarray:
        ox, oy = self.origin
        return np.array(
            [ox + (x + 0.5) * self.resolution, oy + (y + 0.5) * self.resolution]
        )

    def cell_of(self, point) -> tuple[int, int]:
        ox, oy = self.origin
        cx = int(math.floor((point[0] - ox) / self.resolution))
        cy = int(math.floor((point[1] - oy) / self.resolution))
        return cx, cy

    def occupied_fraction(self) -> float:
        return float(self.cells.sum()) / (self.width * self.height)

    @cached_property
    def occupied_centers(self) -> np.ndarray:
        """World centers of all occupied cells, shape (M, 2)."""
        ys, xs = np.nonzero(self.cells)
        ox, oy = self.origin
        out = np.column_stack(
            [ox + (xs + 0.5) * self.resolution, oy + (ys + 0.5) * self.resolution]
        )
        out.setflags(write=False)
        return out

    @cached_property
    def boundary_centers(self) -> np.ndarray:
        """World centers of occupied cells that touch free space (or the edge)."""
        occ = self.cells
        padded = np.pad(occ, 1, constant_values=False)
        interior = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
        boundary = occ & ~interior
        ys, xs = np.nonzero(boundary)
        ox, oy = self.origin
        out = np.column_stack(
            [ox + (xs + 0.5) * self.resolution, oy + (ys + 0.5) * self.resolution]
        )
        out.setflags(write=False)
        return out

    @cached_property
    def free_labels(self) -> np.ndarray:
        """8-connected component label per free cell (-1 on occupied cells)."""
        labels = np.full((self.height, self.width), -1, dtype=np.int32)
        occ = self.cells
        next_label = 0
        for sy in range(self.height):
            for sx in range(self.width):
                if occ[sy, sx] or labels[sy, sx] >= 0:
                    continue
                queue = deque([(sx, sy)])
                labels[sy, sx] = next_label
                while queue:
                    x, y = queue.popleft()
                    for dx in (-1, 0, 1):
                        for dy in (-1, 0, 1):
                            nx, ny = x + dx, y + dy
                            if (
                                0 <= nx < self.width
                                and 0 <= ny < self.height
                                and not occ[ny, nx]
                                and labels[ny, nx] < 0
                            ):
                                labels[ny, nx] = next_label
                                queue.append((nx, ny))
                next_label += 1
        labels.setflags(write=False)
        return labels

    @cached_property
    def occupied_component_labels(self) -> np.ndarray:
        """8-connected component id per occupied cell (aligned with occupied_centers)."""
        labels = np.full((self.height, self.width), -1, dtype=np.int32)
        occ = self.cells
        next_label = 0
        for sy in range(self.height):
            for sx in range(self.width):
                if not occ[sy, sx] or labels[sy, sx] >= 0:
                    continue
                queue = deque([(sx, sy)])
                labels[sy, sx] = next_label
                while queue:
                    x, y = queue.popleft()
                    for dx in (-1, 0, 1):
                        for dy in (-1, 0, 1):
                            nx, ny = x + dx, y + dy
                            if (
                                0 <= nx < self.width
                                and 0 <= ny < self.height
                                and occ[ny, nx]
                                and labels[ny, nx] < 0
                            ):
                                labels[ny, nx] = next_label
                                queue.append((nx, ny))
                next_label += 1
        ys, xs = np.nonzero(occ)
        out = labels[ys, xs].copy()
        out.setflags(write=False)
        return out


@dataclass(frozen=True)
class SemanticRaster:
    """Class-id raster plus a class -> {occupied, free} table."""

    width: int
    height: int
    resolution: float
    origin: tuple[float, float]
    cells: np.ndarray  # integer class ids, shape (height, width)
    class_table: dict[int, bool] = field(default_factory=dict)  # True = occupied

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("raster dimensions must be >= 1")
        cells = np.ascontiguousarray(self.cells.astype(np.int64))
        if cells.shape != (self.height, self.width):
            raise ValueError("cells shape does not match (height, width)")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)


@dataclass(frozen=True)
class EpisodeSpec:
    """A navigation problem: grid plus world-frame start/goal and an RNG seed."""

    grid: OccupancyGrid
    start: np.ndarray
    goal: np.ndarray
    seed: int


def collapse_semantics(raster: SemanticRaster) -> OccupancyGrid:
    """Collapse a semantic raster into a binary occupancy grid via its class table."""
    present = np.unique(raster.cells)
    unknown = [int(c) for c in present if int(c) not in raster.class_table]
    if unknown:
        raise ValueError(f"class ids missing from class table: {unknown}")
    occupied_ids = np.array(
        [cid for cid, occ in raster.class_table.items() if occ], dtype=np.int64
    )
    cells = np.isin(raster.cells, occupied_ids)
    return OccupancyGrid(
        width=raster.width,
        height=raster.height,
        resolution=raster.resolution,
        origin=raster.origin,
        cells=cells,
    )


def inflate(grid: OccupancyGrid, radius_cells: int) -> OccupancyGrid:
    """Dilate occupied cells with a square (Chebyshev) structuring element.

    A cell is occupied in the output iff any input occupied cell lies within
    Chebyshev distance ``radius_cells``. Matches a square robot footprint.
    """
    if radius_cells < 0:
        raise ValueError("radius_cells must be >= 0")
    if radius_cells == 0:
        return grid
    occ = grid.cells
    horiz = occ.copy()
    for d in range(1, radius_cells + 1):
        horiz[:, d:] |= occ[:, :-d]
        horiz[:, :-d] |= occ[:, d:]
    out = horiz.copy()
    for d in range(1, radius_cells + 1):
        out[d:, :] |= horiz[:-d, :]
        out[:-d, :] |= horiz[d:, :]
    return OccupancyGrid(
        width=grid.width,
        height=grid.height,
        resolution=grid.resolution,
        origin=grid.origin,
        cells=out,
    )


def generate_urban_map(
    width: int,
    height: int,
    obstacle_fraction_target: float,
    seed: int,
    *,
    resolution: float = 0.1,
    origin: tuple[float, float] = (0.0, 0.0),
    min_building: int = 3,
    max_building: int | None = None,
    corridor_cells: int = 3,
    max_attempts: int = 20000,
) -> OccupancyGrid:
    """Place axis-aligned rectangular buildings separated by free corridors.

    Deterministic for a fixed seed. The achieved occupied fraction lands
    within +-0.05 of the target; free space stays connected because every
    building keeps a clear corridor margin around it.
    """
    if not 0.0 <= obstacle_fraction_target < 1.0:
        raise ValueError("obstacle_fraction_target must be in [0, 1)")
    total = width * height
    target_cells = int(round(obstacle_fraction_target * total))
    occ = np.zeros((height, width), dtype=bool)
    if target_cells == 0:
        return OccupancyGrid(width, height, resolution, origin, occ)

    rng = np.random.default_rng(seed)
    if max_building is None:
        max_building = max(min_building + 1, min(width, height) // 5)
    occupied = 0
    low_slack = max(1, int(0.01 * total))
    high_slack = max(2, int(0.02 * total))
    attempts = 0
    while occupied < target_cells - low_slack and attempts < max_attempts:
        attempts += 1
        bw = int(rng.integers(min_building, max_building + 1))
        bh = int(rng.integers(min_building, max_building + 1))
        if bw >= width - 2 or bh >= height - 2:
            continue
        x0 = int(rng.integers(1, width - bw))
        y0 = int(rng.integers(1, height - bh))
        if occupied + bw * bh > target_cells + high_slack:
            continue
        # corridor margin keeps free space connected around each building
        mx0 = max(0, x0 - corridor_cells)
        my0 = max(0, y0 - corridor_cells)
        mx1 = min(width, x0 + bw + corridor_cells)
        my1 = min(height, y0 + bh + corridor_cells)
        if occ[my0:my1, mx0:mx1].any():
            continue
        occ[y0 : y0 + bh, x0 : x0 + bw] = True
        occupied += bw * bh

    fraction = occupied / total
    if abs(fraction - obstacle_fraction_target) > 0.05:
        raise GenerationError(
            f"could not reach occupied fraction {obstacle_fraction_target:.3f} "
            f"(achieved {fraction:.3f} after {attempts} attempts)"
        )
    grid = OccupancyGrid(width, height, resolution, origin, occ)
    labels = grid.free_labels
    free = labels >= 0
    if free.any():
        counts = np.bincount(labels[free].ravel())
        if counts.max() < 0.5 * free.sum():
            raise GenerationError("free space fragmented beyond the 50% component bound")
    return grid


def sample_episode(
    grid: OccupancyGrid,
    footprint_cells: int,
    min_goal_fraction: float,
    seed: int,
    *,
    max_attempts: int = 200,
) -> EpisodeSpec:
    """Rejection-sample a start/goal pair with a guaranteed path.

    Start and goal cells are drawn from the free space of the grid inflated by
    half the footprint, must be at least ``min_goal_fraction`` of the larger
    world dimension apart, and must share a free connected component (which is
    exactly path existence for 8-connected search).
    """
    rng = np.random.default_rng(seed)
    inflated = inflate(grid, footprint_cells // 2)
    labels = inflated.free_labels
    free_ys, free_xs = np.nonzero(labels >= 0)
    if free_xs.size < 2:
        raise SamplingExhaustedError("grid has no usable free space for the footprint")
    min_dist = min_goal_fraction * max(grid.world_width, grid.world_height)
    for _ in range(max_attempts):
        i, j = rng.integers(0, free_xs.size, size=2)
        sx, sy = int(free_xs[i]), int(free_ys[i])
        gx, gy = int(free_xs[j]), int(free_ys[j])
        start = grid.cell_center(sx, sy)
        goal = grid.cell_center(gx, gy)
        if float(np.linalg.norm(goal - start)) < min_dist:
            continue
        if labels[sy, sx] != labels[gy, gx]:
            continue
        return EpisodeSpec(grid=grid, start=start, goal=goal, seed=seed)
    raise SamplingExhaustedError(
        f"no valid start/goal pair within {max_attempts} attempts"
    )


def build_episode_dataset(
    count: int,
    seed: int,
    *,
    width: int,
    height: int,
    resolution: float,
    obstacle_fraction: float,
    footprint_cells: int,
    min_goal_fraction: float,
    min_occupied_fraction: float = 0.05,
    pairs_per_map: int = 3,
    corridor_cells: int = 3,
) -> list[EpisodeSpec]:
    """Generate maps and sample up to ``pairs_per_map`` episodes from each.

    Maps whose occupied fraction falls below ``min_occupied_fraction`` are
    skipped, as are maps where sampling fails entirely.
    """
    episodes: list[EpisodeSpec] = []
    map_index = 0
    while len(episodes) < count:
        map_seed = derive_seed(seed, 0xA11CE, map_index)
        map_index += 1
        if map_index > 50 * max(count, 1):
            raise GenerationError("episode dataset generation stalled")
        try:
            grid = generate_urban_map(
                width,
                height,
                obstacle_fraction,
                map_seed,
                resolution=resolution,
                corridor_cells=corridor_cells,
            )
        except GenerationError:
            continue
        if grid.occupied_fraction() < min_occupied_fraction:
            continue
        for k in range(pairs_per_map):
            if len(episodes) >= count:
                break
            try:
                spec = sample_episode(
                    grid,
                    footprint_cells,
                    min_goal_fraction,
                    derive_seed(seed, 0xEB15, map_index, k),
                )
            except SamplingExhaustedError:
                break
            episodes.append(spec)
    return episodes


def derive_seed(*key: int) -> int:
    """Stable 64-bit seed from a tuple of integers."""
    words = np.random.SeedSequence(list(key)).generate_state(2, dtype=np.uint32)
    return int(words[0]) << 32 | int(words[1])


def distance_to_obstacles(
    grid: OccupancyGrid, points: np.ndarray, cap: float | None = None
) -> np.ndarray | float:
    """Exact distance from world point(s) to the nearest occupied cell rectangle.

    Returns +inf where the grid has no occupied cells. ``points`` may be a
    single (2,) point (scalar result) or an (N, 2) batch. When ``cap`` is
    given, distances are clipped at ``cap`` and far-away cells are skipped,
    which keeps the candidate set small on large grids.
    """
    arr = np.asarray(points, dtype=float)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    centers = grid.occupied_centers
    half = grid.resolution / 2.0
    if cap is not None and centers.shape[0] > 0:
        lo = pts.min(axis=0) - (cap + half)
        hi = pts.max(axis=0) + (cap + half)
        keep = (
            (centers[:, 0] >= lo[0])
            & (centers[:, 0] <= hi[0])
            & (centers[:, 1] >= lo[1])
            & (centers[:, 1] <= hi[1])
        )
        centers = centers[keep]
    if centers.shape[0] == 0:
        out = np.full(pts.shape[0], np.inf if cap is None else cap)
        return float(out[0]) if single else out
    dx = np.abs(pts[:, None, 0] - centers[None, :, 0]) - half
    dy = np.abs(pts[:, None, 1] - centers[None, :, 1]) - half
    np.maximum(dx, 0.0, out=dx)
    np.maximum(dy, 0.0, out=dy)
    d = np.sqrt(dx * dx + dy * dy).min(axis=1)
    if cap is not None:
        np.minimum(d, cap, out=d)
    return float(d[0]) if single else d


# --- text I/O ---------------------------------------------------------------

OCC_CHAR = "#"
FREE_CHAR = "."


def save_grid(grid: OccupancyGrid, path) -> None:
    """Write the plain-text grid format (bit-exact round trip)."""
    with open(path, "w") as fh:
        ox, oy = grid.origin
        fh.write(
            f"occupancy {grid.width} {grid.height} {float(grid.resolution)!r} "
            f"{float(ox)!r} {float(oy)!r}\n"
        )
        for y in range(grid.height):
            row = grid.cells[y]
            fh.write("".join(OCC_CHAR if c else FREE_CHAR for c in row))
            fh.write("\n")


def load_grid(path) -> OccupancyGrid:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 6 or header[0] != "occupancy":
            raise ValueError(f"bad occupancy grid header in {path}")
        width, height = int(header[1]), int(header[2])
        resolution = float(header[3])
        origin = (float(header[4]), float(header[5]))
        cells = np.zeros((height, width), dtype=bool)
        for y in range(height):
            line = fh.readline().rstrip("\n")
            if len(line) != width:
                raise ValueError(f"row {y} has length {len(line)}, expected {width}")
            cells[y] = [c == OCC_CHAR for c in line]
    return OccupancyGrid(width, height, resolution, origin, cells)


def save_raster(raster: SemanticRaster, path, table_path) -> None:
    """Write a semantic raster plus its sidecar class table."""
    with open(path, "w") as fh:
        ox, oy = raster.origin
        fh.write(
            f"semantic {raster.width} {raster.height} {float(raster.resolution)!r} "
            f"{float(ox)!r} {float(oy)!r}\n"
        )
        for y in range(raster.height):
            fh.write(" ".join(str(int(v)) for v in raster.cells[y]))
            fh.write("\n")
    with open(table_path, "w") as fh:
        for cid in sorted(raster.class_table):
            fh.write(f"{cid} {'occupied' if raster.class_table[cid] else 'free'}\n")


def save_episode_manifest(episodes: list[EpisodeSpec], out_dir) -> str:
    """Write episode specs plus their (deduplicated) grids under a directory.

    Returns the manifest path. Each manifest line is
    `<grid_file> <start_x> <start_y> <goal_x> <goal_y> <seed>` with the grid
    file relative to the manifest.
    """
    import os

    os.makedirs(os.path.join(out_dir, "maps"), exist_ok=True)
    grid_files: dict[int, str] = {}
    manifest = os.path.join(out_dir, "episodes.txt")
    with open(manifest, "w") as fh:
        for spec in episodes:
            key = id(spec.grid)
            if key not in grid_files:
                name = f"maps/map_{len(grid_files):04d}.txt"
                save_grid(spec.grid, os.path.join(out_dir, name))
                grid_files[key] = name
            fh.write(
                f"{grid_files[key]} {float(spec.start[0])!r} {float(spec.start[1])!r} "
                f"{float(spec.goal[0])!r} {float(spec.goal[1])!r} {spec.seed}\n"
            )
    return manifest


def load_episode_manifest(manifest_path) -> list[EpisodeSpec]:
    import os

    base = os.path.dirname(os.path.abspath(manifest_path))
    grids: dict[str, OccupancyGrid] = {}
    episodes = []
    with open(manifest_path) as fh:
        for line in fh:
            if not line.strip():
                continue
            name, sx, sy, gx, gy, seed = line.split()
            if name not in grids:
                grids[name] = load_grid(os.path.join(base, name))
            episodes.append(
                EpisodeSpec(
                    grid=grids[name],
                    start=np.array([float(sx), float(sy)]),
                    goal=np.array([float(gx), float(gy)]),
                    seed=int(seed),
                )
            )
    return episodes


def load_raster(path, table_path) -> SemanticRaster:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 6 or header[0] != "semantic":
            raise ValueError(f"bad semantic raster header in {path}")
        width, height = int(header[1]), int(header[2])
        resolution = float(header[3])
        origin = (float(header[4]), float(header[5]))
        cells = np.zeros((height, width), dtype=np.int64)
        for y in range(height):
            cells[y] = [int(v) for v in fh.readline().split()]
    table: dict[int, bool] = {}
    with open(table_path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cid_s, kind = line.split()
            if kind not in ("occupied", "free"):
                raise ValueError(f"bad class table entry: {line!r}")
            table[int(cid_s)] = kind == "occupied"
    return SemanticRaster(width, height, resolution, origin, cells, table)
