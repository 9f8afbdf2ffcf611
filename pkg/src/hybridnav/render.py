"""Static episode renderer: deterministic SVG with the map, the global path,
checkpoint circles and the robot/agent trajectory."""

from __future__ import annotations

from .crowd import EntityType
from .mapgen import OccupancyGrid
from .planner import Checkpoint, GlobalPath

OCCUPIED_COLOR = "#9a9a9a"
PATH_COLOR = "#2060c0"
CHECKPOINT_COLOR = "#2a9d2a"
ROBOT_COLOR = "#111111"
TYPE_COLORS = {
    EntityType.ADULT: "#e08020",
    EntityType.BICYCLE: "#7040c0",
    EntityType.CHILD: "#d03060",
    EntityType.OBSTACLE: "#606060",
}
TYPE_LABELS = {
    EntityType.ADULT: "adults",
    EntityType.BICYCLE: "bicycles",
    EntityType.CHILD: "children",
    EntityType.OBSTACLE: "obstacles",
}


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class _Canvas:
    def __init__(self, grid: OccupancyGrid, scale: float):
        self.scale = scale
        self.ox, self.oy = grid.origin
        self.world_h = grid.world_height
        self.width = grid.world_width * scale
        self.height = grid.world_height * scale

    def x(self, wx: float) -> str:
        return _fmt((wx - self.ox) * self.scale)

    def y(self, wy: float) -> str:
        return _fmt((self.world_h - (wy - self.oy)) * self.scale)

    def d(self, meters: float) -> str:
        return _fmt(meters * self.scale)


def render_episode(
    trajectory,
    grid: OccupancyGrid,
    path: GlobalPath | None,
    checkpoints: list[Checkpoint] | None,
    out_path,
    *,
    scale: float = 20.0,
    agent_stride: int = 4,
) -> None:
    """Write an SVG snapshot; identical inputs produce identical bytes.

    Occupied cells are gray, the global path is a polyline, checkpoints are
    dashed circles, agent discs are drawn every ``agent_stride`` steps colored
    by type, and the robot leaves a trace with start/end discs.
    """
    c = _Canvas(grid, scale)
    parts: list[str] = []
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(c.width)}" '
        f'height="{_fmt(c.height)}" viewBox="0 0 {_fmt(c.width)} {_fmt(c.height)}">'
    )
    parts.append(
        f'<rect x="0" y="0" width="{_fmt(c.width)}" height="{_fmt(c.height)}" fill="#ffffff"/>'
    )

    # occupied cells, merged into horizontal run rectangles
    res = grid.resolution
    for gy in range(grid.height):
        row = grid.cells[gy]
        x = 0
        while x < grid.width:
            if not row[x]:
                x += 1
                continue
            x0 = x
            while x < grid.width and row[x]:
                x += 1
            wx = c.ox + x0 * res
            wy = c.oy + (gy + 1) * res  # top edge of the run in world coords
            parts.append(
                f'<rect x="{c.x(wx)}" y="{c.y(wy)}" width="{c.d((x - x0) * res)}" '
                f'height="{c.d(res)}" fill="{OCCUPIED_COLOR}"/>'
            )

    if path is not None and len(path.points) > 1:
        pts = " ".join(f"{c.x(px)},{c.y(py)}" for px, py in path.points)
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{PATH_COLOR}" stroke-width="2"/>'
        )

    for cp in checkpoints or []:
        parts.append(
            f'<circle cx="{c.x(cp.center[0])}" cy="{c.y(cp.center[1])}" '
            f'r="{c.d(cp.radius)}" fill="none" stroke="{CHECKPOINT_COLOR}" '
            f'stroke-width="1.5" stroke-dasharray="6,4"/>'
        )

    seen_ids: dict[EntityType, set] = {}
    if trajectory:
        for rec in trajectory:
            for aid, etype, *_ in rec.agents:
                seen_ids.setdefault(etype, set()).add(aid)
        for rec in trajectory:
            if rec.step % agent_stride and rec is not trajectory[-1]:
                continue
            for aid, etype, ax, ay, _, _, ar in rec.agents:
                parts.append(
                    f'<circle cx="{c.x(ax)}" cy="{c.y(ay)}" r="{c.d(ar)}" '
                    f'fill="{TYPE_COLORS[etype]}" fill-opacity="0.35"/>'
                )
        trace = " ".join(f"{c.x(r.robot_x)},{c.y(r.robot_y)}" for r in trajectory)
        parts.append(
            f'<polyline points="{trace}" fill="none" stroke="{ROBOT_COLOR}" stroke-width="1.5"/>'
        )
        for rec, opacity in ((trajectory[0], "0.5"), (trajectory[-1], "1.0")):
            parts.append(
                f'<circle cx="{c.x(rec.robot_x)}" cy="{c.y(rec.robot_y)}" '
                f'r="{c.d(rec.robot_radius)}" fill="{ROBOT_COLOR}" '
                f'fill-opacity="{opacity}"/>'
            )

    legend_y = 16
    for etype in (EntityType.ADULT, EntityType.BICYCLE, EntityType.CHILD, EntityType.OBSTACLE):
        ids = seen_ids.get(etype)
        if not ids:
            continue
        parts.append(
            f'<text x="6" y="{legend_y}" font-family="monospace" font-size="12" '
            f'fill="{TYPE_COLORS[etype]}">{TYPE_LABELS[etype]}: {len(ids)}</text>'
        )
        legend_y += 14

    parts.append("</svg>")
    with open(out_path, "w") as fh:
        fh.write("\n".join(parts))
        fh.write("\n")
