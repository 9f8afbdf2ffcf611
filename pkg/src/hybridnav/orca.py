"""Reciprocal collision avoidance solver.

Each neighbor induces a half-plane of permitted velocities; the agent picks
the permitted velocity closest to its preferred one via an incremental 2D
linear program over the max-speed disc. When the constraints are jointly
infeasible, a projected LP minimizes the largest violation instead (the
usual dense-crowd fallback), keeping hard obstacle constraints intact.

Internals run on plain floats: this sits in the per-agent per-step hot loop
and small-vector numpy overhead dominates otherwise.
"""

from __future__ import annotations

import math
from typing import NamedTuple

EPS = 1e-10


class HalfPlane(NamedTuple):
    """Directed line through (px, py) along unit (dx, dy); permitted
    velocities lie on its left side."""

    px: float
    py: float
    dx: float
    dy: float

    def violation(self, vx: float, vy: float) -> float:
        """Signed distance by which (vx, vy) sits on the forbidden side."""
        return self.dx * (self.py - vy) - self.dy * (self.px - vx)


def avoidance_constraint(
    rel_px: float,
    rel_py: float,
    rel_vx: float,
    rel_vy: float,
    combined_radius: float,
    vx: float,
    vy: float,
    time_horizon: float,
    dt: float,
    responsibility: float = 0.5,
) -> HalfPlane:
    """Half-plane induced by one neighbor.

    (rel_px, rel_py) points from the agent to the neighbor; (rel_vx, rel_vy)
    is agent velocity minus neighbor velocity; (vx, vy) is the agent's current
    velocity. ``responsibility`` is the share of the correction this agent
    takes: 0.5 for reciprocating agents, 1.0 for immovable obstacles.
    """
    dist_sq = rel_px * rel_px + rel_py * rel_py
    radius_sq = combined_radius * combined_radius

    if dist_sq > radius_sq:
        inv_t = 1.0 / time_horizon
        wx = rel_vx - inv_t * rel_px
        wy = rel_vy - inv_t * rel_py
        w_len_sq = wx * wx + wy * wy
        dot1 = wx * rel_px + wy * rel_py
        if dot1 < 0.0 and dot1 * dot1 > radius_sq * w_len_sq:
            # closest point on the truncation disc of the velocity-obstacle cone
            w_len = math.sqrt(w_len_sq)
            if w_len > EPS:
                uwx, uwy = wx / w_len, wy / w_len
            else:
                uwx, uwy = _fallback_unit(rel_px, rel_py)
            dir_x, dir_y = uwy, -uwx
            scale = combined_radius * inv_t - w_len
            ux, uy = scale * uwx, scale * uwy
        else:
            # closest point on one of the cone legs
            leg = math.sqrt(dist_sq - radius_sq)
            if rel_px * wy - rel_py * wx > 0.0:
                dir_x = (rel_px * leg - rel_py * combined_radius) / dist_sq
                dir_y = (rel_px * combined_radius + rel_py * leg) / dist_sq
            else:
                dir_x = -(rel_px * leg + rel_py * combined_radius) / dist_sq
                dir_y = -(-rel_px * combined_radius + rel_py * leg) / dist_sq
            dot2 = rel_vx * dir_x + rel_vy * dir_y
            ux = dot2 * dir_x - rel_vx
            uy = dot2 * dir_y - rel_vy
    else:
        # already overlapping: push apart within one simulation step
        inv_dt = 1.0 / dt
        wx = rel_vx - inv_dt * rel_px
        wy = rel_vy - inv_dt * rel_py
        w_len = math.sqrt(wx * wx + wy * wy)
        if w_len > EPS:
            uwx, uwy = wx / w_len, wy / w_len
        else:
            uwx, uwy = _fallback_unit(rel_px, rel_py)
        dir_x, dir_y = uwy, -uwx
        scale = combined_radius * inv_dt - w_len
        ux, uy = scale * uwx, scale * uwy

    return HalfPlane(
        vx + responsibility * ux, vy + responsibility * uy, dir_x, dir_y
    )


def _fallback_unit(rel_px: float, rel_py: float) -> tuple[float, float]:
    norm = math.hypot(rel_px, rel_py)
    if norm > EPS:
        return -rel_px / norm, -rel_py / norm
    return 1.0, 0.0


def _solve_on_line(lines, line_no, radius, opt_x, opt_y, direction_opt):
    """1D optimum on line ``line_no`` inside the speed disc and lines < line_no."""
    px, py, dx, dy = lines[line_no]
    dot = px * dx + py * dy
    discriminant = dot * dot + radius * radius - (px * px + py * py)
    if discriminant < 0.0:
        return None  # speed disc misses the line entirely
    sqrt_disc = math.sqrt(discriminant)
    t_left = -dot - sqrt_disc
    t_right = -dot + sqrt_disc

    for i in range(line_no):
        opx, opy, odx, ody = lines[i]
        denom = dx * ody - dy * odx
        numer = odx * (py - opy) - ody * (px - opx)
        if abs(denom) <= EPS:
            if numer < 0.0:
                return None  # parallel and fully excluded
            continue
        t = numer / denom
        if denom >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return None

    if direction_opt:
        t = t_right if opt_x * dx + opt_y * dy > 0.0 else t_left
    else:
        t = dx * (opt_x - px) + dy * (opt_y - py)
        t = min(max(t, t_left), t_right)
    return px + t * dx, py + t * dy


def _solve_2d(lines, radius, opt_x, opt_y, direction_opt):
    """Incremental 2D LP. Returns (index of first failing line or len(lines), vx, vy)."""
    if direction_opt:
        rx, ry = opt_x * radius, opt_y * radius
    else:
        opt_sq = opt_x * opt_x + opt_y * opt_y
        if opt_sq > radius * radius:
            norm = math.sqrt(opt_sq)
            rx, ry = opt_x / norm * radius, opt_y / norm * radius
        else:
            rx, ry = opt_x, opt_y

    for i, (px, py, dx, dy) in enumerate(lines):
        if dx * (py - ry) - dy * (px - rx) > 0.0:
            solved = _solve_on_line(lines, i, radius, opt_x, opt_y, direction_opt)
            if solved is None:
                return i, rx, ry
            rx, ry = solved
    return len(lines), rx, ry


def _solve_fallback(lines, n_obstacle_lines, begin_line, radius, rx, ry):
    """Minimize the maximum violation over agent lines, honoring obstacle lines."""
    distance = 0.0
    for i in range(begin_line, len(lines)):
        px, py, dx, dy = lines[i]
        if dx * (py - ry) - dy * (px - rx) <= distance:
            continue
        proj = list(lines[:n_obstacle_lines])
        for j in range(n_obstacle_lines, i):
            opx, opy, odx, ody = lines[j]
            determinant = dx * ody - dy * odx
            if abs(determinant) <= EPS:
                if dx * odx + dy * ody > 0.0:
                    continue  # same direction: redundant
                npx, npy = 0.5 * (px + opx), 0.5 * (py + opy)
            else:
                t = (odx * (py - opy) - ody * (px - opx)) / determinant
                npx, npy = px + t * dx, py + t * dy
            ndx, ndy = odx - dx, ody - dy
            norm = math.hypot(ndx, ndy)
            proj.append(HalfPlane(npx, npy, ndx / norm, ndy / norm))
        fail, cx, cy = _solve_2d(proj, radius, -dy, dx, True)
        if fail == len(proj):
            rx, ry = cx, cy
        # else keep previous result: candidate failed numerically
        distance = dx * (py - ry) - dy * (px - rx)
    return rx, ry


def solve_velocity(
    lines: list[HalfPlane],
    n_obstacle_lines: int,
    max_speed: float,
    pref_vx: float,
    pref_vy: float,
) -> tuple[float, float]:
    """Velocity closest to the preferred velocity under all constraints.

    Falls back to violation minimization when the agent lines are infeasible.
    """
    fail, rx, ry = _solve_2d(lines, max_speed, pref_vx, pref_vy, False)
    if fail < len(lines):
        rx, ry = _solve_fallback(lines, n_obstacle_lines, fail, max_speed, rx, ry)
    return rx, ry
