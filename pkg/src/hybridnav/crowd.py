"""Dynamic agents (adults, bicycles, children) under reciprocal collision
avoidance, with periodic square-crossing spawn waves ahead of the robot and
the invisible-robot evaluation mode."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .dynamics import RobotState
from .mapgen import OccupancyGrid, distance_to_obstacles
from .orca import avoidance_constraint, solve_velocity

log = logging.getLogger(__name__)


class EntityType(IntEnum):
    ADULT = 0
    BICYCLE = 1
    CHILD = 2
    OBSTACLE = 3

    @property
    def letter(self) -> str:
        return "ABCO"[int(self)]


@dataclass
class EntityState:
    """Observable entity: dynamic agent or static obstacle point."""

    position: np.ndarray
    velocity: np.ndarray
    radius: float
    goal: np.ndarray
    v_pref: float
    entity_type: EntityType
    age: int = 0
    lifetime: float = math.inf  # steps; obstacles never expire
    agent_id: int = -1

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)
        if self.radius <= 0:
            raise ValueError("entity radius must be > 0")
        if self.entity_type == EntityType.OBSTACLE:
            if np.any(self.velocity != 0.0):
                raise ValueError("obstacle entities must have zero velocity")
            if not math.isinf(self.lifetime):
                raise ValueError("obstacle entities must have infinite lifetime")


@dataclass(frozen=True)
class SpawnConfig:
    """Recurring spawn protocol: counts per type injected in an oriented square."""

    interval_steps: int = 80
    lifetime_steps: int = 80
    square_width: float = 40.0
    counts: dict = field(
        default_factory=lambda: {
            EntityType.ADULT: 4,
            EntityType.BICYCLE: 4,
            EntityType.CHILD: 4,
        }
    )
    # (radius_lo, radius_hi, v_pref_lo, v_pref_hi) per type; ranges overlap
    # across types so type cannot be inferred from size/speed alone
    ranges: dict = field(
        default_factory=lambda: {
            EntityType.ADULT: (0.25, 0.35, 0.8, 1.4),
            EntityType.BICYCLE: (0.35, 0.5, 1.5, 3.0),
            EntityType.CHILD: (0.15, 0.25, 0.6, 1.6),
        }
    )
    max_placement_retries: int = 50

    def __post_init__(self):
        if self.interval_steps <= 0:
            raise ValueError("spawn interval must be > 0")
        types = [t for t in self.counts if t in self.ranges]
        speed_overlap = radius_overlap = False
        for i, a in enumerate(types):
            for b in types[i + 1 :]:
                ra, rb = self.ranges[a], self.ranges[b]
                if ra[2] <= rb[3] and rb[2] <= ra[3]:
                    speed_overlap = True
                if ra[0] <= rb[1] and rb[0] <= ra[1]:
                    radius_overlap = True
        if len(types) > 1 and not (speed_overlap and radius_overlap):
            raise ValueError("per-type kinematic ranges must overlap across types")


@dataclass(frozen=True)
class OrcaParams:
    neighbor_dist: float = 10.0
    time_horizon: float = 5.0
    time_horizon_obst: float = 5.0
    obstacle_range: float = 3.0  # occupied cells beyond this distance are ignored
    max_obstacle_constraints: int = 40  # nearest boundary cells kept per agent


DEFAULT_ORCA = OrcaParams()


def _obstacle_constraints(agent, grid: OccupancyGrid | None, dt: float, params: OrcaParams):
    """Disc constraints from nearby occupied boundary cells (full responsibility)."""
    if grid is None:
        return []
    centers = grid.boundary_centers
    if centers.shape[0] == 0:
        return []
    delta = centers - agent.position
    dist_sq = (delta * delta).sum(axis=1)
    (idx,) = np.nonzero(dist_sq <= params.obstacle_range**2)
    if idx.size == 0:
        return []
    if idx.size > params.max_obstacle_constraints:
        order = np.argsort(dist_sq[idx], kind="stable")
        idx = idx[order[: params.max_obstacle_constraints]]
    cell_radius = grid.resolution * math.sqrt(2.0) / 2.0
    vx, vy = float(agent.velocity[0]), float(agent.velocity[1])
    combined = agent.radius + cell_radius
    lines = []
    for i in idx:
        lines.append(
            avoidance_constraint(
                float(delta[i, 0]),
                float(delta[i, 1]),
                vx,
                vy,
                combined,
                vx,
                vy,
                params.time_horizon_obst,
                dt,
                responsibility=1.0,
            )
        )
    return lines


def orca_velocity(
    agent: EntityState,
    neighbors: list,
    static_grid: OccupancyGrid | None,
    dt: float,
    time_horizon: float,
    *,
    params: OrcaParams | None = None,
    max_speed: float | None = None,
    pref_velocity: np.ndarray | None = None,
) -> np.ndarray:
    """Collision-avoiding velocity closest to the agent's preferred velocity.

    Neighbors may be EntityState or RobotState values (anything with position,
    velocity and radius). The preferred velocity defaults to the unit vector
    toward the agent's goal scaled by v_pref.
    """
    if dt <= 0 or time_horizon <= 0:
        raise ValueError("dt and time_horizon must be > 0")
    params = params or DEFAULT_ORCA
    if max_speed is None:
        max_speed = agent.v_pref
    if pref_velocity is None:
        to_goal = agent.goal - agent.position
        dist = float(np.linalg.norm(to_goal))
        pref_velocity = to_goal / dist * agent.v_pref if dist > 1e-12 else np.zeros(2)

    ax, ay = float(agent.position[0]), float(agent.position[1])
    avx, avy = float(agent.velocity[0]), float(agent.velocity[1])
    lines = _obstacle_constraints(agent, static_grid, dt, params)
    n_obstacle = len(lines)
    range_sq = params.neighbor_dist**2
    for other in neighbors:
        rx = float(other.position[0]) - ax
        ry = float(other.position[1]) - ay
        if rx * rx + ry * ry > range_sq:
            continue
        lines.append(
            avoidance_constraint(
                rx,
                ry,
                avx - float(other.velocity[0]),
                avy - float(other.velocity[1]),
                agent.radius + other.radius,
                avx,
                avy,
                time_horizon,
                dt,
                responsibility=0.5,
            )
        )
    vx, vy = solve_velocity(
        lines, n_obstacle, max_speed, float(pref_velocity[0]), float(pref_velocity[1])
    )
    return np.array([vx, vy])


def spawn_wave(
    config: SpawnConfig,
    robot: RobotState,
    grid: OccupancyGrid | None,
    existing: list[EntityState],
    seed: int,
    *,
    id_start: int = 0,
) -> list[EntityState]:
    """Inject one wave of agents crossing an oriented square ahead of the robot.

    The square (width W) is centered W/2 ahead of the robot along its goal
    direction and yaw-aligned with it; each agent starts on one edge and aims
    at the opposite edge. Placements colliding with the robot, other agents or
    occupied cells are rejected; an agent whose retries run out is skipped.
    """
    rng = np.random.default_rng(seed)
    to_goal = robot.goal - robot.position
    norm = float(np.linalg.norm(to_goal))
    if norm > 1e-9:
        u = to_goal / norm
    else:
        u = np.array([math.cos(robot.theta), math.sin(robot.theta)])
    v = np.array([-u[1], u[0]])
    half = config.square_width / 2.0
    center = robot.position + half * u

    spawned: list[EntityState] = []
    next_id = id_start
    for etype in (EntityType.ADULT, EntityType.BICYCLE, EntityType.CHILD):
        count = config.counts.get(etype, 0)
        r_lo, r_hi, v_lo, v_hi = config.ranges[etype]
        for _ in range(count):
            radius = float(rng.uniform(r_lo, r_hi))
            v_pref = float(rng.uniform(v_lo, v_hi))
            placed = False
            for _ in range(config.max_placement_retries):
                # opposite edges of the oriented square: axis 0 = along u,
                # axis 1 = along v; side picks which end the agent starts from
                axis = int(rng.integers(0, 2))
                side = 1.0 if rng.integers(0, 2) else -1.0
                s_off = float(rng.uniform(-half, half))
                g_off = float(rng.uniform(-half, half))
                if axis == 0:
                    start = center + side * half * u + s_off * v
                    goal = center - side * half * u + g_off * v
                else:
                    start = center + side * half * v + s_off * u
                    goal = center - side * half * v + g_off * u
                if _overlaps(start, radius, robot, existing, spawned):
                    continue
                if grid is not None and (
                    distance_to_obstacles(grid, start, cap=radius + 1.0) <= radius
                    or distance_to_obstacles(grid, goal, cap=radius + 1.0) <= radius
                ):
                    continue
                spawned.append(
                    EntityState(
                        position=start,
                        velocity=np.zeros(2),
                        radius=radius,
                        goal=goal,
                        v_pref=v_pref,
                        entity_type=etype,
                        age=0,
                        lifetime=config.lifetime_steps,
                        agent_id=next_id,
                    )
                )
                next_id += 1
                placed = True
                break
            if not placed:
                log.debug("spawn skipped: no room for a %s", etype.name.lower())
    return spawned


def _overlaps(start, radius, robot, existing, spawned) -> bool:
    if float(np.linalg.norm(start - robot.position)) <= radius + robot.radius:
        return True
    for other in list(existing) + spawned:
        if float(np.linalg.norm(start - other.position)) <= radius + other.radius:
            return True
    return False


def step_crowd(
    agents: list[EntityState],
    robot: RobotState | None,
    grid: OccupancyGrid | None,
    dt: float,
    invisible_robot: bool,
    *,
    params: OrcaParams | None = None,
) -> list[EntityState]:
    """Advance every agent one step with synchronous velocity updates.

    All new velocities are computed from the previous tick's states. With
    ``invisible_robot`` the robot is excluded from every agent's neighbor set,
    so agent trajectories are independent of the robot entirely. Agents that
    arrived at their goal hold position; agents whose age exceeds their
    lifetime are removed after moving.
    """
    params = params or DEFAULT_ORCA
    survivors: list[EntityState] = []
    for i, agent in enumerate(agents):
        neighbors: list = [a for j, a in enumerate(agents) if j != i]
        if robot is not None and not invisible_robot:
            neighbors.append(robot)
        at_goal = float(np.linalg.norm(agent.goal - agent.position)) <= max(
            agent.radius, agent.v_pref * dt
        )
        if at_goal:
            velocity = np.zeros(2)
        else:
            velocity = orca_velocity(
                agent,
                neighbors,
                grid,
                dt,
                params.time_horizon,
                params=params,
            )
        survivors.append(
            replace(
                agent,
                position=agent.position + velocity * dt,
                velocity=velocity,
                age=agent.age + 1,
            )
        )
    return [a for a in survivors if a.age <= a.lifetime]
