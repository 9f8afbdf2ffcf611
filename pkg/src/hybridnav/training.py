"""Training pipeline: imitation warm start from collision-avoidance
demonstrations, epsilon-greedy one-step-lookahead action selection,
experience replay, parallel episode waves on frozen weight snapshots, and
periodic target-network sync."""

from __future__ import annotations

import math
import multiprocessing
import os
from collections import deque
from dataclasses import dataclass, field, fields, replace
from typing import Callable, NamedTuple

import numpy as np

from .crowd import (
    EntityState,
    EntityType,
    OrcaParams,
    SpawnConfig,
    orca_velocity,
    spawn_wave,
    step_crowd,
)
from .dynamics import Action, JointState, RobotState, build_action_space, step_robot
from .features import (
    assemble_network_input,
    fallback_entity,
    obstacle_entities,
)
from .mapgen import (
    EpisodeSpec,
    build_episode_dataset,
    derive_seed,
    distance_to_obstacles,
    inflate,
)
from .neural import INFER, TRAIN, ValueNet, backward_sgd, set_mode
from .planner import Checkpoint, astar, place_checkpoints, select_checkpoints
from .reward import RewardConfig, StepOutcome, total_reward


# --- configuration -----------------------------------------------------------


@dataclass
class TrainConfig:
    gamma: float = 0.99
    lr_il: float = 0.01
    epochs_il: int = 200
    demos_il: int = 3000
    lr_rl: float = 0.001
    batch_size: int = 100
    eps_start: float = 0.5
    eps_end: float = 0.05
    eps_decay_episodes: int = 25000
    episodes: int = 60000
    workers: int = 1
    target_update_interval: int = 1000
    replay_capacity: int = 100000
    validate_interval: int = 1024
    validation_episodes: int = 500
    scale_updates_with_workers: bool = True  # False reproduces one update per wave


@dataclass
class EnvConfig:
    map_width: int = 200
    map_height: int = 200
    resolution: float = 0.1
    obstacle_fraction: float = 0.15
    corridor_cells: int = 3
    min_occupied_fraction: float = 0.05
    pairs_per_map: int = 3
    footprint_cells: int = 6
    min_goal_fraction: float = 0.75
    robot_radius: float = 0.3
    v_pref: float = 1.0
    spacing_d: float = 15.0
    checkpoint_radius: float = 5.0
    k_checkpoints: int = 2
    checkpoint_strategy: str = "sequential"
    sensor_range: float = 10.0
    max_obstacle_entities: int = 4
    distance_substeps: int = 4
    obstacle_distance_cap: float = 2.0
    invisible_robot: bool = True
    orca: OrcaParams = field(default_factory=OrcaParams)


@dataclass
class RunConfig:
    """Everything one training or evaluation run needs."""

    train: TrainConfig = field(default_factory=TrainConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    spawn: SpawnConfig = field(default_factory=SpawnConfig)

    @classmethod
    def paper_scale(cls) -> "RunConfig":
        return cls()

    @classmethod
    def desk_preset(cls) -> "RunConfig":
        """Small maps, three crossing agents, a short training run."""
        cfg = cls()
        cfg.env = EnvConfig(
            map_width=60,
            map_height=60,
            resolution=0.4,
            obstacle_fraction=0.12,
            corridor_cells=4,
            footprint_cells=2,
            robot_radius=0.3,
            v_pref=1.0,
            spacing_d=6.0,
            checkpoint_radius=2.0,
            sensor_range=6.0,
            max_obstacle_entities=2,
            obstacle_distance_cap=1.5,
            orca=OrcaParams(
                neighbor_dist=6.0, obstacle_range=2.0, max_obstacle_constraints=24
            ),
        )
        cfg.reward = RewardConfig(t_pref=30.0, t_max=50.0)
        cfg.spawn = replace(
            SpawnConfig(),
            square_width=12.0,
            counts={EntityType.ADULT: 1, EntityType.BICYCLE: 1, EntityType.CHILD: 1},
        )
        cfg.train = TrainConfig(
            epochs_il=50,
            demos_il=200,
            episodes=3000,
            eps_decay_episodes=1000,
            target_update_interval=500,
            validate_interval=750,
            validation_episodes=50,
            workers=2,
        )
        return cfg

    def apply_overrides(self, overrides: dict) -> "RunConfig":
        """Set flat `key=value` overrides onto the right sub-config."""
        from .reward import reward_config_from_mapping, reward_config_to_mapping

        reward_keys = set(reward_config_to_mapping(self.reward))
        reward_overrides = {}
        for key, raw in overrides.items():
            if key in reward_keys:
                reward_overrides[key] = raw
            elif _set_field(self.train, key, raw):
                pass
            elif _set_field(self.env, key, raw):
                pass
            elif key.startswith("orca_") and _set_dataclass_field(
                self.env, "orca", key[5:], raw
            ):
                pass
            elif key.startswith("spawn_") and self._set_spawn(key[6:], raw):
                pass
            else:
                raise ValueError(f"unknown config key: {key}")
        if reward_overrides:
            merged = reward_config_to_mapping(self.reward)
            merged.update(reward_overrides)
            self.reward = reward_config_from_mapping(merged)
        return self

    def _set_spawn(self, key: str, raw) -> bool:
        simple = {f.name for f in fields(SpawnConfig)}
        counts_keys = {
            "adults": EntityType.ADULT,
            "bicycles": EntityType.BICYCLE,
            "children": EntityType.CHILD,
        }
        if key in counts_keys:
            counts = dict(self.spawn.counts)
            counts[counts_keys[key]] = int(raw)
            self.spawn = replace(self.spawn, counts=counts)
            return True
        if key in simple:
            value = _coerce(getattr(self.spawn, key), raw)
            self.spawn = replace(self.spawn, **{key: value})
            return True
        return False

    def to_mapping(self) -> dict:
        from .reward import reward_config_to_mapping

        out = dict(reward_config_to_mapping(self.reward))
        for f in fields(TrainConfig):
            out[f.name] = getattr(self.train, f.name)
        for f in fields(EnvConfig):
            if f.name == "orca":
                continue
            out[f.name] = getattr(self.env, f.name)
        for f in fields(OrcaParams):
            out[f"orca_{f.name}"] = getattr(self.env.orca, f.name)
        out["spawn_interval_steps"] = self.spawn.interval_steps
        out["spawn_lifetime_steps"] = self.spawn.lifetime_steps
        out["spawn_square_width"] = self.spawn.square_width
        out["spawn_adults"] = self.spawn.counts.get(EntityType.ADULT, 0)
        out["spawn_bicycles"] = self.spawn.counts.get(EntityType.BICYCLE, 0)
        out["spawn_children"] = self.spawn.counts.get(EntityType.CHILD, 0)
        return out


def _coerce(current, raw):
    if isinstance(current, bool):
        if isinstance(raw, bool):
            return raw
        return str(raw).strip().lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return type(current)(raw) if current is not None else raw


def _set_field(obj, key: str, raw) -> bool:
    for f in fields(obj):
        if f.name == key:
            setattr(obj, key, _coerce(getattr(obj, key), raw))
            return True
    return False


def _set_dataclass_field(owner, attr: str, key: str, raw) -> bool:
    obj = getattr(owner, attr)
    for f in fields(obj):
        if f.name == key:
            setattr(owner, attr, replace(obj, **{key: _coerce(getattr(obj, key), raw)}))
            return True
    return False


def epsilon_at(episode: int, cfg: TrainConfig) -> float:
    """Linear decay from eps_start to eps_end over eps_decay_episodes, then flat."""
    if episode >= cfg.eps_decay_episodes:
        return cfg.eps_end
    frac = episode / cfg.eps_decay_episodes
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac


# --- experiences and replay ----------------------------------------------------


class Experience(NamedTuple):
    self_state: np.ndarray
    rows: np.ndarray
    target: float


class ReplayMemory:
    """Bounded FIFO buffer with uniform without-replacement minibatch sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._buffer: deque[Experience] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._buffer)

    def add(self, experience: Experience) -> None:
        if not math.isfinite(experience.target):
            raise ValueError("experience target must be finite")
        self._buffer.append(experience)

    def extend(self, experiences) -> None:
        for e in experiences:
            self.add(e)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Experience]:
        size = min(batch_size, len(self._buffer))
        idx = rng.choice(len(self._buffer), size=size, replace=False)
        return [self._buffer[int(i)] for i in idx]


# --- episode execution ---------------------------------------------------------


@dataclass
class StepRecord:
    step: int
    time: float
    robot_x: float
    robot_y: float
    robot_vx: float
    robot_vy: float
    robot_theta: float
    robot_radius: float
    agents: list  # (agent_id, EntityType, x, y, vx, vy, radius)


@dataclass
class EpisodeSummary:
    status: str  # success | collision | timeout | aborted
    collision_type: EntityType | None
    duration: float
    steps: int
    total_reward: float
    checkpoints_total: int
    checkpoints_visited: int

    @property
    def label(self) -> str:
        if self.status == "collision" and self.collision_type is not None:
            return f"collision({self.collision_type.letter})"
        return self.status


@dataclass
class EpisodeRollout:
    summary: EpisodeSummary
    experiences: list[Experience]
    trajectory: list[StepRecord]
    states: list  # (self_state, rows) per step, pre-action
    rewards: list[float]


def _record(step: int, t: float, robot: RobotState, agents) -> StepRecord:
    return StepRecord(
        step=step,
        time=t,
        robot_x=float(robot.position[0]),
        robot_y=float(robot.position[1]),
        robot_vx=float(robot.velocity[0]),
        robot_vy=float(robot.velocity[1]),
        robot_theta=robot.theta,
        robot_radius=robot.radius,
        agents=[
            (
                a.agent_id,
                a.entity_type,
                float(a.position[0]),
                float(a.position[1]),
                float(a.velocity[0]),
                float(a.velocity[1]),
                a.radius,
            )
            for a in agents
        ],
    )


def _advance_crowd(agents, robot, grid, dt, invisible, params):
    """One crowd step returning (everyone who moved, survivors).

    Expiring agents still move (and can collide) during their final step, so
    collision checks need the full moved list while the simulation keeps only
    the survivors.
    """
    if not agents:
        return [], []
    immortal = [replace(a, lifetime=math.inf) for a in agents]
    full = step_crowd(immortal, robot, grid, dt, invisible, params=params)
    survivors = [
        replace(moved, lifetime=orig.lifetime)
        for moved, orig in zip(full, agents)
        if moved.age <= orig.lifetime
    ]
    return full, survivors


def _min_type_distances(
    grid,
    robot0: RobotState,
    robot1: RobotState,
    agents0,
    agents1,
    substeps: int,
    obstacle_cap: float,
) -> dict[EntityType, float]:
    """Per-type minimum surface distance over the step interval."""
    fracs = np.arange(1, substeps + 1) / substeps
    r0, r1 = robot0.position, robot1.position
    robot_pts = r0 + fracs[:, None] * (r1 - r0)
    out: dict[EntityType, float] = {}
    if agents0:
        p0 = np.array([a.position for a in agents0])
        p1 = np.array([a.position for a in agents1])
        pts = p0[None, :, :] + fracs[:, None, None] * (p1 - p0)[None, :, :]
        d = np.linalg.norm(pts - robot_pts[:, None, :], axis=2)
        surface = d - robot0.radius - np.array([a.radius for a in agents0])[None, :]
        per_agent = surface.min(axis=0)
        for a, dist in zip(agents0, per_agent):
            t = a.entity_type
            if t not in out or dist < out[t]:
                out[t] = float(dist)
    d_obs = distance_to_obstacles(grid, robot_pts, cap=obstacle_cap + robot0.radius)
    d_obs = float(np.min(d_obs)) - robot0.radius
    if grid.occupied_centers.shape[0] > 0:
        out[EntityType.OBSTACLE] = min(
            d_obs, out.get(EntityType.OBSTACLE, math.inf)
        )
    return out


_TYPE_PRIORITY = (
    EntityType.ADULT,
    EntityType.BICYCLE,
    EntityType.CHILD,
    EntityType.OBSTACLE,
)


def compute_step_outcome(
    grid,
    robot0: RobotState,
    robot1: RobotState,
    agents0,
    agents1,
    checkpoints: list[Checkpoint],
    visited: set[int],
    t_new: float,
    is_last_step: bool,
    d_max: float,
    env: EnvConfig,
) -> StepOutcome:
    """Distances, checkpoint entry and termination flags for one step.

    ``d_max`` is the episode-start distance to the goal. Checkpoint entries
    only count for indices past the last visited one, which keeps the visited
    sequence strictly increasing.
    """
    dists = _min_type_distances(
        grid,
        robot0,
        robot1,
        agents0,
        agents1,
        env.distance_substeps,
        env.obstacle_distance_cap,
    )
    d_min, closest = math.inf, None
    for etype in _TYPE_PRIORITY:
        if etype in dists and dists[etype] < d_min:
            d_min, closest = dists[etype], etype
    d_g = robot1.dist_to_goal()
    reached = d_g <= robot1.radius
    entered = None
    m = max(visited, default=-1)
    for cp in checkpoints[m + 1 :]:
        if cp.index not in visited and cp.contains(robot1.position):
            entered = cp.index
            break
    return StepOutcome(
        d_min=d_min,
        closest_type=closest,
        reached_goal=reached,
        timed_out=is_last_step and not reached,
        entered_checkpoint=entered,
        d_g=d_g,
        d_max=max(d_max, 1e-9),
    )


class ActionContext(NamedTuple):
    """Static per-step data the lookahead needs besides the joint state."""

    grid: object
    action_space: list[Action]
    checkpoints: list[Checkpoint]
    visited: set
    t_new: float
    is_last_step: bool
    d_max: float
    gamma_bar: float
    reward_cfg: RewardConfig
    env: EnvConfig
    feature_entities: list  # entities as the network sees them (incl. fallback)


def _features_for(robot, ctx: ActionContext, visited):
    selected = _select_for_features(
        ctx.checkpoints, visited, ctx.env, robot.position, goal=robot.goal
    )
    joint = JointState(robot, ctx.feature_entities, ctx.t_new)
    return assemble_network_input(joint, selected)


def _select_for_features(checkpoints, visited, env: EnvConfig, robot_pos, goal):
    if not checkpoints:
        virtual = Checkpoint(
            center=np.asarray(goal, dtype=float),
            radius=env.checkpoint_radius,
            index=0,
        )
        return [virtual] * env.k_checkpoints
    m = max(visited, default=-1)
    return select_checkpoints(
        checkpoints,
        m,
        env.k_checkpoints,
        robot_pos=robot_pos,
        strategy=env.checkpoint_strategy,
    )


def lookahead_scores_reference(
    net: ValueNet, robot0: RobotState, agents0, ctx: ActionContext
) -> np.ndarray:
    """Per-action loop over the contract functions; the vectorized path below
    must reproduce it (checked in the tests)."""
    dt = ctx.reward_cfg.dt
    agents1 = [replace(a, position=a.position + a.velocity * dt) for a in agents0]
    moved_entities = [
        replace(e, position=e.position + e.velocity * dt) for e in ctx.feature_entities
    ]
    rewards = np.empty(len(ctx.action_space))
    self_states = []
    rows_list = []
    next_ctx = ctx._replace(feature_entities=moved_entities)
    for i, action in enumerate(ctx.action_space):
        robot1 = step_robot(robot0, action, dt)
        outcome = compute_step_outcome(
            ctx.grid,
            robot0,
            robot1,
            agents0,
            agents1,
            ctx.checkpoints,
            ctx.visited,
            ctx.t_new,
            ctx.is_last_step,
            ctx.d_max,
            ctx.env,
        )
        rewards[i] = total_reward(outcome, ctx.t_new, ctx.reward_cfg)
        visited1 = ctx.visited
        if outcome.entered_checkpoint is not None:
            visited1 = ctx.visited | {outcome.entered_checkpoint}
        self_state, rows = _features_for(robot1, next_ctx, visited1)
        self_states.append(self_state)
        rows_list.append(rows)
    values = net.forward_batch(np.stack(self_states), rows_list)
    return rewards + ctx.gamma_bar * values


def lookahead_scores(
    net: ValueNet, robot0: RobotState, agents0, ctx: ActionContext
) -> np.ndarray:
    """Vectorized one-step lookahead score for every action.

    Mirrors the contract functions operation-for-operation (same elementwise
    formulas) so it agrees with lookahead_scores_reference.
    """
    env, rcfg = ctx.env, ctx.reward_cfg
    dt = rcfg.dt
    actions = ctx.action_space
    n_a = len(actions)
    speeds = np.array([a.speed for a in actions])
    headings = np.array([a.heading for a in actions])
    vel = np.column_stack([speeds * np.cos(headings), speeds * np.sin(headings)])
    p0 = robot0.position
    p1 = p0 + vel * dt  # (A, 2)

    # --- distances over the step interval ---
    fracs = np.arange(1, env.distance_substeps + 1) / env.distance_substeps
    robot_pts = p0 + fracs[:, None, None] * (p1 - p0)[None, :, :]  # (S, A, 2)
    type_cols: list[np.ndarray] = []
    type_order: list[EntityType] = []
    if agents0:
        a_p0 = np.array([a.position for a in agents0])
        a_p1 = a_p0 + np.array([a.velocity for a in agents0]) * dt
        a_pts = a_p0[None, :, :] + fracs[:, None, None] * (a_p1 - a_p0)[None, :, :]
        diff = a_pts[:, None, :, :] - robot_pts[:, :, None, :]  # (S, A, n, 2)
        d = np.sqrt((diff * diff).sum(axis=3))
        surface = d - robot0.radius - np.array([a.radius for a in agents0])[None, None, :]
        per_agent = surface.min(axis=0)  # (A, n)
        for etype in _TYPE_PRIORITY:
            members = [i for i, a in enumerate(agents0) if a.entity_type == etype]
            if members:
                type_cols.append(per_agent[:, members].min(axis=1))
                type_order.append(etype)
    if ctx.grid.occupied_centers.shape[0] > 0:
        flat_pts = robot_pts.reshape(-1, 2)
        d_obs = distance_to_obstacles(
            ctx.grid, flat_pts, cap=env.obstacle_distance_cap + robot0.radius
        )
        d_obs = d_obs.reshape(env.distance_substeps, n_a).min(axis=0) - robot0.radius
        if EntityType.OBSTACLE in type_order:
            col = type_cols[type_order.index(EntityType.OBSTACLE)]
            type_cols[type_order.index(EntityType.OBSTACLE)] = np.minimum(col, d_obs)
        else:
            type_cols.append(d_obs)
            type_order.append(EntityType.OBSTACLE)

    if type_cols:
        stacked = np.column_stack(type_cols)  # priority-ordered columns
        closest_idx = stacked.argmin(axis=1)
        d_min = stacked[np.arange(n_a), closest_idx]
        closest_types = np.array([int(t) for t in type_order])[closest_idx]
    else:
        d_min = np.full(n_a, math.inf)
        closest_types = np.full(n_a, -1)

    # --- termination, checkpoints, reward ---
    dg_vec = robot0.goal[None, :] - p1
    d_g = np.sqrt((dg_vec * dg_vec).sum(axis=1))
    reached = d_g <= robot0.radius
    timed_out = np.logical_and(ctx.is_last_step, ~reached)

    m = max(ctx.visited, default=-1)
    entered = np.full(n_a, -1, dtype=np.int64)
    remaining = [cp for cp in ctx.checkpoints[m + 1 :] if cp.index not in ctx.visited]
    if remaining:
        centers = np.array([cp.center for cp in remaining])
        radii = np.array([cp.radius for cp in remaining])
        delta = p1[:, None, :] - centers[None, :, :]
        inside = np.sqrt((delta * delta).sum(axis=2)) < radii[None, :]
        hit = inside.any(axis=1)
        first = inside.argmax(axis=1)
        idxs = np.array([cp.index for cp in remaining])
        entered[hit] = idxs[first[hit]]

    prox = 1.0 - d_g / ctx.d_max
    collided = d_min <= 0.0
    r_time = (
        1.0
        if ctx.t_new < rcfg.t_pref
        else (
            (rcfg.t_max - ctx.t_new) / (rcfg.t_max - rcfg.t_pref)
            if ctx.t_new <= rcfg.t_max
            else 0.0
        )
    )
    coll_pen = np.zeros(n_a)
    disc = np.zeros(n_a)
    valid = closest_types >= 0
    if valid.any():
        r_coll_by_type = np.array([rcfg.r_coll[t] for t in EntityType])
        d_disc_by_type = np.array([rcfg.d_disc[t] for t in EntityType])
        p_disc_by_type = np.array([rcfg.p_disc[t] for t in EntityType])
        types = np.where(valid, closest_types, 0)
        coll_pen = r_coll_by_type[types]
        dd = d_disc_by_type[types]
        active = valid & ~collided & (d_min > 0.0) & (d_min < dd)
        disc = np.where(active, (d_min - dd) * p_disc_by_type[types] * dt, 0.0)
    terminal = np.where(
        timed_out,
        prox,
        np.where(
            collided, coll_pen + prox, np.where(reached, rcfg.r_success + r_time, 0.0)
        ),
    )
    cp_reward = np.where(entered >= 0, rcfg.r_cp, 0.0)
    rewards = terminal + cp_reward + disc

    # --- lookahead-state features ---
    phi = np.arctan2(robot0.goal[1] - p1[:, 1], robot0.goal[0] - p1[:, 0])
    c, s = np.cos(phi), np.sin(phi)
    theta_rel = np.mod(headings - phi + math.pi, 2.0 * math.pi) - math.pi
    theta_rel[theta_rel == -math.pi] = math.pi
    base = np.column_stack(
        [
            d_g,
            np.full(n_a, robot0.v_pref),
            theta_rel,
            np.full(n_a, robot0.radius),
            vel[:, 0] * c + vel[:, 1] * s,
            vel[:, 1] * c - vel[:, 0] * s,
        ]
    )

    k = env.k_checkpoints
    sel_centers = np.empty((n_a, k, 2))
    sel_radii = np.empty((n_a, k))
    sel_cache: dict[int, list[Checkpoint]] = {}
    for i in range(n_a):
        if env.checkpoint_strategy == "sequential":
            key = int(entered[i])
            sel = sel_cache.get(key)
            if sel is None:
                visited1 = ctx.visited | {key} if key >= 0 else ctx.visited
                sel = _select_for_features(
                    ctx.checkpoints, visited1, env, p1[i], robot0.goal
                )
                sel_cache[key] = sel
        else:
            visited1 = ctx.visited | {int(entered[i])} if entered[i] >= 0 else ctx.visited
            sel = _select_for_features(
                ctx.checkpoints, visited1, env, p1[i], robot0.goal
            )
        for j, cp in enumerate(sel):
            sel_centers[i, j] = cp.center
            sel_radii[i, j] = cp.radius
    cp_dx = sel_centers[:, :, 0] - p1[:, None, 0]
    cp_dy = sel_centers[:, :, 1] - p1[:, None, 1]
    cp_feats = np.stack(
        [
            np.sqrt(cp_dx * cp_dx + cp_dy * cp_dy),
            cp_dx * c[:, None] + cp_dy * s[:, None],
            cp_dy * c[:, None] - cp_dx * s[:, None],
            sel_radii,
        ],
        axis=2,
    ).reshape(n_a, 4 * k)
    self_states = np.concatenate([base, cp_feats], axis=1)

    ents = ctx.feature_entities
    n_f = len(ents)
    e_p1 = np.array([e.position for e in ents]) + np.array(
        [e.velocity for e in ents]
    ) * dt
    e_vel = np.array([e.velocity for e in ents])
    rel_x = e_p1[None, :, 0] - p1[:, None, 0]
    rel_y = e_p1[None, :, 1] - p1[:, None, 1]
    obs = np.empty((n_a, n_f, 11))
    obs[:, :, 0] = rel_x * c[:, None] + rel_y * s[:, None]
    obs[:, :, 1] = rel_y * c[:, None] - rel_x * s[:, None]
    obs[:, :, 2] = e_vel[None, :, 0] * c[:, None] + e_vel[None, :, 1] * s[:, None]
    obs[:, :, 3] = e_vel[None, :, 1] * c[:, None] - e_vel[None, :, 0] * s[:, None]
    obs[:, :, 4] = np.array([e.radius for e in ents])[None, :]
    obs[:, :, 5] = np.sqrt(rel_x * rel_x + rel_y * rel_y)
    obs[:, :, 6] = obs[:, :, 4] + robot0.radius
    obs[:, :, 7:] = 0.0
    for j, e in enumerate(ents):
        obs[:, j, 7 + _ONE_HOT_INDEX[e.entity_type]] = 1.0

    rows = np.empty((n_a, n_f, self_states.shape[1] + 11))
    rows[:, :, : self_states.shape[1]] = self_states[:, None, :]
    rows[:, :, self_states.shape[1] :] = obs
    flat = rows.reshape(n_a * n_f, -1)
    counts = np.full(n_a, n_f, dtype=np.int64)
    values = net.forward_packed(self_states, flat, counts)
    return rewards + ctx.gamma_bar * values


_ONE_HOT_INDEX = {
    EntityType.ADULT: 0,
    EntityType.BICYCLE: 1,
    EntityType.CHILD: 2,
    EntityType.OBSTACLE: 3,
}


def select_action(
    net: ValueNet,
    joint: JointState,
    selected_checkpoints,
    epsilon: float,
    rng: np.random.Generator,
    ctx: ActionContext,
    agents0,
) -> Action:
    """Epsilon-greedy one-step lookahead over the whole action space.

    Exploitation propagates the world one step per action, scores it with the
    one-step reward plus the discounted value of the lookahead state (infer
    mode), and breaks ties toward the lowest action index.
    """
    if epsilon > 0.0 and rng.uniform() < epsilon:
        return ctx.action_space[int(rng.integers(len(ctx.action_space)))]
    scores = lookahead_scores(net, joint.robot, agents0, ctx)
    return ctx.action_space[int(np.argmax(scores))]


def _orca_robot_action(robot: RobotState, agents, grid, env: EnvConfig, dt, waypoint):
    """Demonstrator: reciprocal-avoidance velocity toward the next waypoint."""
    proxy = EntityState(
        position=robot.position.copy(),
        velocity=robot.velocity.copy(),
        radius=robot.radius,
        goal=np.asarray(waypoint, dtype=float),
        v_pref=robot.v_pref,
        entity_type=EntityType.ADULT,
    )
    velocity = orca_velocity(
        proxy, list(agents), grid, dt, env.orca.time_horizon, params=env.orca
    )
    speed = float(np.linalg.norm(velocity))
    heading = math.atan2(velocity[1], velocity[0]) if speed > 1e-12 else robot.theta
    return Action(speed=min(speed, robot.v_pref), heading=heading % (2.0 * math.pi))


def run_episode(
    spec: EpisodeSpec,
    net: ValueNet | None,
    target_net: ValueNet | None,
    cfg: RunConfig,
    epsilon: float,
    seed: int,
    *,
    robot_policy: str = "value",
    collect_trajectory: bool = True,
    initial_agents: list[EntityState] | None = None,
    spawn_enabled: bool = True,
) -> EpisodeRollout:
    """Execute one full episode.

    Plans once with A* on the inflated grid, places checkpoints, then steps the
    world: feature assembly, action selection (value lookahead or the
    collision-avoidance demonstrator), synchronous crowd update, reward and
    checkpoint bookkeeping. Afterwards converts the step buffer into
    experiences with one-step bootstrapped targets from ``target_net``
    (terminal steps use the raw reward).
    """
    env, rcfg, spawn_cfg, tcfg = cfg.env, cfg.reward, cfg.spawn, cfg.train
    grid = spec.grid
    rng = np.random.default_rng(seed)
    dt = rcfg.dt

    inflated = inflate(grid, env.footprint_cells // 2)
    path = astar(inflated, grid.cell_of(spec.start), grid.cell_of(spec.goal))
    if path is None:
        summary = EpisodeSummary("aborted", None, 0.0, 0, 0.0, 0, 0)
        return EpisodeRollout(summary, [], [], [], [])
    checkpoints = place_checkpoints(path, env.spacing_d, env.checkpoint_radius)
    for cp in checkpoints:
        cp.visited = False

    goal = np.asarray(spec.goal, dtype=float)
    start = np.asarray(spec.start, dtype=float)
    theta0 = math.atan2(goal[1] - start[1], goal[0] - start[0]) % (2.0 * math.pi)
    robot = RobotState(
        position=start.copy(),
        velocity=np.zeros(2),
        radius=env.robot_radius,
        goal=goal.copy(),
        v_pref=env.v_pref,
        theta=theta0,
    )
    d_max = max(float(np.linalg.norm(goal - start)), 1e-9)
    gamma_bar = tcfg.gamma ** (dt * env.v_pref)
    action_space = build_action_space(env.v_pref)

    agents: list[EntityState] = list(initial_agents or [])
    next_agent_id = max((a.agent_id for a in agents), default=-1) + 1
    visited: set[int] = set()
    states: list[tuple[np.ndarray, np.ndarray]] = []
    rewards: list[float] = []
    trajectory: list[StepRecord] = []
    total = 0.0
    status, ctype = "timeout", None
    max_steps = max(1, int(round(rcfg.t_max / dt)))

    step = 0
    for step in range(max_steps):
        t = step * dt
        if spawn_enabled and step % spawn_cfg.interval_steps == 0:
            wave = spawn_wave(
                spawn_cfg,
                robot,
                grid,
                agents,
                derive_seed(seed, 0x5A0, step),
                id_start=next_agent_id,
            )
            agents.extend(wave)
            next_agent_id += len(wave)
        if collect_trajectory:
            trajectory.append(_record(step, t, robot, agents))

        feature_entities: list = list(agents)
        feature_entities += obstacle_entities(
            grid, robot.position, env.sensor_range, env.max_obstacle_entities
        )
        if not feature_entities:
            feature_entities = [fallback_entity(robot, env.sensor_range)]
        ctx = ActionContext(
            grid=grid,
            action_space=action_space,
            checkpoints=checkpoints,
            visited=visited,
            t_new=(step + 1) * dt,
            is_last_step=step + 1 >= max_steps,
            d_max=d_max,
            gamma_bar=gamma_bar,
            reward_cfg=rcfg,
            env=env,
            feature_entities=feature_entities,
        )
        selected = _select_for_features(checkpoints, visited, env, robot, goal)
        joint = JointState(robot, feature_entities, t)
        self_state, rows = assemble_network_input(joint, selected)
        states.append((self_state, rows))

        if robot_policy == "orca":
            m = max(visited, default=-1)
            waypoint = (
                checkpoints[m + 1].center if m + 1 < len(checkpoints) else goal
            )
            action = _orca_robot_action(robot, agents, grid, env, dt, waypoint)
        else:
            action = select_action(net, joint, selected, epsilon, rng, ctx, agents)

        new_robot = step_robot(robot, action, dt)
        moved_all, survivors = _advance_crowd(
            agents, robot, grid, dt, env.invisible_robot, env.orca
        )
        outcome = compute_step_outcome(
            grid,
            robot,
            new_robot,
            agents,
            moved_all,
            checkpoints,
            visited,
            (step + 1) * dt,
            step + 1 >= max_steps,
            d_max,
            env,
        )
        r = total_reward(outcome, (step + 1) * dt, rcfg)
        rewards.append(r)
        total += r
        if outcome.entered_checkpoint is not None:
            visited.add(outcome.entered_checkpoint)
            checkpoints[outcome.entered_checkpoint].visited = True
        robot, agents = new_robot, survivors
        if outcome.reached_goal:
            status = "success"
            break
        if outcome.collided:
            status, ctype = "collision", outcome.closest_type
            break
        if outcome.timed_out:
            status = "timeout"
            break

    steps_taken = len(rewards)
    if collect_trajectory:
        trajectory.append(_record(steps_taken, steps_taken * dt, robot, agents))

    experiences: list[Experience] = []
    if target_net is not None and states:
        set_mode(target_net, INFER)
        if steps_taken > 1:
            next_values = target_net.forward_batch(
                np.stack([s for s, _ in states[1:]]), [r for _, r in states[1:]]
            )
        else:
            next_values = np.zeros(0)
        for i in range(steps_taken):
            if i == steps_taken - 1:
                target = rewards[i]  # terminal transition: no bootstrap
            else:
                target = rewards[i] + gamma_bar * float(next_values[i])
            experiences.append(Experience(states[i][0], states[i][1], target))

    summary = EpisodeSummary(
        status=status,
        collision_type=ctype,
        duration=steps_taken * dt,
        steps=steps_taken,
        total_reward=total,
        checkpoints_total=len(checkpoints),
        checkpoints_visited=len(visited),
    )
    return EpisodeRollout(summary, experiences, trajectory, states, rewards)


def monte_carlo_targets(rewards: list[float], gamma_bar: float) -> list[float]:
    """Discounted cumulative returns, one per step."""
    out = [0.0] * len(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma_bar * acc
        out[i] = acc
    return out


# --- parallel waves ------------------------------------------------------------

_FORK_CONTEXT: dict = {}


def _limit_worker_threads():
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=1)
    except Exception:
        pass


def _wave_task(task):
    kind, pool_index, epsilon, seed = task
    ctx = _FORK_CONTEXT
    rollout = run_episode(
        ctx["pool"][pool_index],
        ctx["net"],
        ctx["target"],
        ctx["cfg"],
        epsilon,
        seed,
        robot_policy=ctx["policy"],
        collect_trajectory=kind == "eval",
    )
    return rollout


def run_wave(
    tasks: list,
    pool: list[EpisodeSpec],
    net: ValueNet | None,
    target: ValueNet | None,
    cfg: RunConfig,
    workers: int,
    *,
    policy: str = "value",
) -> list[EpisodeRollout]:
    """Run a batch of episodes on frozen nets; results keep task order.

    Uses a fork-based process pool (weights shared copy-on-write) when
    ``workers`` > 1 and the platform supports fork; otherwise runs serially.
    The merged result is independent of worker scheduling because tasks carry
    their own seeds and outputs are ordered by task index.
    """
    global _FORK_CONTEXT
    _FORK_CONTEXT = {
        "pool": pool,
        "net": net,
        "target": target,
        "cfg": cfg,
        "policy": policy,
    }
    try:
        use_fork = workers > 1 and "fork" in multiprocessing.get_all_start_methods()
        if use_fork and len(tasks) > 1:
            mp_ctx = multiprocessing.get_context("fork")
            with mp_ctx.Pool(
                processes=min(workers, len(tasks)),
                initializer=_limit_worker_threads,
            ) as proc_pool:
                return proc_pool.map(_wave_task, tasks)
        return [_wave_task(t) for t in tasks]
    finally:
        _FORK_CONTEXT = {}


# --- imitation and the main loop -------------------------------------------------


def imitation_phase(
    demo_specs: list[EpisodeSpec],
    cfg: RunConfig,
    seed: int,
    *,
    net: ValueNet | None = None,
    workers: int | None = None,
) -> tuple[ValueNet, list[Experience]]:
    """Warm start: run demonstrations under the avoidance demonstrator, label
    states with discounted Monte-Carlo returns, and regress the value net."""
    tcfg = cfg.train
    if net is None:
        net = ValueNet(cfg.env.k_checkpoints, seed=derive_seed(seed, 0x11711))
    workers = tcfg.workers if workers is None else workers
    gamma_bar = tcfg.gamma ** (cfg.reward.dt * cfg.env.v_pref)

    tasks = [
        ("demo", i, 0.0, derive_seed(seed, 0xDE30, i)) for i in range(len(demo_specs))
    ]
    rollouts = run_wave(tasks, demo_specs, None, None, cfg, workers, policy="orca")
    experiences: list[Experience] = []
    for rollout in rollouts:
        targets = monte_carlo_targets(rollout.rewards, gamma_bar)
        for (self_state, rows), target in zip(rollout.states, targets):
            experiences.append(Experience(self_state, rows, target))

    rng = np.random.default_rng(derive_seed(seed, 0x111))
    set_mode(net, TRAIN)
    for _ in range(tcfg.epochs_il):
        order = rng.permutation(len(experiences))
        for lo in range(0, len(order), tcfg.batch_size):
            batch = [experiences[int(i)] for i in order[lo : lo + tcfg.batch_size]]
            backward_sgd(net, batch, tcfg.lr_il)
    set_mode(net, INFER)
    return net, experiences


def _quick_metrics(rollouts: list[EpisodeRollout]) -> dict:
    from .evaluation import weighted_score

    n = max(1, len(rollouts))
    counts = {t: 0 for t in EntityType}
    sr = 0
    reward_sum = 0.0
    for r in rollouts:
        reward_sum += r.summary.total_reward
        if r.summary.status == "success":
            sr += 1
        elif r.summary.status == "collision":
            counts[r.summary.collision_type] += 1
    cr = {t: counts[t] / n for t in EntityType}
    sr_rate = sr / n
    return {
        "sr": sr_rate,
        "cr": sum(cr.values()),
        "cr_a": cr[EntityType.ADULT],
        "cr_b": cr[EntityType.BICYCLE],
        "cr_c": cr[EntityType.CHILD],
        "cr_o": cr[EntityType.OBSTACLE],
        "mean_reward": reward_sum / n,
        "ws": weighted_score(
            sr_rate,
            cr[EntityType.ADULT],
            cr[EntityType.BICYCLE],
            cr[EntityType.CHILD],
            cr[EntityType.OBSTACLE],
        ),
    }


def _crossed(before: int, after: int, interval: int) -> bool:
    return interval > 0 and (after // interval) > (before // interval)


def train(
    cfg: RunConfig,
    seed: int,
    *,
    pools: dict | None = None,
    out_dir=None,
    log_fn: Callable[[str], None] | None = None,
) -> tuple[ValueNet, list[dict]]:
    """Full training: imitation warm start, then waves of parallel episodes
    with minibatch updates, periodic target sync and periodic validation.

    Returns the trained net and the validation curve rows
    (episode, sr, cr, cr_a, cr_b, cr_c, cr_o, mean_reward, ws).
    """
    tcfg = cfg.train
    pools = pools or prepare_pools(cfg, seed)
    demo_pool, train_pool, val_pool = (
        pools["demo"],
        pools["train"],
        pools["val"],
    )

    net, demo_exps = imitation_phase(demo_pool, cfg, seed)
    target = net.clone()
    replay = ReplayMemory(tcfg.replay_capacity)
    replay.extend(demo_exps)

    train_rng = np.random.default_rng(derive_seed(seed, 0x7EA1))
    curves: list[dict] = []

    def validate(at_episode: int):
        tasks = [
            ("val", i % len(val_pool), 0.0, derive_seed(seed, 0xA11, i))
            for i in range(tcfg.validation_episodes)
        ]
        rollouts = run_wave(tasks, val_pool, net, None, cfg, tcfg.workers)
        row = {"episode": at_episode, **_quick_metrics(rollouts)}
        curves.append(row)
        if out_dir is not None:
            from .neural import save_weights

            save_weights(net, os.path.join(out_dir, f"weights_{at_episode:06d}.bin"))
            _append_curves_csv(curves, os.path.join(out_dir, "curves.csv"))
        if log_fn:
            log_fn(
                f"episode {at_episode}: sr={row['sr']:.3f} cr={row['cr']:.3f} "
                f"ws={row['ws']:.3f} mean_reward={row['mean_reward']:.3f}"
            )

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    episode = 0
    while episode < tcfg.episodes:
        n = min(tcfg.workers, tcfg.episodes - episode) if tcfg.workers > 0 else 1
        n = max(n, 1)
        tasks = []
        for i in range(n):
            idx = episode + i
            tasks.append(
                (
                    "train",
                    idx % len(train_pool),
                    epsilon_at(idx, tcfg),
                    derive_seed(seed, 0xE905, idx),
                )
            )
        rollouts = run_wave(tasks, train_pool, net, target, cfg, tcfg.workers)
        for rollout in rollouts:
            replay.extend(rollout.experiences)

        updates = n if tcfg.scale_updates_with_workers else 1
        set_mode(net, TRAIN)
        for _ in range(updates):
            if len(replay) >= tcfg.batch_size:
                batch = replay.sample(tcfg.batch_size, train_rng)
                backward_sgd(net, batch, tcfg.lr_rl)
        set_mode(net, INFER)

        new_episode = episode + n
        if _crossed(episode, new_episode, tcfg.target_update_interval):
            target.load_state_from(net)
        if _crossed(episode, new_episode, tcfg.validate_interval):
            validate(new_episode)
        episode = new_episode

    if not curves or curves[-1]["episode"] != episode:
        validate(episode)
    if out_dir is not None:
        from .neural import save_weights

        save_weights(net, os.path.join(out_dir, "weights_final.bin"))
    return net, curves


CURVE_COLUMNS = (
    "episode",
    "sr",
    "cr",
    "cr_a",
    "cr_b",
    "cr_c",
    "cr_o",
    "mean_reward",
    "ws",
)


def _append_curves_csv(curves: list[dict], path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(CURVE_COLUMNS) + "\n")
        for row in curves:
            fh.write(
                ",".join(repr(float(row[c]) if c != "episode" else row[c]) for c in CURVE_COLUMNS)
                + "\n"
            )


def prepare_pools(cfg: RunConfig, seed: int, *, test_episodes: int = 0) -> dict:
    """Build demo/train/validation (and optional test) episode pools."""
    env = cfg.env
    kwargs = dict(
        width=env.map_width,
        height=env.map_height,
        resolution=env.resolution,
        obstacle_fraction=env.obstacle_fraction,
        footprint_cells=env.footprint_cells,
        min_goal_fraction=env.min_goal_fraction,
        min_occupied_fraction=env.min_occupied_fraction,
        pairs_per_map=env.pairs_per_map,
        corridor_cells=env.corridor_cells,
    )
    train_count = max(1, min(cfg.train.episodes, 500))
    pools = {
        "demo": build_episode_dataset(cfg.train.demos_il, derive_seed(seed, 1), **kwargs),
        "train": build_episode_dataset(train_count, derive_seed(seed, 2), **kwargs),
        "val": build_episode_dataset(
            max(1, cfg.train.validation_episodes), derive_seed(seed, 3), **kwargs
        ),
    }
    if test_episodes:
        pools["test"] = build_episode_dataset(
            test_episodes, derive_seed(seed, 4), **kwargs
        )
    return pools
