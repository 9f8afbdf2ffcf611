"""Robot-centric feature extraction: frame rotation, checkpoint features, the
extended self-state, and the per-entity rows the value network consumes.

Layout conventions (all float64 numpy arrays):

* base self-state (6):      [d_g, v_pref, theta, r, vx, vy]
* checkpoint features (4K): [d^k, dx^k, dy^k, r_cp] per checkpoint
* extended self-state:      base ++ checkpoint features  (6 + 4K)
* entity observable (7):    [px, py, vx, vy, r_i, d_i, r_i + r]
* entity one-hot (4):       [adult, bicycle, child, obstacle]
* network row:              extended self-state ++ observable ++ one-hot

Positions are relative to the robot and rotated so +x points at the goal;
velocities are rotated only, so speeds are preserved.
"""

from __future__ import annotations

import math

import numpy as np

from .crowd import EntityState, EntityType
from .dynamics import JointState, RobotState
from .mapgen import OccupancyGrid
from .planner import Checkpoint

BASE_SELF_DIM = 6
ENTITY_OBS_DIM = 7
N_TYPES = 4
CHECKPOINT_FEATURE_DIM = 4

TYPE_ONE_HOT_ORDER = (
    EntityType.ADULT,
    EntityType.BICYCLE,
    EntityType.CHILD,
    EntityType.OBSTACLE,
)


def self_state_dim(k_checkpoints: int) -> int:
    return BASE_SELF_DIM + CHECKPOINT_FEATURE_DIM * k_checkpoints


def row_dim(k_checkpoints: int) -> int:
    return self_state_dim(k_checkpoints) + ENTITY_OBS_DIM + N_TYPES


def goal_frame_angle(robot: RobotState) -> float:
    """Rotation angle of the robot-centric frame (undefined at the goal)."""
    return math.atan2(
        robot.goal[1] - robot.position[1], robot.goal[0] - robot.position[0]
    )


def _wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = (a + math.pi) % (2.0 * math.pi) - math.pi
    return math.pi if w == -math.pi else w


def rotate_to_robot_frame(joint: JointState) -> tuple[np.ndarray, np.ndarray]:
    """Express the joint state in the goal-aligned robot-centric frame.

    Returns the 6-value base self-state and an (n, 11) matrix of per-entity
    observable features with the type one-hot appended. Entities keep their
    input order.
    """
    robot = joint.robot
    phi = goal_frame_angle(robot)
    c, s = math.cos(phi), math.sin(phi)
    gx = robot.goal[0] - robot.position[0]
    gy = robot.goal[1] - robot.position[1]
    d_g = math.sqrt(gx * gx + gy * gy)
    vx = robot.velocity[0] * c + robot.velocity[1] * s
    vy = robot.velocity[1] * c - robot.velocity[0] * s
    base = np.array(
        [d_g, robot.v_pref, _wrap_angle(robot.theta - phi), robot.radius, vx, vy]
    )

    n = len(joint.entities)
    rows = np.zeros((n, ENTITY_OBS_DIM + N_TYPES))
    for i, e in enumerate(joint.entities):
        rel_x = e.position[0] - robot.position[0]
        rel_y = e.position[1] - robot.position[1]
        rows[i, 0] = rel_x * c + rel_y * s
        rows[i, 1] = rel_y * c - rel_x * s
        rows[i, 2] = e.velocity[0] * c + e.velocity[1] * s
        rows[i, 3] = e.velocity[1] * c - e.velocity[0] * s
        rows[i, 4] = e.radius
        rows[i, 5] = math.sqrt(rel_x * rel_x + rel_y * rel_y)
        rows[i, 6] = e.radius + robot.radius
        rows[i, ENTITY_OBS_DIM + TYPE_ONE_HOT_ORDER.index(e.entity_type)] = 1.0
    return base, rows


def checkpoint_features(robot: RobotState, selected: list[Checkpoint]) -> np.ndarray:
    """Rotated checkpoint offsets, concatenated: [d, dx, dy, r_cp] per checkpoint."""
    phi = goal_frame_angle(robot)
    c, s = math.cos(phi), math.sin(phi)
    out = np.zeros(CHECKPOINT_FEATURE_DIM * len(selected))
    for k, cp in enumerate(selected):
        dx = cp.center[0] - robot.position[0]
        dy = cp.center[1] - robot.position[1]
        base = CHECKPOINT_FEATURE_DIM * k
        out[base] = math.sqrt(dx * dx + dy * dy)
        out[base + 1] = dx * c + dy * s
        out[base + 2] = dy * c - dx * s
        out[base + 3] = cp.radius
    return out


def assemble_network_input(
    joint: JointState, selected_checkpoints: list[Checkpoint]
) -> tuple[np.ndarray, np.ndarray]:
    """Build the value network's input for one joint state.

    Returns (extended self-state of length 6+4K, entity row matrix of shape
    (n, 6+4K+11)). With no entities the row matrix is empty; callers that
    need n >= 1 substitute a far dummy obstacle row (see fallback_entity).
    """
    base, entity_rows = rotate_to_robot_frame(joint)
    cp_feats = checkpoint_features(joint.robot, selected_checkpoints)
    ext_self = np.concatenate([base, cp_feats])
    n = entity_rows.shape[0]
    rows = np.empty((n, ext_self.size + entity_rows.shape[1]))
    if n:
        rows[:, : ext_self.size] = ext_self
        rows[:, ext_self.size :] = entity_rows
    return ext_self, rows


def fallback_entity(robot: RobotState, sensor_range: float, radius: float = 0.1) -> EntityState:
    """Synthetic zero-velocity obstacle at maximum sensor range.

    Placed straight behind the robot relative to its goal direction, which is
    the most neutral spot available when no real entity is in range.
    """
    phi = goal_frame_angle(robot)
    offset = -sensor_range * np.array([math.cos(phi), math.sin(phi)])
    position = robot.position + offset
    return EntityState(
        position=position,
        velocity=np.zeros(2),
        radius=radius,
        goal=position.copy(),
        v_pref=0.0,
        entity_type=EntityType.OBSTACLE,
    )


def obstacle_entities(
    grid: OccupancyGrid,
    robot_pos: np.ndarray,
    sensor_range: float,
    max_count: int | None = None,
) -> list[EntityState]:
    """Represent nearby static obstacles as point entities for the network.

    Every 8-connected cluster of occupied cells with a cell center inside the
    sensor range contributes its nearest cell center as one zero-velocity
    Obstacle entity with radius equal to half the cell diagonal. Clusters are
    ordered nearest-first; ``max_count`` keeps only the closest ones.
    """
    centers = grid.occupied_centers
    if centers.shape[0] == 0:
        return []
    delta = centers - np.asarray(robot_pos, dtype=float)
    dist = np.sqrt((delta * delta).sum(axis=1))
    in_range = dist <= sensor_range
    if not in_range.any():
        return []
    labels = grid.occupied_component_labels
    cell_radius = grid.resolution * math.sqrt(2.0) / 2.0
    picks: list[tuple[float, int]] = []
    for label in np.unique(labels[in_range]):
        members = np.nonzero(in_range & (labels == label))[0]
        best = members[np.argmin(dist[members])]
        picks.append((float(dist[best]), int(best)))
    picks.sort()
    if max_count is not None:
        picks = picks[:max_count]
    out = []
    for _, idx in picks:
        pos = centers[idx].copy()
        out.append(
            EntityState(
                position=pos,
                velocity=np.zeros(2),
                radius=cell_radius,
                goal=pos.copy(),
                v_pref=0.0,
                entity_type=EntityType.OBSTACLE,
            )
        )
    return out
