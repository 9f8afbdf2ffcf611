"""Robot kinematics: the 81-action discrete command set, the unicycle update,
and constant-velocity one-step world propagation for value lookahead."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

N_SPEEDS = 5
N_HEADINGS = 16


@dataclass(frozen=True)
class Action:
    speed: float  # m/s, in [0, v_pref]
    heading: float  # rad, absolute world frame in [0, 2*pi)


@dataclass
class RobotState:
    position: np.ndarray
    velocity: np.ndarray
    radius: float
    goal: np.ndarray
    v_pref: float
    theta: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)
        if self.radius <= 0:
            raise ValueError("robot radius must be > 0")
        if self.v_pref <= 0:
            raise ValueError("v_pref must be > 0")

    def dist_to_goal(self) -> float:
        return float(np.linalg.norm(self.position - self.goal))


@dataclass
class JointState:
    """Robot plus the observable entities around it at one instant."""

    robot: RobotState
    entities: list
    time: float = 0.0


def build_action_space(v_pref: float) -> list[Action]:
    """One stop action plus 5 exponentially spaced speeds x 16 uniform headings.

    Speeds follow v_i = v_pref * (e^(i/5) - 1) / (e - 1), which starts just
    above zero and hits v_pref exactly at i = 5.
    """
    if v_pref <= 0:
        raise ValueError("v_pref must be > 0")
    actions = [Action(0.0, 0.0)]
    for i in range(1, N_SPEEDS + 1):
        speed = v_pref * (math.exp(i / N_SPEEDS) - 1.0) / (math.e - 1.0)
        for k in range(N_HEADINGS):
            actions.append(Action(speed, 2.0 * math.pi * k / N_HEADINGS))
    return actions


def step_robot(state: RobotState, action: Action, dt: float) -> RobotState:
    """Unicycle update: snap heading to the command, move along it at speed."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    velocity = np.array(
        [action.speed * math.cos(action.heading), action.speed * math.sin(action.heading)]
    )
    return RobotState(
        position=state.position + velocity * dt,
        velocity=velocity,
        radius=state.radius,
        goal=state.goal,
        v_pref=state.v_pref,
        theta=action.heading,
    )


def propagate_world(joint: JointState, action: Action, dt: float) -> JointState:
    """One lookahead step: robot follows the action, every dynamic entity keeps
    its current velocity, static entities stay put. No collision resolution."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    robot = step_robot(joint.robot, action, dt)
    entities = [
        replace(e, position=e.position + e.velocity * dt) for e in joint.entities
    ]
    return JointState(robot=robot, entities=entities, time=joint.time + dt)
