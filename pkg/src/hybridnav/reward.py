"""Entity-aware reward: terminal, checkpoint and discomfort components, each
exposed separately, plus the flat key-value config format.

Collision distances are surface-to-surface; a collision is d_min <= 0. The
proximity term 1 - d_g/d_max is deliberately not clamped, so retreating past
the start distance goes negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .crowd import EntityType


def _default_r_coll():
    return {
        EntityType.OBSTACLE: -1.0,
        EntityType.ADULT: -1.5,
        EntityType.BICYCLE: -2.0,
        EntityType.CHILD: -2.5,
    }


def _default_d_disc():
    return {
        EntityType.OBSTACLE: 0.0,
        EntityType.ADULT: 0.1,
        EntityType.BICYCLE: 0.2,
        EntityType.CHILD: 0.2,
    }


def _default_p_disc():
    return {
        EntityType.OBSTACLE: 0.0,
        EntityType.ADULT: 0.5,
        EntityType.BICYCLE: 1.0,
        EntityType.CHILD: 1.0,
    }


@dataclass
class RewardConfig:
    r_success: float = 3.0
    r_cp: float = 0.3
    r_coll: dict = field(default_factory=_default_r_coll)
    d_disc: dict = field(default_factory=_default_d_disc)
    p_disc: dict = field(default_factory=_default_p_disc)
    t_pref: float = 25.0
    t_max: float = 50.0
    dt: float = 0.25

    def __post_init__(self):
        if self.t_pref >= self.t_max:
            raise ValueError("t_pref must be < t_max")
        if any(v < 0 for v in self.d_disc.values()):
            raise ValueError("discomfort distances must be >= 0")
        if any(v >= 0 for v in self.r_coll.values()):
            raise ValueError("collision penalties must be negative")


@dataclass
class StepOutcome:
    """What happened over one step [t - dt, t], as the reward sees it."""

    d_min: float  # min surface distance to any entity over the interval
    closest_type: EntityType | None
    reached_goal: bool
    timed_out: bool
    entered_checkpoint: int | None
    d_g: float
    d_max: float

    def __post_init__(self):
        if self.reached_goal and self.timed_out:
            raise ValueError("reached_goal and timed_out are mutually exclusive")
        if self.d_max <= 0:
            raise ValueError("d_max must be > 0")

    @property
    def collided(self) -> bool:
        return self.d_min <= 0.0


def time_reward(t: float, t_pref: float, t_max: float) -> float:
    """1 before t_pref, linear down to 0 at t_max, 0 after."""
    if t_pref >= t_max:
        raise ValueError("t_pref must be < t_max")
    if t < t_pref:
        return 1.0
    if t <= t_max:
        return (t_max - t) / (t_max - t_pref)
    return 0.0


def proximity_reward(d_g: float, d_max: float) -> float:
    """Progress toward the goal relative to the start distance; unclamped."""
    if d_max <= 0:
        raise ValueError("d_max must be > 0")
    return 1.0 - d_g / d_max


def terminal_reward(outcome: StepOutcome, t: float, config: RewardConfig) -> float:
    """End-of-episode branches, checked in order: timeout, collision, success."""
    if outcome.timed_out:
        return proximity_reward(outcome.d_g, outcome.d_max)
    if outcome.collided:
        return config.r_coll[outcome.closest_type] + proximity_reward(
            outcome.d_g, outcome.d_max
        )
    if outcome.reached_goal:
        return config.r_success + time_reward(t, config.t_pref, config.t_max)
    return 0.0


def checkpoint_reward(outcome: StepOutcome, config: RewardConfig) -> float:
    """Paid once per checkpoint, on the step the robot first enters its circle."""
    return config.r_cp if outcome.entered_checkpoint is not None else 0.0


def discomfort_reward(outcome: StepOutcome, config: RewardConfig, dt: float) -> float:
    """Per-second penalty for closing inside the type's discomfort distance."""
    if outcome.closest_type is None or outcome.collided:
        return 0.0
    d = outcome.d_min
    d_disc = config.d_disc[outcome.closest_type]
    if 0.0 < d < d_disc:
        return (d - d_disc) * config.p_disc[outcome.closest_type] * dt
    return 0.0


def total_reward(outcome: StepOutcome, t: float, config: RewardConfig) -> float:
    """Unconditional sum of the three components for one step."""
    return (
        terminal_reward(outcome, t, config)
        + checkpoint_reward(outcome, config)
        + discomfort_reward(outcome, config, config.dt)
    )


# --- flat key-value config --------------------------------------------------

_TYPE_KEYS = {
    "obstacle": EntityType.OBSTACLE,
    "adult": EntityType.ADULT,
    "bicycle": EntityType.BICYCLE,
    "child": EntityType.CHILD,
}


def reward_config_to_mapping(config: RewardConfig) -> dict[str, float]:
    out = {
        "r_success": config.r_success,
        "r_cp": config.r_cp,
        "t_pref": config.t_pref,
        "t_max": config.t_max,
        "dt": config.dt,
    }
    for name, etype in _TYPE_KEYS.items():
        out[f"r_coll.{name}"] = config.r_coll[etype]
        out[f"d_disc.{name}"] = config.d_disc[etype]
        out[f"p_disc.{name}"] = config.p_disc[etype]
    return out


def reward_config_from_mapping(mapping: dict) -> RewardConfig:
    """Build a RewardConfig from flat keys; unknown reward keys are rejected."""
    config = RewardConfig()
    for key, raw in mapping.items():
        value = float(raw)
        if key == "r_success":
            config.r_success = value
        elif key == "r_cp":
            config.r_cp = value
        elif key == "t_pref":
            config.t_pref = value
        elif key == "t_max":
            config.t_max = value
        elif key == "dt":
            config.dt = value
        elif "." in key:
            group, type_name = key.split(".", 1)
            if type_name not in _TYPE_KEYS:
                raise ValueError(f"unknown entity type in reward key: {key}")
            etype = _TYPE_KEYS[type_name]
            if group == "r_coll":
                config.r_coll[etype] = value
            elif group == "d_disc":
                config.d_disc[etype] = value
            elif group == "p_disc":
                config.p_disc[etype] = value
            else:
                raise ValueError(f"unknown reward key: {key}")
        else:
            raise ValueError(f"unknown reward key: {key}")
    if config.t_pref >= config.t_max:
        raise ValueError("t_pref must be < t_max")
    return config


def load_kv(path) -> dict[str, str]:
    """Parse a flat `key = value` text file; '#' starts a comment."""
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected `key = value`")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def save_kv(mapping: dict, path) -> None:
    with open(path, "w") as fh:
        for key in mapping:
            fh.write(f"{key} = {mapping[key]}\n")


def load_reward_config(path) -> RewardConfig:
    return reward_config_from_mapping(load_kv(path))


def save_reward_config(config: RewardConfig, path) -> None:
    save_kv(reward_config_to_mapping(config), path)
