"""Reward engine tests: experiment constants, per-component branch behavior,
branch exclusivity, and the flat config format."""

import numpy as np
import pytest

from hybridnav.crowd import EntityType
from hybridnav.reward import (
    RewardConfig,
    StepOutcome,
    checkpoint_reward,
    discomfort_reward,
    load_kv,
    load_reward_config,
    proximity_reward,
    reward_config_from_mapping,
    reward_config_to_mapping,
    save_kv,
    save_reward_config,
    terminal_reward,
    time_reward,
    total_reward,
)

A, B, C, O = EntityType.ADULT, EntityType.BICYCLE, EntityType.CHILD, EntityType.OBSTACLE


def outcome(
    d_min=10.0,
    closest=None,
    reached=False,
    timed_out=False,
    entered=None,
    d_g=5.0,
    d_max=10.0,
):
    return StepOutcome(
        d_min=d_min,
        closest_type=closest,
        reached_goal=reached,
        timed_out=timed_out,
        entered_checkpoint=entered,
        d_g=d_g,
        d_max=d_max,
    )


def test_default_constants_match_experiment_values():
    cfg = RewardConfig()
    assert cfg.r_success == 3.0
    assert cfg.r_cp == 0.3
    assert cfg.r_coll == {O: -1.0, A: -1.5, B: -2.0, C: -2.5}
    assert cfg.d_disc[A] == 0.1 and cfg.d_disc[B] == 0.2 and cfg.d_disc[C] == 0.2
    assert cfg.p_disc == {O: 0.0, A: 0.5, B: 1.0, C: 1.0}


def test_penalty_severity_ordering():
    cfg = RewardConfig()
    assert cfg.r_coll[C] < cfg.r_coll[B] < cfg.r_coll[A] < cfg.r_coll[O] < 0


def test_config_validation():
    with pytest.raises(ValueError):
        RewardConfig(t_pref=50.0, t_max=50.0)
    with pytest.raises(ValueError):
        RewardConfig(r_coll={O: 0.5, A: -1, B: -1, C: -1})


# --- time reward ---


def test_time_reward_branches():
    assert time_reward(0.0, 25.0, 50.0) == 1.0
    assert time_reward(50.0, 25.0, 50.0) == 0.0
    assert time_reward(37.5, 25.0, 50.0) == pytest.approx(0.5)
    assert time_reward(60.0, 25.0, 50.0) == 0.0


def test_time_reward_is_non_increasing():
    ts = np.linspace(0, 80, 200)
    vals = [time_reward(t, 25.0, 50.0) for t in ts]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


# --- proximity reward ---


def test_proximity_reward_values():
    assert proximity_reward(10.0, 10.0) == 0.0
    assert proximity_reward(0.0, 10.0) == 1.0
    assert proximity_reward(15.0, 10.0) == pytest.approx(-0.5)  # unclamped


# --- terminal reward ---


def test_success_before_t_pref_pays_four():
    cfg = RewardConfig()
    out = outcome(reached=True, d_g=0.1)
    assert terminal_reward(out, 10.0, cfg) == pytest.approx(4.0)


def test_child_collision_at_half_distance():
    cfg = RewardConfig()
    out = outcome(d_min=-0.01, closest=C, d_g=5.0, d_max=10.0)
    assert terminal_reward(out, 10.0, cfg) == pytest.approx(-2.5 + 0.5)


def test_timeout_at_start_distance_is_zero():
    cfg = RewardConfig()
    out = outcome(timed_out=True, d_g=10.0, d_max=10.0)
    assert terminal_reward(out, cfg.t_max, cfg) == 0.0


def test_timeout_branch_takes_priority_over_collision():
    cfg = RewardConfig()
    out = outcome(timed_out=True, d_min=-0.1, closest=A, d_g=5.0, d_max=10.0)
    assert terminal_reward(out, cfg.t_max, cfg) == pytest.approx(0.5)


def test_non_terminal_step_is_zero():
    assert terminal_reward(outcome(), 5.0, RewardConfig()) == 0.0


def test_exactly_one_branch_fires():
    cfg = RewardConfig()
    rng = np.random.default_rng(0)
    for _ in range(200):
        reached = bool(rng.integers(2))
        timed = bool(rng.integers(2)) and not reached
        d_min = float(rng.uniform(-1, 1))
        out = outcome(
            d_min=d_min,
            closest=A if d_min < 2 else None,
            reached=reached,
            timed_out=timed,
            d_g=float(rng.uniform(0, 10)),
        )
        branches = [
            out.timed_out,
            (not out.timed_out) and out.collided,
            (not out.timed_out) and (not out.collided) and out.reached_goal,
            (not out.timed_out) and (not out.collided) and (not out.reached_goal),
        ]
        assert sum(branches) == 1


# --- checkpoint reward ---


def test_checkpoint_entry_pays_once():
    cfg = RewardConfig()
    assert checkpoint_reward(outcome(entered=0), cfg) == pytest.approx(0.3)
    assert checkpoint_reward(outcome(entered=None), cfg) == 0.0


# --- discomfort reward ---


def test_adult_discomfort_value():
    cfg = RewardConfig()
    out = outcome(d_min=0.05, closest=A)
    assert discomfort_reward(out, cfg, 0.25) == pytest.approx(-0.00625)


def test_obstacle_discomfort_is_zero():
    cfg = RewardConfig()
    out = outcome(d_min=0.05, closest=O)
    assert discomfort_reward(out, cfg, 0.25) == 0.0


def test_discomfort_boundary_is_strict():
    cfg = RewardConfig()
    out = outcome(d_min=0.1, closest=A)  # exactly d_disc
    assert discomfort_reward(out, cfg, 0.25) == 0.0


def test_discomfort_never_positive():
    cfg = RewardConfig()
    rng = np.random.default_rng(1)
    for _ in range(200):
        out = outcome(
            d_min=float(rng.uniform(0.001, 0.5)),
            closest=[A, B, C, O][int(rng.integers(4))],
        )
        assert discomfort_reward(out, cfg, 0.25) <= 0.0


# --- total ---


def test_total_nonterminal_quiet_step_is_zero():
    assert total_reward(outcome(), 5.0, RewardConfig()) == 0.0


def test_total_checkpoint_plus_discomfort():
    cfg = RewardConfig()
    out = outcome(d_min=0.05, closest=A, entered=1)
    assert total_reward(out, 5.0, cfg) == pytest.approx(0.3 - 0.00625)


def test_total_on_success_equals_terminal_alone():
    cfg = RewardConfig()
    out = outcome(reached=True, d_g=0.0)
    assert total_reward(out, 10.0, cfg) == terminal_reward(out, 10.0, cfg)


def test_outcome_validation():
    with pytest.raises(ValueError):
        outcome(reached=True, timed_out=True)
    with pytest.raises(ValueError):
        outcome(d_max=0.0)


# --- config file ---


def test_reward_config_round_trip(tmp_path):
    cfg = RewardConfig(t_pref=30.0, t_max=60.0)
    cfg.r_coll[C] = -3.0
    save_reward_config(cfg, tmp_path / "r.cfg")
    loaded = load_reward_config(tmp_path / "r.cfg")
    assert loaded.r_coll[C] == -3.0
    assert loaded.t_pref == 30.0 and loaded.t_max == 60.0
    assert reward_config_to_mapping(loaded) == reward_config_to_mapping(cfg)


def test_shipped_defaults_file_matches_code_defaults():
    import hybridnav

    import os

    path = os.path.join(os.path.dirname(hybridnav.__file__), "data", "reward_defaults.cfg")
    loaded = load_reward_config(path)
    base = RewardConfig(t_pref=25.0, t_max=50.0)
    assert reward_config_to_mapping(loaded) == reward_config_to_mapping(base)


def test_unknown_reward_key_rejected():
    with pytest.raises(ValueError):
        reward_config_from_mapping({"r_bogus": 1.0})
    with pytest.raises(ValueError):
        reward_config_from_mapping({"r_coll.dragon": -1.0})


def test_kv_parser(tmp_path):
    p = tmp_path / "t.cfg"
    p.write_text("# comment\na = 1\nb = two words  # trailing\n\n")
    assert load_kv(p) == {"a": "1", "b": "two words"}
    save_kv({"x": 1.5}, p)
    assert load_kv(p) == {"x": "1.5"}
    p.write_text("not a pair\n")
    with pytest.raises(ValueError):
        load_kv(p)
