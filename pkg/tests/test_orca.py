"""Collision-avoidance solver tests: feasibility, optimality against a dense
velocity-grid oracle, reciprocity symmetry, and the infeasible fallback."""

import math

import numpy as np
import pytest

from hybridnav.crowd import EntityState, EntityType, OrcaParams, orca_velocity
from hybridnav.orca import HalfPlane, avoidance_constraint, solve_velocity


def make_agent(px, py, vx, vy, gx, gy, radius=0.3, v_pref=1.0, etype=EntityType.ADULT):
    return EntityState(
        position=np.array([px, py], dtype=float),
        velocity=np.array([vx, vy], dtype=float),
        radius=radius,
        goal=np.array([gx, gy], dtype=float),
        v_pref=v_pref,
        entity_type=etype,
    )


def agent_lines(agent, neighbors, dt=0.25, horizon=5.0):
    lines = []
    for other in neighbors:
        rel = other.position - agent.position
        lines.append(
            avoidance_constraint(
                rel[0],
                rel[1],
                agent.velocity[0] - other.velocity[0],
                agent.velocity[1] - other.velocity[1],
                agent.radius + other.radius,
                agent.velocity[0],
                agent.velocity[1],
                horizon,
                dt,
                0.5,
            )
        )
    return lines


def random_scene(rng, n_agents):
    """Agents scattered so that constraints bite but stay feasible most runs."""
    agents = []
    for _ in range(n_agents):
        px, py = rng.uniform(-4, 4, size=2)
        vx, vy = rng.uniform(-1, 1, size=2)
        gx, gy = rng.uniform(-6, 6, size=2)
        agents.append(make_agent(px, py, vx, vy, gx, gy, radius=float(rng.uniform(0.2, 0.5))))
    return agents


def test_no_neighbors_returns_preferred_velocity():
    agent = make_agent(0, 0, 0, 0, 10, 0)
    v = orca_velocity(agent, [], None, 0.25, 5.0)
    assert np.allclose(v, [1.0, 0.0], atol=1e-15)


def test_preferred_velocity_is_unit_to_goal_times_v_pref():
    agent = make_agent(1, 2, 0, 0, 4, 6, v_pref=1.3)
    v = orca_velocity(agent, [], None, 0.25, 5.0)
    expected = np.array([3.0, 4.0]) / 5.0 * 1.3
    assert np.allclose(v, expected, atol=1e-12)


def test_head_on_symmetry_is_mirror():
    left = make_agent(-3, 0, 1, 0, 3, 0)
    right = make_agent(3, 0, -1, 0, -3, 0)
    v_left = orca_velocity(left, [right], None, 0.25, 5.0)
    v_right = orca_velocity(right, [left], None, 0.25, 5.0)
    assert v_left[0] == pytest.approx(-v_right[0], abs=1e-12)
    assert v_left[1] == pytest.approx(-v_right[1], abs=1e-12)


def test_never_exceeds_max_speed():
    rng = np.random.default_rng(5)
    for _ in range(50):
        agents = random_scene(rng, 4)
        v = orca_velocity(agents[0], agents[1:], None, 0.25, 5.0)
        assert np.linalg.norm(v) <= agents[0].v_pref + 1e-12


def test_feasible_solutions_satisfy_constraints_and_are_optimal():
    """Direct substitution plus a dense grid search over the speed disc."""
    rng = np.random.default_rng(42)
    feasible_seen = 0
    for _ in range(60):
        agents = random_scene(rng, 5)
        me = agents[0]
        lines = agent_lines(me, agents[1:])
        to_goal = me.goal - me.position
        pref = to_goal / np.linalg.norm(to_goal) * me.v_pref
        v = np.array(solve_velocity(lines, 0, me.v_pref, pref[0], pref[1]))
        violations = [ln.violation(v[0], v[1]) for ln in lines]
        if max(violations, default=0.0) > 1e-9:
            continue  # infeasible scene went through the fallback
        feasible_seen += 1
        res = 0.01
        xs = np.arange(-me.v_pref, me.v_pref + res, res)
        gx, gy = np.meshgrid(xs, xs)
        mask = gx * gx + gy * gy <= me.v_pref**2
        for ln in lines:
            mask &= ln.dx * (ln.py - gy) - ln.dy * (ln.px - gx) <= 1e-12
        if mask.any():
            dist_sq = (gx - pref[0]) ** 2 + (gy - pref[1]) ** 2
            best = dist_sq[mask].min()
            ours = (v[0] - pref[0]) ** 2 + (v[1] - pref[1]) ** 2
            assert ours <= best + 1e-6
    assert feasible_seen >= 30  # the sampler must actually exercise the LP


def test_infeasible_fallback_returns_bounded_velocity():
    # ring of already-overlapping agents makes the joint constraints infeasible
    me = make_agent(0, 0, 0, 0, 5, 0, radius=0.5)
    ring = [
        make_agent(
            0.4 * math.cos(a), 0.4 * math.sin(a), -math.cos(a), -math.sin(a), 0, 0,
            radius=0.5,
        )
        for a in np.linspace(0, 2 * math.pi, 7)[:-1]
    ]
    lines = agent_lines(me, ring)
    pref = np.array([1.0, 0.0])
    v = np.array(solve_velocity(lines, 0, me.v_pref, pref[0], pref[1]))
    assert np.isfinite(v).all()
    assert np.linalg.norm(v) <= me.v_pref + 1e-9
    assert max(ln.violation(v[0], v[1]) for ln in lines) > 0  # genuinely infeasible


def test_fallback_keeps_obstacle_lines_hard():
    # one obstacle half-plane forbidding +y, then infeasible agent lines
    obstacle = HalfPlane(0.0, 0.2, 1.0, 0.0)  # permits vy <= 0.2
    a = HalfPlane(0.0, 0.5, 1.0, 0.0)  # wants vy >= ... conflicting pair below
    b = HalfPlane(0.0, 0.5, -1.0, 0.0)
    v = np.array(solve_velocity([obstacle, a, b], 1, 1.0, 0.0, 1.0))
    assert obstacle.violation(v[0], v[1]) <= 1e-9


def test_overlapping_agents_push_apart():
    me = make_agent(0, 0, 0, 0, 5, 0, radius=0.4)
    other = make_agent(0.3, 0, 0, 0, -5, 0, radius=0.4)  # overlapping discs
    v = orca_velocity(me, [other], None, 0.25, 5.0)
    assert v[0] < 0  # moves away from the overlap along -x


def test_neighbor_range_filters_far_agents():
    me = make_agent(0, 0, 0, 0, 10, 0)
    far = make_agent(100, 0, -1, 0, 0, 0)
    v = orca_velocity(me, [far], None, 0.25, 5.0, params=OrcaParams(neighbor_dist=10.0))
    assert np.allclose(v, [1.0, 0.0], atol=1e-15)
