"""Evaluation harness: frozen-policy metrics (success rate, per-type collision
rates, time, danger distance, weighted score), the checkpoint-reward ablation,
and trajectory/metrics file outputs."""

from __future__ import annotations

import copy
import math
import os
from dataclasses import dataclass

import numpy as np

from .crowd import EntityType
from .mapgen import EpisodeSpec, derive_seed
from .neural import ValueNet, save_weights
from .training import (
    EpisodeRollout,
    RunConfig,
    StepRecord,
    imitation_phase,
    prepare_pools,
    run_wave,
    train,
)

DANGER_THRESHOLD = 0.30  # meters of surface distance that count as "danger"


@dataclass
class EpisodeResult:
    index: int
    status: str  # success | collision | timeout | aborted
    collision_type: EntityType | None
    duration: float
    total_reward: float
    trajectory: list[StepRecord]

    @property
    def label(self) -> str:
        if self.status == "collision" and self.collision_type is not None:
            return f"collision({self.collision_type.letter})"
        return self.status


@dataclass
class MetricsReport:
    episodes: int
    sr: float
    cr: float
    cr_a: float
    cr_b: float
    cr_c: float
    cr_o: float
    timeout_rate: float
    time_mean: float | None  # over successful episodes; None if none succeeded
    dd_a: float | None
    dd_b: float | None
    dd_c: float | None
    ws: float
    aborted: int = 0

    def summary_mapping(self) -> dict:
        out = {
            "episodes": self.episodes,
            "sr": self.sr,
            "cr": self.cr,
            "cr_a": self.cr_a,
            "cr_b": self.cr_b,
            "cr_c": self.cr_c,
            "cr_o": self.cr_o,
            "timeout_rate": self.timeout_rate,
            "time": "" if self.time_mean is None else self.time_mean,
            "dd_a": "" if self.dd_a is None else self.dd_a,
            "dd_b": "" if self.dd_b is None else self.dd_b,
            "dd_c": "" if self.dd_c is None else self.dd_c,
            "ws": self.ws,
            "aborted": self.aborted,
        }
        return out


def weighted_score(
    sr: float, cr_a: float, cr_b: float, cr_c: float, cr_o: float
) -> float:
    """Success rate minus severity-weighted per-type collision rates."""
    for name, v in (("sr", sr), ("cr_a", cr_a), ("cr_b", cr_b), ("cr_c", cr_c), ("cr_o", cr_o)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    return sr - cr_a - 4.0 * cr_c - 2.0 * cr_b - 0.5 * cr_o


def danger_samples(
    trajectory: list[StepRecord], threshold: float = DANGER_THRESHOLD
) -> dict[EntityType, list[float]]:
    """Per-type surface distances of every (step, agent) sample under threshold."""
    out: dict[EntityType, list[float]] = {}
    for rec in trajectory:
        for _, etype, ax, ay, _, _, ar in rec.agents:
            d = math.hypot(ax - rec.robot_x, ay - rec.robot_y) - rec.robot_radius - ar
            if d < threshold:
                out.setdefault(etype, []).append(d)
    return out


def danger_distance(
    trajectory: list[StepRecord],
    entity_type: EntityType,
    threshold: float = DANGER_THRESHOLD,
) -> float | None:
    """Mean surface distance over danger samples of one type; None without any."""
    samples = danger_samples(trajectory, threshold).get(entity_type)
    if not samples:
        return None
    return float(np.mean(samples))


def aggregate_results(results: list[EpisodeResult], *, strict: bool = False) -> MetricsReport:
    """Fold per-episode results into one report.

    Aborted episodes are excluded from the rate denominators unless ``strict``.
    """
    aborted = sum(1 for r in results if r.status == "aborted")
    counted = [r for r in results if strict or r.status != "aborted"]
    n = len(counted)
    if n == 0:
        raise ValueError("no episodes to aggregate")
    coll = {t: 0 for t in EntityType}
    successes = [r for r in counted if r.status == "success"]
    timeouts = sum(1 for r in counted if r.status == "timeout")
    for r in counted:
        if r.status == "collision":
            coll[r.collision_type] += 1
    dd: dict[EntityType, list[float]] = {}
    for r in counted:
        for etype, samples in danger_samples(r.trajectory).items():
            dd.setdefault(etype, []).extend(samples)

    sr = len(successes) / n
    cr_t = {t: coll[t] / n for t in EntityType}
    report = MetricsReport(
        episodes=n,
        sr=sr,
        cr=sum(cr_t.values()),
        cr_a=cr_t[EntityType.ADULT],
        cr_b=cr_t[EntityType.BICYCLE],
        cr_c=cr_t[EntityType.CHILD],
        cr_o=cr_t[EntityType.OBSTACLE],
        timeout_rate=timeouts / n,
        time_mean=(
            float(np.mean([r.duration for r in successes])) if successes else None
        ),
        dd_a=(
            float(np.mean(dd[EntityType.ADULT])) if EntityType.ADULT in dd else None
        ),
        dd_b=(
            float(np.mean(dd[EntityType.BICYCLE]))
            if EntityType.BICYCLE in dd
            else None
        ),
        dd_c=(
            float(np.mean(dd[EntityType.CHILD])) if EntityType.CHILD in dd else None
        ),
        ws=weighted_score(
            sr,
            cr_t[EntityType.ADULT],
            cr_t[EntityType.BICYCLE],
            cr_t[EntityType.CHILD],
            cr_t[EntityType.OBSTACLE],
        ),
        aborted=aborted,
    )
    return report


def evaluate(
    net: ValueNet,
    episodes: list[EpisodeSpec],
    cfg: RunConfig,
    seed: int,
    *,
    workers: int | None = None,
    out_dir=None,
    strict: bool = False,
) -> MetricsReport:
    """Run every episode with epsilon = 0 and fixed per-episode seeds."""
    if not episodes:
        raise ValueError("episode set is empty")
    workers = cfg.train.workers if workers is None else workers
    tasks = [
        ("eval", i, 0.0, derive_seed(seed, 0xE7A1, i)) for i in range(len(episodes))
    ]
    rollouts = run_wave(tasks, episodes, net, None, cfg, workers)
    results = [
        EpisodeResult(
            index=i,
            status=r.summary.status,
            collision_type=r.summary.collision_type,
            duration=r.summary.duration,
            total_reward=r.summary.total_reward,
            trajectory=r.trajectory,
        )
        for i, r in enumerate(rollouts)
    ]
    report = aggregate_results(results, strict=strict)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_episode_csv(results, os.path.join(out_dir, "episodes.csv"))
        from .reward import save_kv

        save_kv(report.summary_mapping(), os.path.join(out_dir, "summary.txt"))
    return report


EPISODE_CSV_COLUMNS = ("episode", "status", "collision_type", "duration_s", "reward")


def write_episode_csv(results: list[EpisodeResult], path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(EPISODE_CSV_COLUMNS) + "\n")
        for r in results:
            ctype = r.collision_type.letter if r.collision_type is not None else ""
            fh.write(
                f"{r.index},{r.status},{ctype},{float(r.duration)!r},"
                f"{float(r.total_reward)!r}\n"
            )


def save_trajectory_csv(trajectory: list[StepRecord], path) -> None:
    """Trajectory log: `step, agent_id, type, x, y, vx, vy, r` (robot id -1, type R)."""
    with open(path, "w") as fh:
        fh.write("step,agent_id,type,x,y,vx,vy,r\n")
        for rec in trajectory:
            fh.write(
                f"{rec.step},-1,R,{rec.robot_x!r},{rec.robot_y!r},"
                f"{rec.robot_vx!r},{rec.robot_vy!r},{float(rec.robot_radius)!r}\n"
            )
            for aid, etype, x, y, vx, vy, r in rec.agents:
                fh.write(
                    f"{rec.step},{aid},{etype.letter},{x!r},{y!r},{vx!r},{vy!r},"
                    f"{float(r)!r}\n"
                )


# --- ablation ------------------------------------------------------------------

ABLATION_ROWS = (
    "SR",
    "CR",
    "CR(A)",
    "CR(B)",
    "CR(C)",
    "CR(O)",
    "Time",
    "DD(A)",
    "DD(B)",
    "DD(C)",
    "WS",
)


def _report_row(report: MetricsReport, row: str):
    return {
        "SR": report.sr,
        "CR": report.cr,
        "CR(A)": report.cr_a,
        "CR(B)": report.cr_b,
        "CR(C)": report.cr_c,
        "CR(O)": report.cr_o,
        "Time": report.time_mean,
        "DD(A)": report.dd_a,
        "DD(B)": report.dd_b,
        "DD(C)": report.dd_c,
        "WS": report.ws,
    }[row]


def ablation_table(report_on: MetricsReport, report_off: MetricsReport) -> str:
    lines = [f"{'metric':<8} {'shaping on':>12} {'shaping off':>12}"]
    for row in ABLATION_ROWS:
        a, b = _report_row(report_on, row), _report_row(report_off, row)
        fa = "-" if a is None else f"{a:.4f}"
        fb = "-" if b is None else f"{b:.4f}"
        lines.append(f"{row:<8} {fa:>12} {fb:>12}")
    return "\n".join(lines)


def ablation_checkpoint_reward(
    cfg: RunConfig,
    seed: int,
    *,
    test_episodes: int = 100,
    out_dir=None,
    log_fn=None,
) -> tuple[MetricsReport, MetricsReport, str]:
    """Train twice (checkpoint reward on at its configured value, then 0.0),
    evaluate both on the identical test set and seeds, and tabulate."""
    pools = prepare_pools(cfg, seed, test_episodes=test_episodes)
    test_pool = pools["test"]
    reports = []
    for arm, r_cp in (("on", cfg.reward.r_cp), ("off", 0.0)):
        arm_cfg = copy.deepcopy(cfg)
        arm_cfg.reward.r_cp = r_cp
        arm_dir = None if out_dir is None else os.path.join(out_dir, f"rcp_{arm}")
        if log_fn:
            log_fn(f"training ablation arm r_cp={r_cp}")
        net, _ = train(arm_cfg, seed, pools=pools, out_dir=arm_dir, log_fn=log_fn)
        report = evaluate(
            net,
            test_pool,
            arm_cfg,
            seed,
            out_dir=None if arm_dir is None else os.path.join(arm_dir, "eval"),
        )
        reports.append(report)
        if out_dir is not None:
            save_weights(net, os.path.join(out_dir, f"weights_rcp_{arm}.bin"))
    table = ablation_table(reports[0], reports[1])
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "ablation.txt"), "w") as fh:
            fh.write(table + "\n")
    return reports[0], reports[1], table


__all__ = [
    "EpisodeResult",
    "MetricsReport",
    "weighted_score",
    "danger_distance",
    "danger_samples",
    "aggregate_results",
    "evaluate",
    "ablation_checkpoint_reward",
    "ablation_table",
    "save_trajectory_csv",
    "write_episode_csv",
    "imitation_phase",
]
