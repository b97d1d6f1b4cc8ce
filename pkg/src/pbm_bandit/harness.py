"""Experiment orchestration: seeded runs, aggregation, artifact writers.

Regret here is always the expected shortfall of the displayed ranking (its
optimality gap), not the realized click noise, which keeps single-run
curves readable.  Runs are embarrassingly parallel and every run's seed
derives from (master seed, run index), so re-running any subset reproduces
it exactly.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .environment import Instance, simulate_clicks
from .pbm import (
    Arm,
    Ranking,
    VisibilityProfile,
    bound_constants,
    expected_reward,
    optimal_ranking,
    regret_bound,
)
from .policy import (
    BanditState,
    PolicyConfig,
    init_state,
    select_ranking,
    update,
)
from .replay import AuctionLog, replay_round
from .tail_guard import GuardedScores, TailGuardConfig, guarded_rank

__all__ = [
    "RunResult",
    "AggregateResult",
    "run_rng",
    "run_once",
    "run_many",
    "replay_run_once",
    "replay_run_many",
    "aggregate",
    "trailing_average",
    "ecpi_errors",
    "error_vs_opportunities",
    "check_bound",
    "write_trace_csv",
    "write_errors_csv",
]


@dataclass(frozen=True, eq=False)
class RunResult:
    """One simulated run.

    Attributes:
        instant_regret: Expected revenue shortfall per round.
        cumulative_regret: Its prefix sums.
        final_state: Learner state after the last round.
        seed: The run's seed material (master seed, run index).
    """

    instant_regret: np.ndarray
    cumulative_regret: np.ndarray
    final_state: BanditState
    seed: tuple[int, int]

    def __post_init__(self) -> None:
        if self.instant_regret.shape != self.cumulative_regret.shape:
            raise ValueError("instant and cumulative traces must align")


@dataclass(frozen=True, eq=False)
class AggregateResult:
    """Pointwise statistics over equally long runs.

    Attributes:
        mean_regret_over_t: Mean over runs of cumulative regret / round.
        std_regret_over_t: Population standard deviation of the same.
        smoothed_instant: Trailing moving average of the mean instant regret.
        n_runs: How many runs entered the aggregate.
    """

    mean_regret_over_t: np.ndarray
    std_regret_over_t: np.ndarray
    smoothed_instant: np.ndarray
    n_runs: int


def run_rng(master_seed: int, run_index: int) -> np.random.Generator:
    """Generator for one run; stable no matter how many runs exist."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, run_index]))


def run_once(
    instance: Instance,
    config: PolicyConfig,
    t_rounds: int,
    seed: tuple[int, int],
    tail_guard: TailGuardConfig | None = None,
    baseline_ctr: Sequence[float] | None = None,
) -> RunResult:
    """Simulate one full run of the learner on a synthetic instance.

    Round 1 displays the random initialization ranking; each later round
    folds the previous display's clicks into the state and shows the next
    selection.  With ``tail_guard`` set, displays come from the guard
    (which needs ``baseline_ctr``, the production scorer's per-arm CTRs).

    Args:
        instance: Arms with ground truth plus the visibility profile.
        config: Learner settings.
        t_rounds: Number of display rounds, >= 1.
        seed: (master seed, run index) pair.
        tail_guard: Optional guard settings.
        baseline_ctr: Production CTRs, required with ``tail_guard``.

    Returns:
        The run's regret traces and final state.
    """
    if t_rounds < 1:
        raise ValueError(f"t_rounds must be >= 1, got {t_rounds}")
    arms, vis = instance
    base = None
    if tail_guard is not None:
        if baseline_ctr is None:
            raise ValueError("tail_guard needs baseline_ctr")
        base = np.asarray(baseline_ctr, dtype=float)
        if base.shape != (len(arms),):
            raise ValueError(
                f"baseline_ctr must have one entry per arm; got {base.shape}"
            )
    rng = run_rng(*seed)
    best_reward = expected_reward(optimal_ranking(arms, vis), arms, vis)

    instant = np.empty(t_rounds)
    state, ranking = init_state(arms, vis, rng)
    clicks = simulate_clicks(ranking, arms, vis, rng)
    instant[0] = best_reward - expected_reward(ranking, arms, vis)
    for i in range(1, t_rounds):
        state = update(state, ranking, clicks.clicks, vis)
        if tail_guard is None:
            ranking = select_ranking(state, config)
        else:
            ranking = _guarded_selection(state, arms, vis, base, tail_guard, config)
        clicks = simulate_clicks(ranking, arms, vis, rng)
        instant[i] = best_reward - expected_reward(ranking, arms, vis)
    return RunResult(
        instant_regret=instant,
        cumulative_regret=np.cumsum(instant),
        final_state=state,
        seed=seed,
    )


def _guarded_selection(
    state: BanditState,
    arms: Sequence[Arm],
    vis: VisibilityProfile,
    baseline: np.ndarray,
    guard: TailGuardConfig,
    config: PolicyConfig,
) -> Ranking:
    estimate = state.s / state.n
    if state.t > 1:
        bonus = np.sqrt(config.delta * math.log(state.t) / state.n)
    else:
        bonus = np.zeros(len(state))
    scores = GuardedScores(baseline_ctr=baseline, bandit_ctr=estimate, bonus=bonus)
    return guarded_rank(arms, vis, scores, guard)


def run_many(
    instance: Instance,
    config: PolicyConfig,
    t_rounds: int,
    n_runs: int,
    master_seed: int,
    jobs: int = 1,
    tail_guard: TailGuardConfig | None = None,
    baseline_ctr: Sequence[float] | None = None,
) -> list[RunResult]:
    """Independent runs 0..n_runs-1; identical results at any job count."""
    if n_runs < 1:
        raise ValueError(f"n_runs must be >= 1, got {n_runs}")
    seeds = [(master_seed, i) for i in range(n_runs)]
    if jobs <= 1:
        return [
            run_once(instance, config, t_rounds, s, tail_guard, baseline_ctr)
            for s in seeds
        ]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [
            pool.submit(
                run_once, instance, config, t_rounds, s, tail_guard, baseline_ctr
            )
            for s in seeds
        ]
        return [f.result() for f in futures]


def replay_run_once(
    log: AuctionLog,
    vis: VisibilityProfile,
    config: PolicyConfig,
    split: tuple[Sequence[int], Sequence[int]],
    seed: tuple[int, int],
) -> RunResult:
    """Replay every round of a log once, with simulated click feedback.

    All catalog arms start from neutral pseudo-counts (no clicks, one
    bottom-slot's worth of visibility), confident arms stay frozen at
    their logged CTR, and per-round regret is the optimality gap among
    that round's participants.
    """
    if not log.rounds:
        raise ValueError("log has no rounds to replay")
    rng = run_rng(*seed)
    arms = log.arms()
    arms_by_id = {a.id: a for a in arms}
    state = BanditState(
        t=1,
        s=np.zeros(len(arms)),
        n=np.full(len(arms), vis.gammas[-1]),
        prices=np.array([a.price for a in arms]),
        ids=tuple(a.id for a in arms),
    )

    instant = np.empty(len(log.rounds))
    for i, rnd in enumerate(log.rounds):
        sub_arms = [arms_by_id[p] for p in rnd.participants]
        sub_vis = vis.truncate(len(sub_arms))
        ranking, _, state = replay_round(
            rnd, state, split, vis, rng, config, arms_by_id
        )
        best = expected_reward(optimal_ranking(sub_arms, sub_vis), sub_arms, sub_vis)
        instant[i] = best - expected_reward(ranking, sub_arms, sub_vis)
    return RunResult(
        instant_regret=instant,
        cumulative_regret=np.cumsum(instant),
        final_state=state,
        seed=seed,
    )


def replay_run_many(
    log: AuctionLog,
    vis: VisibilityProfile,
    config: PolicyConfig,
    split: tuple[Sequence[int], Sequence[int]],
    n_runs: int,
    master_seed: int,
    jobs: int = 1,
) -> list[RunResult]:
    """Independent replays of the same log under fresh click randomness."""
    if n_runs < 1:
        raise ValueError(f"n_runs must be >= 1, got {n_runs}")
    seeds = [(master_seed, i) for i in range(n_runs)]
    if jobs <= 1:
        return [replay_run_once(log, vis, config, split, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [
            pool.submit(replay_run_once, log, vis, config, split, s) for s in seeds
        ]
        return [f.result() for f in futures]


def trailing_average(values: np.ndarray, window: int) -> np.ndarray:
    """Causal moving average: entry ``i`` averages the last ``window`` values."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    x = np.asarray(values, dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def aggregate(runs: Sequence[RunResult], window: int) -> AggregateResult:
    """Pointwise aggregate of equally long runs.

    Args:
        runs: At least one run; traces must share a length.
        window: Trailing-average width for the smoothed instant regret.
    """
    if not runs:
        raise ValueError("nothing to aggregate")
    lengths = {len(r.instant_regret) for r in runs}
    if len(lengths) != 1:
        raise ValueError(f"runs disagree on length: {sorted(lengths)}")
    cum = np.stack([r.cumulative_regret for r in runs])
    rounds = np.arange(1, cum.shape[1] + 1, dtype=float)
    over_t = cum / rounds
    inst = np.stack([r.instant_regret for r in runs])
    return AggregateResult(
        mean_regret_over_t=over_t.mean(axis=0),
        std_regret_over_t=over_t.std(axis=0),
        smoothed_instant=trailing_average(inst.mean(axis=0), window),
        n_runs=len(runs),
    )


def ecpi_errors(
    state: BanditState, arms: Sequence[Arm]
) -> tuple[np.ndarray, np.ndarray]:
    """Absolute and relative revenue-estimate errors per arm.

    Absolute error is ``|price * (ctr - estimate)|``; relative error
    divides by the true revenue rate and is NaN where that rate is zero.

    Returns:
        ``(abs_err, rel_err)`` aligned with ``arms``.
    """
    abs_err = np.empty(len(arms))
    rel_err = np.empty(len(arms))
    for i, arm in enumerate(arms):
        if arm.true_ctr is None:
            raise ValueError(f"arm {arm.id}: true_ctr is not set")
        j = state.index_of(arm.id)
        estimate = state.s[j] / state.n[j]
        abs_err[i] = abs(arm.price * (arm.true_ctr - estimate))
        truth = arm.price * arm.true_ctr
        rel_err[i] = abs_err[i] / truth if truth > 0.0 else math.nan
    return abs_err, rel_err


def error_vs_opportunities(
    states: Sequence[BanditState], arms: Sequence[Arm]
) -> list[tuple[float, float]]:
    """(display total, relative error) pairs pooled over runs, ascending.

    One pair per arm per final state, sorted by the display total, for
    eyeballing how estimate quality tracks exposure.
    """
    pairs = []
    for state in states:
        _, rel = ecpi_errors(state, arms)
        for i, arm in enumerate(arms):
            pairs.append((float(state.n[state.index_of(arm.id)]), float(rel[i])))
    pairs.sort()
    return pairs


def check_bound(
    runs: Sequence[RunResult],
    instance: Instance,
    t_rounds: int,
    delta: float,
) -> dict[str, Any]:
    """Compare mean cumulative regret against the closed-form ceiling.

    Checkpoints are the powers of 10 up to ``t_rounds``.

    Returns:
        A JSON-ready report: checkpoints, means, ceilings, the instance
        constants, and a ``holds`` flag.
    """
    if not runs:
        raise ValueError("no runs to check")
    arms, vis = instance
    checkpoints = []
    t = 1
    while t <= t_rounds:
        checkpoints.append(t)
        t *= 10
    cum = np.stack([r.cumulative_regret for r in runs])
    if cum.shape[1] < t_rounds:
        raise ValueError(
            f"runs cover {cum.shape[1]} rounds but the check needs {t_rounds}"
        )
    means = [float(cum[:, cp - 1].mean()) for cp in checkpoints]
    bounds = [regret_bound(arms, vis, cp, delta) for cp in checkpoints]
    consts = bound_constants(arms, vis)
    return {
        "checkpoints": checkpoints,
        "mean_cumulative_regret": means,
        "bound": bounds,
        "holds": bool(all(m <= b for m, b in zip(means, bounds))),
        "constants": {
            "k": consts.k,
            "delta_min": consts.delta_min,
            "delta_max": consts.delta_max,
            "c_gamma": consts.c_gamma,
            "p_max": consts.p_max,
            "delta": delta,
        },
        "n_runs": len(runs),
    }


def write_trace_csv(agg: AggregateResult, path: str | Path) -> None:
    """Write the aggregate trace: round, mean, std, smoothed instant."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["round", "mean_regret_over_t", "std_regret_over_t", "smoothed_instant_regret"]
        )
        for i in range(len(agg.mean_regret_over_t)):
            writer.writerow(
                [
                    i + 1,
                    repr(float(agg.mean_regret_over_t[i])),
                    repr(float(agg.std_regret_over_t[i])),
                    repr(float(agg.smoothed_instant[i])),
                ]
            )


def write_errors_csv(
    runs: Sequence[RunResult], arms: Sequence[Arm], path: str | Path
) -> None:
    """Write per-arm estimate errors averaged over runs.

    Columns: arm id, mean display total, mean absolute error, mean
    relative error (NaN rows where the true revenue rate is zero).
    """
    if not runs:
        raise ValueError("no runs to report")
    per_run = [ecpi_errors(r.final_state, arms) for r in runs]
    abs_err = np.stack([a for a, _ in per_run]).mean(axis=0)
    rel_err = np.stack([r for _, r in per_run]).mean(axis=0)
    n = np.stack(
        [
            [r.final_state.n[r.final_state.index_of(a.id)] for a in arms]
            for r in runs
        ]
    ).mean(axis=0)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["arm_id", "n", "abs_err", "rel_err"])
        for i, arm in enumerate(arms):
            writer.writerow(
                [arm.id, repr(float(n[i])), repr(float(abs_err[i])), repr(float(rel_err[i]))]
            )
