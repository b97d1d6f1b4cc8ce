"""Rollout guard: learner ranks the tail, a trusted scorer keeps the head.

Top slots carry most of the page's attention, so they stay with the
production CTR scorer until the learner's confidence radius for an arm has
shrunk below a threshold; tail slots are the learner's playground.  The
guard only rearranges what gets shown; it never touches how statistics
update.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .pbm import Arm, Ranking, VisibilityProfile

__all__ = [
    "TailGuardConfig",
    "GuardedScores",
    "top_slot_count",
    "guarded_ctr",
    "guarded_rank",
]


@dataclass(frozen=True)
class TailGuardConfig:
    """Guard settings.

    Attributes:
        beta: Fraction of total page visibility the protected head must
            cover; in (0, 1].
        alpha: Confidence-radius threshold below which the learner's
            estimate may override the production score; > 0.
    """

    beta: float
    alpha: float

    def __post_init__(self) -> None:
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")


@dataclass(frozen=True, eq=False)
class GuardedScores:
    """Per-arm inputs to the guard, aligned with one arms sequence.

    Attributes:
        baseline_ctr: Production scorer's CTR per arm, in [0, 1].
        bandit_ctr: Learner's raw estimate per arm; >= 0.
        bonus: Learner's confidence radius per arm; >= 0.
    """

    baseline_ctr: np.ndarray
    bandit_ctr: np.ndarray
    bonus: np.ndarray

    def __post_init__(self) -> None:
        base = np.asarray(self.baseline_ctr, dtype=float)
        band = np.asarray(self.bandit_ctr, dtype=float)
        bon = np.asarray(self.bonus, dtype=float)
        if not (base.shape == band.shape == bon.shape) or base.ndim != 1:
            raise ValueError(
                "baseline_ctr, bandit_ctr and bonus must be equal-length vectors"
            )
        if base.size == 0:
            raise ValueError("scores need at least one arm")
        if not ((base >= 0.0) & (base <= 1.0)).all():
            raise ValueError("baseline_ctr entries must lie in [0, 1]")
        if not (band >= 0.0).all():
            raise ValueError("bandit_ctr entries must be >= 0")
        if not (bon >= 0.0).all():
            raise ValueError("bonus entries must be >= 0")
        object.__setattr__(self, "baseline_ctr", base)
        object.__setattr__(self, "bandit_ctr", band)
        object.__setattr__(self, "bonus", bon)

    def __len__(self) -> int:
        return len(self.baseline_ctr)


def top_slot_count(vis: VisibilityProfile, beta: float) -> int:
    """Smallest head size whose visibility share reaches ``beta``.

    The share of slots ``1..m`` is their visibility sum over the whole
    profile's sum; ``beta = 1`` selects every slot.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    g = vis.as_array()
    shares = np.cumsum(g) / g.sum()
    hits = np.nonzero(shares >= beta)[0]
    # Float dust can leave the final share a hair under 1.0.
    return int(hits[0]) + 1 if hits.size else len(vis)


def guarded_ctr(scores: GuardedScores, k: int, alpha: float) -> float:
    """CTR the protected head uses for arm ``k`` (an index into the scores).

    The learner's estimate may only raise the production score, and only
    once its confidence radius is at most ``alpha``.
    """
    if not 0 <= k < len(scores):
        raise IndexError(f"arm index {k} out of range for {len(scores)} arms")
    if scores.bonus[k] <= alpha:
        return float(max(scores.baseline_ctr[k], scores.bandit_ctr[k]))
    return float(scores.baseline_ctr[k])


def guarded_rank(
    arms: Sequence[Arm],
    vis: VisibilityProfile,
    scores: GuardedScores,
    config: TailGuardConfig,
) -> Ranking:
    """Compose the guarded display: trusted head, optimistic tail.

    Head slots (as many as :func:`top_slot_count` demands) go to the arms
    with the best price x guarded-CTR products; the remaining arms fill the
    tail ordered by price x (estimate + confidence radius).  Ties break
    toward the smaller arm id in both sections.
    """
    if not len(arms) == len(vis) == len(scores):
        raise ValueError(
            f"arms, visibility and scores must agree in length; got "
            f"{len(arms)}, {len(vis)}, {len(scores)}"
        )
    ids = np.array([a.id for a in arms])
    if len(set(ids.tolist())) != len(ids):
        raise ValueError("arm ids must be unique")
    prices = np.array([a.price for a in arms], dtype=float)
    m = top_slot_count(vis, config.beta)

    guarded = np.where(
        scores.bonus <= config.alpha,
        np.maximum(scores.baseline_ctr, scores.bandit_ctr),
        scores.baseline_ctr,
    )
    head_order = np.lexsort((ids, -(prices * guarded)))
    head = head_order[:m]

    rest = head_order[m:]
    tail_score = prices * (scores.bandit_ctr + scores.bonus)
    rest = rest[np.lexsort((ids[rest], -tail_score[rest]))]

    return Ranking(tuple(int(i) for i in np.concatenate([ids[head], ids[rest]])))
