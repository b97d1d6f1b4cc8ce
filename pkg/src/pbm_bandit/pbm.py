"""Ground-truth arithmetic for ranked pay-per-click display.

Expected revenue of a ranking under the position-based click model,
the revenue-optimal ranking, per-ranking optimality gaps, and the
closed-form ceiling on cumulative regret.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "Arm",
    "VisibilityProfile",
    "Ranking",
    "BoundConstants",
    "DegenerateInstanceError",
    "expected_reward",
    "optimal_ranking",
    "action_gap",
    "c_gamma",
    "bound_constants",
    "regret_bound",
    "FULL_ENUMERATION_LIMIT",
]

# Instances up to this size get exact gap statistics by enumerating every
# ranking; larger ones fall back to adjacent transpositions of the optimum.
FULL_ENUMERATION_LIMIT = 8

# Relative slack used when deciding whether two gamma entries (or two
# ranking rewards) are distinct.
_REL_TOL = 1e-12


class DegenerateInstanceError(ValueError):
    """Every ranking of the instance earns the optimal reward.

    The minimum nonzero optimality gap is undefined for such instances,
    so the regret ceiling cannot be evaluated.
    """


@dataclass(frozen=True)
class Arm:
    """One ad competing for display slots.

    Attributes:
        id: Stable integer identifier, unique within an instance.
        price: Payment collected per click; strictly positive.
        true_ctr: Ground-truth click-through rate in [0, 1].  ``None`` for
            arms whose rate is unknown to the caller (e.g. the online
            policy's view of the world).
    """

    id: int
    price: float
    true_ctr: float | None = None

    def __post_init__(self) -> None:
        if self.price <= 0.0:
            raise ValueError(f"arm {self.id}: price must be > 0, got {self.price}")
        if self.true_ctr is not None and not 0.0 <= self.true_ctr <= 1.0:
            raise ValueError(
                f"arm {self.id}: true_ctr must lie in [0, 1], got {self.true_ctr}"
            )

    @property
    def ecpi(self) -> float:
        """Expected revenue per display at full visibility (price x CTR)."""
        if self.true_ctr is None:
            raise ValueError(f"arm {self.id}: true_ctr is not set")
        return self.price * self.true_ctr


@dataclass(frozen=True)
class VisibilityProfile:
    """Per-slot view probabilities, strictly decreasing from top to bottom.

    Attributes:
        gammas: One probability per slot, ``1 >= gammas[0] > ... >= 0``.
    """

    gammas: tuple[float, ...]
    _arr: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.gammas) == 0:
            raise ValueError("visibility profile needs at least one slot")
        gs = tuple(float(g) for g in self.gammas)
        if gs[0] > 1.0 or gs[-1] < 0.0:
            raise ValueError(f"slot visibilities must lie in [0, 1], got {gs}")
        for i in range(len(gs) - 1):
            if gs[i + 1] >= gs[i] * (1.0 - _REL_TOL):
                raise ValueError(
                    "slot visibilities must decrease strictly: "
                    f"gammas[{i}]={gs[i]} vs gammas[{i + 1}]={gs[i + 1]}"
                )
        object.__setattr__(self, "gammas", gs)
        arr = np.array(gs, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "_arr", arr)

    def __len__(self) -> int:
        return len(self.gammas)

    def as_array(self) -> np.ndarray:
        """Read-only numpy view of the per-slot visibilities."""
        return self._arr

    def truncate(self, k: int) -> "VisibilityProfile":
        """Profile restricted to the first ``k`` slots."""
        if not 1 <= k <= len(self.gammas):
            raise ValueError(
                f"cannot truncate a {len(self.gammas)}-slot profile to {k} slots"
            )
        if k == len(self.gammas):
            return self
        return VisibilityProfile(self.gammas[:k])


@dataclass(frozen=True)
class Ranking:
    """An ordered assignment of arms to display slots, top slot first.

    Attributes:
        slots: Arm ids by slot; no id may appear twice.
    """

    slots: tuple[int, ...]

    def __post_init__(self) -> None:
        slots = tuple(int(a) for a in self.slots)
        if len(slots) == 0:
            raise ValueError("ranking needs at least one slot")
        if len(set(slots)) != len(slots):
            raise ValueError(f"ranking repeats an arm id: {slots}")
        object.__setattr__(self, "slots", slots)

    def __len__(self) -> int:
        return len(self.slots)


@dataclass(frozen=True)
class BoundConstants:
    """Instance constants entering the cumulative-regret ceiling.

    Attributes:
        k: Number of arms.
        delta_min: Smallest nonzero optimality gap over rankings.
        delta_max: Largest optimality gap over rankings.
        c_gamma: Visibility constant of the profile (see :func:`c_gamma`).
        p_max: Largest per-click price among the arms.
    """

    k: int
    delta_min: float
    delta_max: float
    c_gamma: float
    p_max: float


def _ecpi_by_id(arms: Sequence[Arm]) -> dict[int, float]:
    out: dict[int, float] = {}
    for arm in arms:
        if arm.id in out:
            raise ValueError(f"duplicate arm id {arm.id}")
        out[arm.id] = arm.ecpi
    return out


def _check_sizes(arms: Sequence[Arm], vis: VisibilityProfile) -> None:
    if len(arms) != len(vis):
        raise ValueError(
            f"arm count {len(arms)} does not match slot count {len(vis)}"
        )


def expected_reward(
    ranking: Ranking, arms: Sequence[Arm], vis: VisibilityProfile
) -> float:
    """Expected revenue of one display of ``ranking``.

    Under the position-based model a click on slot ``l`` happens with
    probability ``gamma_l * ctr``, so the expected revenue is the sum of
    ``gamma_l * price * ctr`` over slots.  Summation uses ``math.fsum`` so
    rankings that permute arms with identical price x CTR products earn
    bitwise-identical rewards.

    Args:
        ranking: Arm ids by slot; must cover exactly the ids in ``arms``.
        arms: The instance; every arm needs a ``true_ctr``.
        vis: Slot visibilities; one per arm.

    Returns:
        The expected revenue of the display.
    """
    _check_sizes(arms, vis)
    ecpi = _ecpi_by_id(arms)
    if len(ranking) != len(arms) or set(ranking.slots) != set(ecpi):
        raise ValueError(
            f"ranking {ranking.slots} is not a permutation of the arm ids"
        )
    return math.fsum(g * ecpi[a] for g, a in zip(vis.gammas, ranking.slots))


def optimal_ranking(arms: Sequence[Arm], vis: VisibilityProfile) -> Ranking:
    """Revenue-optimal ranking: arms by price x CTR, best first.

    Ties break toward the smaller arm id, so the result is unique.
    """
    _check_sizes(arms, vis)
    ecpi = _ecpi_by_id(arms)
    order = sorted(ecpi, key=lambda a: (-ecpi[a], a))
    return Ranking(tuple(order))


def action_gap(
    ranking: Ranking, arms: Sequence[Arm], vis: VisibilityProfile
) -> float:
    """Expected revenue lost per display by showing ``ranking``.

    Always >= 0, and exactly 0 whenever the ranking is revenue-equivalent
    to the optimal one.
    """
    best = expected_reward(optimal_ranking(arms, vis), arms, vis)
    return best - expected_reward(ranking, arms, vis)


def c_gamma(vis: VisibilityProfile) -> float:
    """Visibility constant of a profile.

    The minimum over cut points ``l`` of
    ``(sum of all gammas)^2 / l + (sum of the first l gammas)^2``.
    """
    total = math.fsum(vis.gammas)
    best = math.inf
    prefix = 0.0
    for l, g in enumerate(vis.gammas, start=1):
        prefix += g
        best = min(best, total * total / l + prefix * prefix)
    return best


def _gap_extremes(arms: Sequence[Arm], vis: VisibilityProfile) -> tuple[float, float]:
    """(delta_min, delta_max): smallest nonzero and largest optimality gap.

    Exact for up to FULL_ENUMERATION_LIMIT arms by enumerating every
    ranking.  Beyond that, delta_max is still exact (reversing the optimal
    order is the worst assignment) while delta_min is estimated from the
    single adjacent transpositions of the optimal ranking, which is a
    valid member of the gap family but may overshoot the true minimum.
    """
    best = optimal_ranking(arms, vis)
    best_reward = expected_reward(best, arms, vis)
    tol = _REL_TOL * max(1.0, abs(best_reward))

    if len(arms) <= FULL_ENUMERATION_LIMIT:
        gaps = [
            action_gap(Ranking(perm), arms, vis)
            for perm in itertools.permutations(best.slots)
        ]
        positive = [g for g in gaps if g > tol]
        delta_max = max(gaps)
    else:
        worst = Ranking(tuple(reversed(best.slots)))
        delta_max = action_gap(worst, arms, vis)
        positive = []
        for l in range(len(best) - 1):
            slots = list(best.slots)
            slots[l], slots[l + 1] = slots[l + 1], slots[l]
            g = action_gap(Ranking(tuple(slots)), arms, vis)
            if g > tol:
                positive.append(g)

    if not positive:
        raise DegenerateInstanceError(
            "every ranking is revenue-optimal; the minimum nonzero gap "
            "is undefined for this instance"
        )
    return min(positive), delta_max


def bound_constants(arms: Sequence[Arm], vis: VisibilityProfile) -> BoundConstants:
    """Collect the instance constants used by :func:`regret_bound`."""
    _check_sizes(arms, vis)
    delta_min, delta_max = _gap_extremes(arms, vis)
    return BoundConstants(
        k=len(arms),
        delta_min=delta_min,
        delta_max=delta_max,
        c_gamma=c_gamma(vis),
        p_max=max(a.price for a in arms),
    )


def regret_bound(
    arms: Sequence[Arm],
    vis: VisibilityProfile,
    t_horizon: float,
    delta: float = 1.5,
) -> float:
    """Closed-form ceiling on expected cumulative regret after ``t_horizon`` rounds.

    ``(pi^2 / 3) * K * delta_max  +  64 * K * c_gamma * p_max / delta_min * ln T``
    at the default exploration coefficient ``delta = 1.5``; the logarithmic
    term scales proportionally for other coefficients.

    Args:
        arms: The instance; CTRs must be set.
        vis: Slot visibilities.
        t_horizon: Round count T >= 1 (a real value is accepted so the
            ceiling can be probed at arbitrary ln T).
        delta: Exploration coefficient of the policy being bounded.

    Raises:
        DegenerateInstanceError: If every ranking is optimal.
    """
    if t_horizon < 1:
        raise ValueError(f"t_horizon must be >= 1, got {t_horizon}")
    if delta <= 0.0:
        raise ValueError(f"delta must be > 0, got {delta}")
    c = bound_constants(arms, vis)
    transient = (math.pi**2 / 3.0) * c.k * c.delta_max
    log_coeff = 64.0 * (delta / 1.5) * c.k * c.c_gamma * c.p_max / c.delta_min
    return transient + log_coeff * math.log(t_horizon)
