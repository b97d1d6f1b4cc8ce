"""Online UCB learner for position-weighted pay-per-click display.

The state keeps, per arm, the click total ``s`` and the visibility-weighted
display total ``n``.  Each round the learner scores arms by price times an
optimistic CTR estimate and shows them best first; feedback then flows back
through :func:`update`.  All transitions are pure: state in, state out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .pbm import Ranking, VisibilityProfile, Arm

__all__ = [
    "MODES",
    "PolicyConfig",
    "BanditState",
    "init_state",
    "theta_hat",
    "exploration_bonus",
    "ucb_index",
    "select_ranking",
    "update",
    "advance_round",
    "warm_start",
    "state_to_json",
    "state_from_json",
]

MODES = ("auction_ucb", "baseline_greedy")


@dataclass(frozen=True)
class PolicyConfig:
    """Learner settings.

    Attributes:
        delta: Exploration coefficient in the confidence radius; > 0.
        mode: ``"auction_ucb"`` scores arms optimistically,
            ``"baseline_greedy"`` ranks on the plain CTR estimate.
    """

    delta: float = 1.5
    mode: str = "auction_ucb"

    def __post_init__(self) -> None:
        if self.delta <= 0.0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True, eq=False)
class BanditState:
    """Per-arm learning statistics after ``t`` display rounds.

    Attributes:
        t: Round counter, starting at 1 after initialization.
        s: Click totals, one per arm; >= 0.
        n: Visibility-weighted display totals, one per arm; > 0.
        prices: Per-click payments, aligned with ``s`` and ``n``.
        ids: Arm ids in array order.

    Treat instances as immutable values; transitions return fresh states.
    """

    t: int
    s: np.ndarray
    n: np.ndarray
    prices: np.ndarray
    ids: tuple[int, ...]

    def __post_init__(self) -> None:
        s = np.asarray(self.s, dtype=float)
        n = np.asarray(self.n, dtype=float)
        prices = np.asarray(self.prices, dtype=float)
        ids = tuple(int(i) for i in self.ids)
        k = len(ids)
        if k == 0:
            raise ValueError("state needs at least one arm")
        if len(set(ids)) != k:
            raise ValueError("arm ids must be unique")
        if s.shape != (k,) or n.shape != (k,) or prices.shape != (k,):
            raise ValueError(
                f"s/n/prices must all have shape ({k},); got "
                f"{s.shape}, {n.shape}, {prices.shape}"
            )
        if self.t < 1:
            raise ValueError(f"round counter must be >= 1, got {self.t}")
        if not (n > 0.0).all():
            raise ValueError("every arm needs a positive display total")
        if not (s >= 0.0).all():
            raise ValueError("click totals cannot be negative")
        if not (prices > 0.0).all():
            raise ValueError("prices must be positive")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "_index", {a: i for i, a in enumerate(ids)})
        object.__setattr__(self, "_ids_arr", np.array(ids))

    def index_of(self, arm_id: int) -> int:
        """Array position of ``arm_id``."""
        try:
            return self._index[arm_id]  # type: ignore[attr-defined]
        except KeyError:
            raise KeyError(f"unknown arm id {arm_id}") from None

    def __len__(self) -> int:
        return len(self.ids)


def init_state(
    arms: Sequence[Arm], vis: VisibilityProfile, rng: np.random.Generator
) -> tuple[BanditState, Ranking]:
    """Start learning by displaying every arm once in uniform random order.

    Each arm is credited the visibility of the slot it landed in, so every
    display total is positive from round one.  Click totals start at zero;
    the clicks earned by this first display are delivered through the first
    :func:`update` call against the returned ranking.

    Returns:
        The round-1 state and the random ranking that was displayed.
    """
    if len(arms) != len(vis):
        raise ValueError(
            f"arm count {len(arms)} does not match slot count {len(vis)}"
        )
    ids = tuple(a.id for a in arms)
    if len(set(ids)) != len(ids):
        raise ValueError("arm ids must be unique")
    prices = np.array([a.price for a in arms], dtype=float)
    perm = rng.permutation(len(arms))
    n = np.empty(len(arms), dtype=float)
    n[perm] = vis.as_array()
    state = BanditState(
        t=1, s=np.zeros(len(arms)), n=n, prices=prices, ids=ids
    )
    ranking = Ranking(tuple(ids[i] for i in perm))
    return state, ranking


def theta_hat(state: BanditState, arm_id: int) -> float:
    """Raw CTR estimate ``s / n``; may exceed 1 since ``n`` is visibility-weighted."""
    i = state.index_of(arm_id)
    return float(state.s[i] / state.n[i])


def exploration_bonus(state: BanditState, arm_id: int, delta: float) -> float:
    """Confidence radius ``sqrt(delta * ln t / n)``; exactly 0 at t = 1."""
    i = state.index_of(arm_id)
    return math.sqrt(delta * math.log(state.t) / state.n[i])


def ucb_index(state: BanditState, arm_id: int, config: PolicyConfig) -> float:
    """Optimistic CTR score: the raw estimate plus the confidence radius."""
    return theta_hat(state, arm_id) + exploration_bonus(state, arm_id, config.delta)


def _scores(state: BanditState, config: PolicyConfig) -> np.ndarray:
    estimate = state.s / state.n
    if config.mode == "auction_ucb" and state.t > 1:
        estimate = estimate + np.sqrt(
            config.delta * math.log(state.t) / state.n
        )
    return state.prices * estimate


def select_ranking(state: BanditState, config: PolicyConfig) -> Ranking:
    """Rank arms by price times their (mode-dependent) CTR score, best first.

    Ties break toward the smaller arm id.
    """
    scores = _scores(state, config)
    ids_arr = state._ids_arr  # type: ignore[attr-defined]
    order = np.lexsort((ids_arr, -scores))
    return Ranking(tuple(int(ids_arr[i]) for i in order))


def update(
    state: BanditState,
    ranking: Ranking,
    clicks: Sequence[int],
    vis: VisibilityProfile,
) -> BanditState:
    """Fold one displayed ranking and its click feedback into the state.

    The arm shown in slot ``l`` gains that slot's visibility on its display
    total and ``clicks[l]`` on its click total; arms not in the ranking are
    untouched.  The round counter advances by one.

    Args:
        state: State before the display.
        ranking: What was shown; may cover a subset of the state's arms.
        clicks: 0/1 click indicator per slot.
        vis: Visibility of exactly the displayed slots.
    """
    c = np.asarray(clicks, dtype=float)
    if len(ranking) != len(vis) or c.shape != (len(vis),):
        raise ValueError(
            f"ranking, clicks and visibility must agree in length; got "
            f"{len(ranking)}, {c.shape}, {len(vis)}"
        )
    if not np.isin(c, (0.0, 1.0)).all():
        raise ValueError("clicks must be 0 or 1 per slot")
    pos = np.fromiter(
        (state.index_of(a) for a in ranking.slots), dtype=int, count=len(ranking)
    )
    s = state.s.copy()
    n = state.n.copy()
    s[pos] += c
    n[pos] += vis.as_array()
    return BanditState(t=state.t + 1, s=s, n=n, prices=state.prices, ids=state.ids)


def advance_round(state: BanditState) -> BanditState:
    """Tick the round counter without touching any statistics."""
    return BanditState(
        t=state.t + 1, s=state.s, n=state.n, prices=state.prices, ids=state.ids
    )


def warm_start(
    state: BanditState, s0: Sequence[float], n0: Sequence[float]
) -> BanditState:
    """Replace the statistics with externally supplied pseudo-counts.

    Used to seed the learner from an existing CTR predictor: an arm given
    ``s0 = predicted_ctr * c`` and ``n0 = c`` behaves as if it had already
    been watched for ``c`` effective displays.  The round counter resets
    to 1, so the first selection afterwards carries no exploration bonus.

    Args:
        state: Donor state supplying arm ids and prices.
        s0: Pseudo click totals, >= 0, one per arm.
        n0: Pseudo display totals, > 0, one per arm.
    """
    s = np.asarray(s0, dtype=float)
    n = np.asarray(n0, dtype=float)
    if s.shape != state.s.shape or n.shape != state.n.shape:
        raise ValueError(
            f"pseudo-counts must have shape {state.s.shape}; got {s.shape}, {n.shape}"
        )
    return BanditState(t=1, s=s, n=n, prices=state.prices, ids=state.ids)


def state_to_json(state: BanditState) -> dict[str, Any]:
    """Plain-JSON snapshot: ``{"t", "s", "n", "prices"}`` in arm order."""
    return {
        "t": state.t,
        "s": [float(x) for x in state.s],
        "n": [float(x) for x in state.n],
        "prices": [float(x) for x in state.prices],
    }


def state_from_json(
    doc: dict[str, Any], ids: Sequence[int] | None = None
) -> BanditState:
    """Rebuild a state from :func:`state_to_json` output.

    Args:
        doc: The snapshot document.
        ids: Arm ids in array order; defaults to ``1..K``.
    """
    missing = {"t", "s", "n", "prices"} - set(doc)
    if missing:
        raise ValueError(f"state snapshot is missing fields: {sorted(missing)}")
    k = len(doc["s"])
    if ids is None:
        ids = tuple(range(1, k + 1))
    return BanditState(
        t=int(doc["t"]),
        s=np.asarray(doc["s"], dtype=float),
        n=np.asarray(doc["n"], dtype=float),
        prices=np.asarray(doc["prices"], dtype=float),
        ids=tuple(ids),
    )
