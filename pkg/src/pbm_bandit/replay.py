"""Replay of logged auction rounds against the online learner.

A log is newline-delimited JSON: the first record carries the arm catalog,
every following record one auction round naming its participants.  Rounds
replay against simulated users who click slot ``l`` of the chosen ranking
with probability ``gamma_l * ctr``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .environment import ClickOutcome, bundled_ctr_path, load_ctr_samples, simulate_clicks
from .pbm import Arm, Ranking, VisibilityProfile
from .policy import (
    BanditState,
    PolicyConfig,
    advance_round,
    update,
)

__all__ = [
    "LogFormatError",
    "CatalogEntry",
    "RoundRecord",
    "AuctionLog",
    "load_log",
    "save_log",
    "generate_log",
    "nearest_rank_quantile",
    "filter_top_quantile",
    "split_groups",
    "replay_round",
]


class LogFormatError(ValueError):
    """A log file broke the record schema; the message names the line."""


@dataclass(frozen=True)
class CatalogEntry:
    """One arm as recorded in a log: identity, price, rate, exposure."""

    id: int
    price: float
    ctr: float
    opportunities: int

    def __post_init__(self) -> None:
        if self.price <= 0.0:
            raise ValueError(f"catalog arm {self.id}: price must be > 0")
        if not 0.0 <= self.ctr <= 1.0:
            raise ValueError(f"catalog arm {self.id}: ctr outside [0, 1]")
        if self.opportunities < 0:
            raise ValueError(f"catalog arm {self.id}: negative opportunities")

    def as_arm(self) -> Arm:
        return Arm(id=self.id, price=self.price, true_ctr=self.ctr)


@dataclass(frozen=True)
class RoundRecord:
    """One logged auction: its region and the arms that took part."""

    region: str
    participants: tuple[int, ...]

    def __post_init__(self) -> None:
        parts = tuple(int(p) for p in self.participants)
        if len(parts) == 0:
            raise ValueError("round has no participants")
        if len(set(parts)) != len(parts):
            raise ValueError(f"round repeats a participant: {parts}")
        object.__setattr__(self, "participants", parts)


@dataclass(frozen=True)
class AuctionLog:
    """A parsed auction log.

    Attributes:
        catalog: Every arm the log knows about.
        rounds: Non-empty auction rounds, in log order.
        dropped_rounds: Rounds discarded so far (zero-participant records at
            load time, emptied rounds during filtering).
    """

    catalog: tuple[CatalogEntry, ...]
    rounds: tuple[RoundRecord, ...]
    dropped_rounds: int = 0

    def __post_init__(self) -> None:
        ids = [e.id for e in self.catalog]
        if len(set(ids)) != len(ids):
            raise ValueError("catalog repeats an arm id")

    def arms(self) -> tuple[Arm, ...]:
        """Catalog as ground-truth arms."""
        return tuple(e.as_arm() for e in self.catalog)

    def opportunity_counts(self) -> dict[int, int]:
        return {e.id: e.opportunities for e in self.catalog}


def load_log(path: str | Path) -> AuctionLog:
    """Parse a newline-delimited JSON auction log.

    Zero-participant rounds are dropped (and counted); any other schema
    violation raises :class:`LogFormatError` naming the offending line.
    """
    src = Path(path)
    catalog: tuple[CatalogEntry, ...] | None = None
    rounds: list[RoundRecord] = []
    dropped = 0
    known: set[int] = set()
    with open(src, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text:
                continue
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as err:
                raise LogFormatError(f"{src}:{lineno}: bad JSON: {err}") from None
            if catalog is None:
                if not isinstance(doc, dict) or "catalog" not in doc:
                    raise LogFormatError(
                        f"{src}:{lineno}: first record must carry the catalog"
                    )
                catalog = _parse_catalog(doc["catalog"], src, lineno)
                known = {e.id for e in catalog}
                continue
            if not isinstance(doc, dict) or "participants" not in doc or "region" not in doc:
                raise LogFormatError(
                    f"{src}:{lineno}: round records need 'region' and 'participants'"
                )
            parts = doc["participants"]
            if not isinstance(parts, list) or not all(
                isinstance(p, int) and not isinstance(p, bool) for p in parts
            ):
                raise LogFormatError(
                    f"{src}:{lineno}: participants must be a list of integers"
                )
            if len(parts) == 0:
                dropped += 1
                continue
            if len(set(parts)) != len(parts):
                raise LogFormatError(f"{src}:{lineno}: duplicate participant")
            unknown = set(parts) - known
            if unknown:
                raise LogFormatError(
                    f"{src}:{lineno}: unknown participant ids {sorted(unknown)}"
                )
            rounds.append(
                RoundRecord(region=str(doc["region"]), participants=tuple(parts))
            )
    if catalog is None:
        raise LogFormatError(f"{src}: empty log, no catalog record")
    return AuctionLog(catalog=catalog, rounds=tuple(rounds), dropped_rounds=dropped)


def _parse_catalog(
    raw: object, src: Path, lineno: int
) -> tuple[CatalogEntry, ...]:
    if not isinstance(raw, list) or not raw:
        raise LogFormatError(f"{src}:{lineno}: catalog must be a non-empty list")
    entries = []
    for item in raw:
        if not isinstance(item, dict):
            raise LogFormatError(f"{src}:{lineno}: catalog entries must be objects")
        missing = {"id", "price", "ctr", "opportunities"} - set(item)
        if missing:
            raise LogFormatError(
                f"{src}:{lineno}: catalog entry missing {sorted(missing)}"
            )
        try:
            entries.append(
                CatalogEntry(
                    id=int(item["id"]),
                    price=float(item["price"]),
                    ctr=float(item["ctr"]),
                    opportunities=int(item["opportunities"]),
                )
            )
        except (TypeError, ValueError) as err:
            raise LogFormatError(f"{src}:{lineno}: bad catalog entry: {err}") from None
    return tuple(entries)


def save_log(log: AuctionLog, path: str | Path) -> None:
    """Write a log in the newline-delimited JSON layout `load_log` reads."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        head = {
            "catalog": [
                {
                    "id": e.id,
                    "price": e.price,
                    "ctr": e.ctr,
                    "opportunities": e.opportunities,
                }
                for e in log.catalog
            ]
        }
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for rnd in log.rounds:
            fh.write(
                json.dumps(
                    {"region": rnd.region, "participants": list(rnd.participants)},
                    sort_keys=True,
                )
                + "\n"
            )


def generate_log(
    k: int,
    n_rounds: int,
    n_regions: int,
    rng: np.random.Generator,
    participants: tuple[int, int] = (2, 10),
    zipf_exponent: float = 1.1,
    ctr_file: str | Path | None = None,
) -> AuctionLog:
    """Synthesize an auction log with skewed arm exposure.

    Arms join rounds with probability proportional to ``rank ** -zipf_exponent``,
    which concentrates opportunities on a head of popular arms the way
    production traffic does.  Rates come from a CTR file (bundled list by
    default), prices are uniform on [0.5, 5.0].

    Args:
        k: Catalog size; at most the CTR file length.
        n_rounds: Number of auction rounds to generate.
        n_regions: Number of distinct region labels.
        rng: Source of randomness.
        participants: Inclusive (low, high) bounds on per-round arm counts.
        zipf_exponent: Exposure skew; larger means a heavier head.
        ctr_file: Alternative CTR source.
    """
    lo, hi = participants
    if not 1 <= lo <= hi <= k:
        raise ValueError(
            f"participant bounds must satisfy 1 <= lo <= hi <= k; got {participants}"
        )
    if n_rounds < 1 or n_regions < 1:
        raise ValueError("n_rounds and n_regions must be >= 1")
    pool = load_ctr_samples(ctr_file if ctr_file is not None else bundled_ctr_path())
    if k > len(pool):
        raise ValueError(
            f"cannot draw {k} rates without replacement from a {len(pool)}-entry file"
        )
    ctrs = rng.choice(pool, size=k, replace=False)
    prices = rng.uniform(0.5, 5.0, size=k)
    weights = np.arange(1, k + 1, dtype=float) ** -zipf_exponent
    weights /= weights.sum()
    ids = np.arange(1, k + 1)

    counts = np.zeros(k, dtype=int)
    rounds = []
    for _ in range(n_rounds):
        m = int(rng.integers(lo, hi + 1))
        chosen = rng.choice(ids, size=m, replace=False, p=weights)
        counts[chosen - 1] += 1
        region = f"region-{int(rng.integers(n_regions)) + 1:02d}"
        rounds.append(
            RoundRecord(region=region, participants=tuple(int(c) for c in chosen))
        )
    catalog = tuple(
        CatalogEntry(
            id=int(i),
            price=float(p),
            ctr=float(c),
            opportunities=int(cnt),
        )
        for i, p, c, cnt in zip(ids, prices, ctrs, counts)
    )
    return AuctionLog(catalog=catalog, rounds=tuple(rounds))


def nearest_rank_quantile(values: Sequence[float], q: float) -> float:
    """Nearest-rank quantile: the value at 1-based rank ``ceil(q * n)``.

    ``q = 0`` returns the minimum.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    data = sorted(values)
    if not data:
        raise ValueError("no values to take a quantile of")
    rank = max(1, math.ceil(q * len(data)))
    return data[rank - 1]


def filter_top_quantile(log: AuctionLog, q: float) -> AuctionLog:
    """Keep only arms whose opportunity count reaches the ``q``-quantile.

    The threshold is the nearest-rank ``q``-quantile of the catalog's
    opportunity counts and survival is inclusive (``count >= threshold``).
    Rounds are re-filtered to surviving participants; rounds left empty are
    dropped and added to the log's drop counter.  ``q = 0`` is the identity.
    """
    if not 0.0 <= q < 1.0:
        raise ValueError(f"q must lie in [0, 1), got {q}")
    if q == 0.0:
        return log
    counts = [e.opportunities for e in log.catalog]
    threshold = nearest_rank_quantile(counts, q)
    survivors = frozenset(e.id for e in log.catalog if e.opportunities >= threshold)
    if not survivors:
        raise ValueError("quantile filter removed every arm")
    catalog = tuple(e for e in log.catalog if e.id in survivors)
    rounds = []
    dropped = log.dropped_rounds
    for rnd in log.rounds:
        kept = tuple(p for p in rnd.participants if p in survivors)
        if kept:
            rounds.append(replace(rnd, participants=kept))
        else:
            dropped += 1
    return AuctionLog(catalog=catalog, rounds=tuple(rounds), dropped_rounds=dropped)


def split_groups(log: AuctionLog, threshold: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Partition arms by exposure.

    Arms with at least ``threshold`` opportunities are *confident*: their
    logged CTR is trusted outright and replay freezes their statistics.
    The rest are *cold* and get learned online.

    Returns:
        ``(confident_ids, cold_ids)``, each ascending.
    """
    confident = tuple(
        sorted(e.id for e in log.catalog if e.opportunities >= threshold)
    )
    cold = tuple(sorted(e.id for e in log.catalog if e.opportunities < threshold))
    return confident, cold


def replay_round(
    rnd: RoundRecord,
    state: BanditState,
    split: tuple[Sequence[int], Sequence[int]],
    vis: VisibilityProfile,
    rng: np.random.Generator,
    config: PolicyConfig,
    arms_by_id: dict[int, Arm],
) -> tuple[Ranking, ClickOutcome, BanditState]:
    """Play one logged auction and fold the feedback into the state.

    Participants are ranked by price times a CTR score: confident arms use
    their logged rate, cold arms the learner's (mode-dependent) estimate.
    Simulated users then click each slot with probability ``gamma * ctr``.
    Only cold arms' statistics absorb the feedback; the round counter
    advances either way.

    Args:
        rnd: The logged round.
        state: Learner state covering at least the participants.
        split: ``(confident_ids, cold_ids)`` from :func:`split_groups`.
        vis: Visibility profile; at least as many slots as participants.
        rng: Source of randomness for the click simulation.
        config: Learner settings.
        arms_by_id: Ground-truth catalog lookup.

    Returns:
        The displayed ranking, its clicks, and the advanced state.
    """
    parts = rnd.participants
    if len(parts) > len(vis):
        raise ValueError(
            f"round has {len(parts)} participants but the profile only has "
            f"{len(vis)} slots"
        )
    confident = frozenset(split[0])
    sub_vis = vis.truncate(len(parts))

    def score(arm_id: int) -> float:
        arm = arms_by_id[arm_id]
        if arm_id in confident:
            return arm.price * arm.true_ctr  # type: ignore[operator]
        i = state.index_of(arm_id)
        estimate = state.s[i] / state.n[i]
        if config.mode == "auction_ucb" and state.t > 1:
            estimate += math.sqrt(config.delta * math.log(state.t) / state.n[i])
        return arm.price * estimate

    order = sorted(parts, key=lambda a: (-score(a), a))
    ranking = Ranking(tuple(order))
    sub_arms = [arms_by_id[a] for a in parts]
    outcome = simulate_clicks(ranking, sub_arms, sub_vis, rng)

    cold_slots = [
        l for l, arm_id in enumerate(ranking.slots) if arm_id not in confident
    ]
    if cold_slots:
        cold_vis = VisibilityProfile(tuple(sub_vis.gammas[l] for l in cold_slots))
        cold_ranking = Ranking(tuple(ranking.slots[l] for l in cold_slots))
        cold_clicks = [outcome.clicks[l] for l in cold_slots]
        new_state = update(state, cold_ranking, cold_clicks, cold_vis)
    else:
        new_state = advance_round(state)
    return ranking, outcome, new_state
