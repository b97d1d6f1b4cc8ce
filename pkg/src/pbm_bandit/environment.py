"""Synthetic worlds for the learner: click simulation and instance menus.

Ground truth lives here and nowhere else; the policy only ever sees the
clicks this module samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .pbm import Arm, Ranking, VisibilityProfile

__all__ = [
    "PRICE_KINDS",
    "CTR_KINDS",
    "EASY_HIGH_CTR_ARMS",
    "ClickOutcome",
    "SyntheticSpec",
    "Instance",
    "default_visibility",
    "bundled_ctr_path",
    "load_ctr_samples",
    "simulate_clicks",
    "generate_instance",
]

PRICE_KINDS = ("fixed_one", "uniform_1_to_k", "binomial_10_half")
CTR_KINDS = ("uniform_01_08", "easy_two_level", "real_sample")

# The easy two-level menu plants exactly this many high-CTR arms.
EASY_HIGH_CTR_ARMS = 7


@dataclass(frozen=True)
class ClickOutcome:
    """Click feedback for one display: a 0/1 indicator per slot."""

    clicks: tuple[int, ...]

    def __post_init__(self) -> None:
        clicks = tuple(int(c) for c in self.clicks)
        if any(c not in (0, 1) for c in clicks):
            raise ValueError(f"clicks must be 0 or 1 per slot, got {clicks}")
        object.__setattr__(self, "clicks", clicks)

    def __len__(self) -> int:
        return len(self.clicks)


class Instance(NamedTuple):
    """A complete simulated market: arms with ground truth plus visibilities."""

    arms: tuple[Arm, ...]
    vis: VisibilityProfile


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one synthetic instance.

    Attributes:
        price_kind: ``fixed_one`` (all prices 1), ``uniform_1_to_k``
            (uniform on [1, k]) or ``binomial_10_half`` (Binomial(10, 0.5)
            with zero draws resampled).
        ctr_kind: ``uniform_01_08`` (uniform on [0.1, 0.8]),
            ``easy_two_level`` (7 arms at 0.8, the rest at 0.1) or
            ``real_sample`` (drawn without replacement from a CTR file).
        k: Number of arms; >= 7 for the easy two-level menu.
        real_ctr_file: Source for ``real_sample``; defaults to the bundled
            list shipped with the package.
    """

    price_kind: str
    ctr_kind: str
    k: int
    real_ctr_file: str | None = None

    def __post_init__(self) -> None:
        if self.price_kind not in PRICE_KINDS:
            raise ValueError(
                f"price_kind must be one of {PRICE_KINDS}, got {self.price_kind!r}"
            )
        if self.ctr_kind not in CTR_KINDS:
            raise ValueError(
                f"ctr_kind must be one of {CTR_KINDS}, got {self.ctr_kind!r}"
            )
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.ctr_kind == "easy_two_level" and self.k < EASY_HIGH_CTR_ARMS:
            raise ValueError(
                f"easy_two_level needs k >= {EASY_HIGH_CTR_ARMS}, got {self.k}"
            )
        if self.ctr_kind == "real_sample" and self.real_ctr_file is None:
            object.__setattr__(self, "real_ctr_file", str(bundled_ctr_path()))


def default_visibility(k: int, decay: float = 0.75) -> VisibilityProfile:
    """Bundled stand-in visibility profile: slot ``l`` sees ``l ** -decay``.

    Strictly decreasing from 1.0 at the top slot.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if decay <= 0.0:
        raise ValueError(f"decay must be > 0, got {decay}")
    return VisibilityProfile(tuple(float(l) ** -decay for l in range(1, k + 1)))


def bundled_ctr_path() -> Path:
    """Location of the CTR list shipped with the package."""
    return Path(str(resources.files("pbm_bandit.data").joinpath("ctr_sample.txt")))


def load_ctr_samples(path: str | Path | None = None) -> np.ndarray:
    """Read a CTR file: one rate per line, blank lines skipped.

    Args:
        path: File to read; ``None`` selects the bundled list.

    Returns:
        Array of rates, each validated to lie in [0, 1].
    """
    src = Path(path) if path is not None else bundled_ctr_path()
    values = []
    with open(src, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text:
                continue
            try:
                v = float(text)
            except ValueError:
                raise ValueError(
                    f"{src}:{lineno}: not a number: {text!r}"
                ) from None
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{src}:{lineno}: rate {v} outside [0, 1]")
            values.append(v)
    if not values:
        raise ValueError(f"{src}: no rates found")
    return np.array(values, dtype=float)


def simulate_clicks(
    ranking: Ranking,
    arms: Sequence[Arm],
    vis: VisibilityProfile,
    rng: np.random.Generator,
) -> ClickOutcome:
    """Sample one display's clicks: slot ``l`` clicks w.p. ``gamma_l * ctr``.

    Args:
        ranking: Arm ids by slot; must cover exactly the ids in ``arms``.
        arms: Ground-truth arms; every CTR must be set.
        vis: Visibility of the displayed slots.
        rng: Source of randomness.
    """
    if len(ranking) != len(arms) or len(arms) != len(vis):
        raise ValueError(
            f"ranking, arms and visibility must agree in length; got "
            f"{len(ranking)}, {len(arms)}, {len(vis)}"
        )
    ctr = {}
    for arm in arms:
        if arm.true_ctr is None:
            raise ValueError(f"arm {arm.id}: true_ctr is not set")
        ctr[arm.id] = arm.true_ctr
    if set(ranking.slots) != set(ctr):
        raise ValueError(
            f"ranking {ranking.slots} is not a permutation of the arm ids"
        )
    p = vis.as_array() * np.array([ctr[a] for a in ranking.slots])
    drawn = rng.random(len(ranking)) < p
    return ClickOutcome(tuple(int(x) for x in drawn))


def _draw_prices(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.price_kind == "fixed_one":
        return np.ones(spec.k)
    if spec.price_kind == "uniform_1_to_k":
        return rng.uniform(1.0, float(spec.k), size=spec.k)
    prices = rng.binomial(10, 0.5, size=spec.k).astype(float)
    while (zero := prices == 0.0).any():
        prices[zero] = rng.binomial(10, 0.5, size=int(zero.sum()))
    return prices


def _draw_ctrs(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.ctr_kind == "uniform_01_08":
        return rng.uniform(0.1, 0.8, size=spec.k)
    if spec.ctr_kind == "easy_two_level":
        ctrs = np.full(spec.k, 0.1)
        high = rng.choice(spec.k, size=EASY_HIGH_CTR_ARMS, replace=False)
        ctrs[high] = 0.8
        return ctrs
    pool = load_ctr_samples(spec.real_ctr_file)
    if spec.k > len(pool):
        raise ValueError(
            f"cannot draw {spec.k} rates without replacement from a "
            f"{len(pool)}-entry file"
        )
    return rng.choice(pool, size=spec.k, replace=False)


def generate_instance(spec: SyntheticSpec, rng: np.random.Generator) -> Instance:
    """Materialize a synthetic instance from its recipe.

    Arms get ids ``1..k`` and the bundled visibility profile.
    """
    prices = _draw_prices(spec, rng)
    ctrs = _draw_ctrs(spec, rng)
    arms = tuple(
        Arm(id=i + 1, price=float(p), true_ctr=float(c))
        for i, (p, c) in enumerate(zip(prices, ctrs))
    )
    return Instance(arms=arms, vis=default_visibility(spec.k))
