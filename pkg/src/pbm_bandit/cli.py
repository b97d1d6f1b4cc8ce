"""Command-line front end: seeded experiments with reproducible artifacts.

Every subcommand resolves its settings from an optional JSON config file
plus flag overrides, runs deterministically from the master seed, and
writes its outputs (CSV traces, JSON reports, a manifest echoing the
resolved config) into the output directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .environment import (
    CTR_KINDS,
    PRICE_KINDS,
    Instance,
    SyntheticSpec,
    default_visibility,
    generate_instance,
)
from .harness import (
    aggregate,
    check_bound,
    replay_run_many,
    run_many,
    write_errors_csv,
    write_trace_csv,
)
from .pbm import Arm, VisibilityProfile
from .policy import MODES as POLICY_MODES
from .policy import PolicyConfig
from .replay import (
    filter_top_quantile,
    generate_log,
    load_log,
    nearest_rank_quantile,
    save_log,
    split_groups,
)
from .tail_guard import TailGuardConfig

__all__ = ["ExperimentConfig", "parse_config", "run", "main"]

EXPERIMENT_MODES = ("synthetic", "replay", "bound_check", "tail_guard_demo")

# Seed stream reserved for instance generation so run indices never collide.
_INSTANCE_STREAM = 999_999_937


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment settings.

    Attributes:
        mode: What to run; one of ``synthetic``, ``replay``, ``bound_check``,
            ``tail_guard_demo``.
        rounds: Display rounds per run.
        runs: Independent runs to average.
        delta: Exploration coefficient.
        window: Trailing-average width for smoothed traces.
        seed: Master seed; per-run seeds derive from (seed, run index).
        jobs: Worker processes (1 = in-process).
        out: Output directory.
        policy: Learner variant for synthetic runs.
        synthetic: Instance recipe (synthetic, bound_check, tail_guard_demo).
        log: Auction log path (replay).
        quantile: Exposure quantile arms must reach to enter replay.
        split_quantile: Exposure quantile separating confident from cold arms.
        beta: Tail guard: visibility share the protected head covers.
        alpha: Tail guard: confidence-radius threshold.
        baseline_noise: Tail demo: relative noise on the production CTRs.
        reference: ``"k2"`` pins bound_check to the two-arm reference instance.
    """

    mode: str
    rounds: int = 20000
    runs: int = 24
    delta: float = 1.5
    window: int = 50
    seed: int = 0
    jobs: int = 1
    out: str = "results"
    policy: str = "auction_ucb"
    synthetic: SyntheticSpec | None = None
    log: str | None = None
    quantile: float = 0.8
    split_quantile: float = 0.5
    beta: float = 0.4
    alpha: float = 0.05
    baseline_noise: float = 0.15
    reference: str | None = None

    def __post_init__(self) -> None:
        if self.mode not in EXPERIMENT_MODES:
            raise ValueError(
                f"config.mode: must be one of {EXPERIMENT_MODES}, got {self.mode!r}"
            )
        if self.rounds < 1:
            raise ValueError(f"config.rounds: must be >= 1, got {self.rounds}")
        if self.runs < 1:
            raise ValueError(f"config.runs: must be >= 1, got {self.runs}")
        if self.delta <= 0.0:
            raise ValueError(f"config.delta: must be > 0, got {self.delta}")
        if self.window < 1:
            raise ValueError(f"config.window: must be >= 1, got {self.window}")
        if self.jobs < 1:
            raise ValueError(f"config.jobs: must be >= 1, got {self.jobs}")
        if self.policy not in POLICY_MODES:
            raise ValueError(
                f"config.policy: must be one of {POLICY_MODES}, got {self.policy!r}"
            )
        if not 0.0 <= self.quantile < 1.0:
            raise ValueError(
                f"config.quantile: must lie in [0, 1), got {self.quantile}"
            )
        if not 0.0 <= self.split_quantile < 1.0:
            raise ValueError(
                f"config.split_quantile: must lie in [0, 1), got {self.split_quantile}"
            )
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"config.beta: must lie in (0, 1], got {self.beta}")
        if self.alpha <= 0.0:
            raise ValueError(f"config.alpha: must be > 0, got {self.alpha}")
        if self.baseline_noise < 0.0:
            raise ValueError(
                f"config.baseline_noise: must be >= 0, got {self.baseline_noise}"
            )
        if self.reference is not None and self.reference != "k2":
            raise ValueError(
                f"config.reference: only 'k2' is defined, got {self.reference!r}"
            )
        if self.mode in ("synthetic", "tail_guard_demo") and self.synthetic is None:
            raise ValueError(f"config.synthetic: required for mode {self.mode!r}")
        if self.mode == "bound_check" and self.synthetic is None and self.reference is None:
            raise ValueError(
                "config.synthetic: required for mode 'bound_check' unless "
                "config.reference is set"
            )
        if self.mode == "replay" and self.log is None:
            raise ValueError("config.log: required for mode 'replay'")

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready echo of the resolved settings."""
        doc = dataclasses.asdict(self)
        if self.synthetic is not None:
            doc["synthetic"] = dataclasses.asdict(self.synthetic)
        return doc


_INT_FIELDS = ("rounds", "runs", "window", "seed", "jobs")
_FLOAT_FIELDS = (
    "delta",
    "quantile",
    "split_quantile",
    "beta",
    "alpha",
    "baseline_noise",
)
_STR_FIELDS = ("mode", "out", "policy", "log", "reference")
_SYNTH_FIELDS = ("price_kind", "ctr_kind", "k", "real_ctr_file")


def _as_int(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{path}: expected an integer, got {value!r}")
    return value


def _as_float(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _as_str(value: Any, path: str) -> str:
    if not isinstance(value, str):
        raise ValueError(f"{path}: expected a string, got {value!r}")
    return value


def _parse_synthetic(raw: Any, path: str) -> SyntheticSpec:
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected an object, got {raw!r}")
    unknown = set(raw) - set(_SYNTH_FIELDS)
    if unknown:
        raise ValueError(f"{path}: unknown field {sorted(unknown)[0]!r}")
    for req in ("price_kind", "ctr_kind", "k"):
        if req not in raw:
            raise ValueError(f"{path}.{req}: missing required field")
    ctr_file = raw.get("real_ctr_file")
    if ctr_file is not None:
        ctr_file = _as_str(ctr_file, f"{path}.real_ctr_file")
    try:
        return SyntheticSpec(
            price_kind=_as_str(raw["price_kind"], f"{path}.price_kind"),
            ctr_kind=_as_str(raw["ctr_kind"], f"{path}.ctr_kind"),
            k=_as_int(raw["k"], f"{path}.k"),
            real_ctr_file=ctr_file,
        )
    except ValueError as err:
        if str(err).startswith(path):
            raise
        raise ValueError(f"{path}: {err}") from None


def parse_config(
    source: str | Path | dict[str, Any], overrides: dict[str, Any] | None = None
) -> ExperimentConfig:
    """Resolve an experiment config from JSON plus overrides.

    Accepts either a bare config document or a manifest emitted by a
    previous run (its ``config`` entry is used), so re-running from a
    manifest reproduces the original experiment.

    Args:
        source: Path to a JSON file, or an already-parsed document.
        overrides: Flag-level overrides applied on top.

    Raises:
        ValueError: On any schema violation, naming the offending field.
    """
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as err:
                raise ValueError(f"{source}: bad JSON: {err}") from None
    else:
        doc = source
    if not isinstance(doc, dict):
        raise ValueError("config: expected a JSON object")
    if "config" in doc and "seeds" in doc:
        doc = doc["config"]
        if not isinstance(doc, dict):
            raise ValueError("config: manifest 'config' entry must be an object")
    doc = dict(doc)
    for key, value in (overrides or {}).items():
        if value is not None:
            doc[key] = value

    known = set(_INT_FIELDS) | set(_FLOAT_FIELDS) | set(_STR_FIELDS) | {"synthetic"}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"config: unknown field {sorted(unknown)[0]!r}")
    if "mode" not in doc:
        raise ValueError("config.mode: missing required field")

    kwargs: dict[str, Any] = {}
    for name in _INT_FIELDS:
        if name in doc:
            kwargs[name] = _as_int(doc[name], f"config.{name}")
    for name in _FLOAT_FIELDS:
        if name in doc:
            kwargs[name] = _as_float(doc[name], f"config.{name}")
    for name in _STR_FIELDS:
        if name in doc and doc[name] is not None:
            kwargs[name] = _as_str(doc[name], f"config.{name}")
    if doc.get("synthetic") is not None:
        kwargs["synthetic"] = _parse_synthetic(doc["synthetic"], "config.synthetic")
    return ExperimentConfig(**kwargs)


def reference_instance_k2() -> Instance:
    """The two-arm instance used for hand-checked bound arithmetic."""
    arms = (
        Arm(id=1, price=1.0, true_ctr=0.8),
        Arm(id=2, price=1.0, true_ctr=0.1),
    )
    return Instance(arms=arms, vis=VisibilityProfile((1.0, 0.5)))


def _instance_rng(cfg: ExperimentConfig) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, _INSTANCE_STREAM]))


def _resolve_instance(cfg: ExperimentConfig) -> Instance:
    if cfg.mode == "bound_check" and cfg.reference == "k2":
        return reference_instance_k2()
    assert cfg.synthetic is not None
    return generate_instance(cfg.synthetic, _instance_rng(cfg))


def _write_manifest(
    cfg: ExperimentConfig,
    out_dir: Path,
    artifacts: list[str],
    started: float,
    notes: dict[str, Any] | None = None,
) -> None:
    manifest = {
        "config": cfg.to_dict(),
        "seeds": [[cfg.seed, i] for i in range(cfg.runs)],
        "artifacts": sorted(artifacts),
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    if notes:
        manifest["notes"] = notes
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {path}")


def _run_synthetic(cfg: ExperimentConfig, out_dir: Path, started: float) -> int:
    instance = _resolve_instance(cfg)
    policy = PolicyConfig(delta=cfg.delta, mode=cfg.policy)
    print(
        f"synthetic: k={len(instance.arms)} policy={cfg.policy} "
        f"runs={cfg.runs} rounds={cfg.rounds} seed={cfg.seed}"
    )
    runs = run_many(instance, policy, cfg.rounds, cfg.runs, cfg.seed, jobs=cfg.jobs)
    agg = aggregate(runs, cfg.window)
    trace = out_dir / "trace.csv"
    errors = out_dir / "errors.csv"
    write_trace_csv(agg, trace)
    write_errors_csv(runs, instance.arms, errors)
    print(f"wrote {trace}")
    print(f"wrote {errors}")
    final = float(agg.mean_regret_over_t[-1])
    print(f"mean regret/t at round {cfg.rounds}: {final:.6f}")
    _write_manifest(cfg, out_dir, [trace.name, errors.name], started)
    return 0


def _run_replay(cfg: ExperimentConfig, out_dir: Path, started: float) -> int:
    assert cfg.log is not None
    log = load_log(cfg.log)
    filtered = filter_top_quantile(log, cfg.quantile)
    counts = [e.opportunities for e in filtered.catalog]
    threshold = int(nearest_rank_quantile(counts, cfg.split_quantile))
    split = split_groups(filtered, threshold)
    max_parts = max(len(r.participants) for r in filtered.rounds)
    vis = default_visibility(max_parts)
    print(
        f"replay: arms={len(filtered.catalog)} rounds={len(filtered.rounds)} "
        f"(dropped {filtered.dropped_rounds}) confident={len(split[0])} "
        f"cold={len(split[1])} threshold={threshold} seed={cfg.seed}"
    )
    artifacts = []
    finals = {}
    cold_arms = [a for a in filtered.arms() if a.id in set(split[1])]
    for mode in POLICY_MODES:
        policy = PolicyConfig(delta=cfg.delta, mode=mode)
        runs = replay_run_many(
            filtered, vis, policy, split, cfg.runs, cfg.seed, jobs=cfg.jobs
        )
        agg = aggregate(runs, cfg.window)
        trace = out_dir / f"trace_{mode}.csv"
        write_trace_csv(agg, trace)
        artifacts.append(trace.name)
        print(f"wrote {trace}")
        if cold_arms:
            errors = out_dir / f"errors_{mode}.csv"
            write_errors_csv(runs, cold_arms, errors)
            artifacts.append(errors.name)
            print(f"wrote {errors}")
        finals[mode] = float(
            np.mean([r.cumulative_regret[-1] for r in runs])
        )
        print(f"{mode}: mean final cumulative regret {finals[mode]:.3f}")
    _write_manifest(
        cfg,
        out_dir,
        artifacts,
        started,
        notes={
            "split_threshold": threshold,
            "dropped_rounds": filtered.dropped_rounds,
            "replayed_rounds": len(filtered.rounds),
            "final_cumulative_regret": finals,
        },
    )
    return 0


def _run_bound_check(cfg: ExperimentConfig, out_dir: Path, started: float) -> int:
    instance = _resolve_instance(cfg)
    policy = PolicyConfig(delta=cfg.delta, mode="auction_ucb")
    print(
        f"bound_check: k={len(instance.arms)} runs={cfg.runs} "
        f"rounds={cfg.rounds} seed={cfg.seed}"
    )
    runs = run_many(instance, policy, cfg.rounds, cfg.runs, cfg.seed, jobs=cfg.jobs)
    report = check_bound(runs, instance, cfg.rounds, cfg.delta)
    path = out_dir / "bound_report.json"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {path}")
    for cp, m, b in zip(
        report["checkpoints"], report["mean_cumulative_regret"], report["bound"]
    ):
        print(f"t={cp}: mean regret {m:.4f} vs ceiling {b:.4f}")
    _write_manifest(cfg, out_dir, [path.name], started, notes={"holds": report["holds"]})
    if not report["holds"]:
        print("regret ceiling violated", file=sys.stderr)
        return 1
    return 0


def _run_tail_demo(cfg: ExperimentConfig, out_dir: Path, started: float) -> int:
    instance = _resolve_instance(cfg)
    policy = PolicyConfig(delta=cfg.delta, mode="auction_ucb")
    guard = TailGuardConfig(beta=cfg.beta, alpha=cfg.alpha)
    noise_rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, _INSTANCE_STREAM + 1])
    )
    truth = np.array([a.true_ctr for a in instance.arms])
    baseline = np.clip(
        truth * (1.0 + cfg.baseline_noise * noise_rng.standard_normal(len(truth))),
        0.0,
        1.0,
    )
    print(
        f"tail_guard_demo: k={len(instance.arms)} beta={cfg.beta} alpha={cfg.alpha} "
        f"runs={cfg.runs} rounds={cfg.rounds} seed={cfg.seed}"
    )
    guarded = run_many(
        instance,
        policy,
        cfg.rounds,
        cfg.runs,
        cfg.seed,
        jobs=cfg.jobs,
        tail_guard=guard,
        baseline_ctr=baseline,
    )
    plain = run_many(instance, policy, cfg.rounds, cfg.runs, cfg.seed, jobs=cfg.jobs)
    artifacts = []
    for name, runs in (("guarded", guarded), ("unguarded", plain)):
        agg = aggregate(runs, cfg.window)
        trace = out_dir / f"trace_{name}.csv"
        write_trace_csv(agg, trace)
        artifacts.append(trace.name)
        print(f"wrote {trace}")
        print(
            f"{name}: mean final cumulative regret "
            f"{float(np.mean([r.cumulative_regret[-1] for r in runs])):.3f}"
        )
    _write_manifest(cfg, out_dir, artifacts, started)
    return 0


_RUNNERS = {
    "synthetic": _run_synthetic,
    "replay": _run_replay,
    "bound_check": _run_bound_check,
    "tail_guard_demo": _run_tail_demo,
}


def run(cfg: ExperimentConfig) -> int:
    """Execute a resolved experiment; returns the process exit code."""
    started = time.perf_counter()
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    return _RUNNERS[cfg.mode](cfg, out_dir, started)


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (or a previous manifest)")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--runs", type=int, help="independent runs (default 24)")
    p.add_argument("--rounds", type=int, help="rounds per run (default 20000)")
    p.add_argument("--delta", type=float, help="exploration coefficient (default 1.5)")
    p.add_argument("--window", type=int, help="smoothing window (default 50)")
    p.add_argument("--jobs", type=int, help="worker processes (default 1)")
    p.add_argument("--out", help="output directory (default 'results')")


def _add_synthetic_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--price-kind", choices=PRICE_KINDS, dest="price_kind")
    p.add_argument("--ctr-kind", choices=CTR_KINDS, dest="ctr_kind")
    p.add_argument("--k", type=int, help="number of arms")
    p.add_argument("--ctr-file", dest="real_ctr_file", help="CTR list for real_sample")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pbm-bandit",
        description="Position-based pay-per-click bandit experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthetic", help="learning curves on a synthetic menu")
    _add_common_flags(p)
    _add_synthetic_flags(p)
    p.add_argument("--policy", choices=POLICY_MODES, help="learner variant")

    p = sub.add_parser("replay", help="replay a logged auction stream")
    _add_common_flags(p)
    p.add_argument("--log", help="auction log (newline-delimited JSON)")
    p.add_argument("--quantile", type=float, help="exposure entry quantile (default 0.8)")
    p.add_argument(
        "--split-quantile",
        type=float,
        dest="split_quantile",
        help="confident/cold exposure quantile (default 0.5)",
    )

    p = sub.add_parser("bound-check", help="compare regret against its ceiling")
    _add_common_flags(p)
    _add_synthetic_flags(p)
    p.add_argument(
        "--reference",
        choices=("k2",),
        help="use the hand-checked two-arm instance",
    )

    p = sub.add_parser("tail-demo", help="guarded vs unguarded rollout")
    _add_common_flags(p)
    _add_synthetic_flags(p)
    p.add_argument("--beta", type=float, help="protected visibility share (default 0.4)")
    p.add_argument("--alpha", type=float, help="confidence threshold (default 0.05)")
    p.add_argument(
        "--baseline-noise",
        type=float,
        dest="baseline_noise",
        help="relative noise on production CTRs (default 0.15)",
    )

    p = sub.add_parser("gen-log", help="synthesize an auction log")
    p.add_argument("--arms", type=int, default=150, help="catalog size")
    p.add_argument("--log-rounds", type=int, default=30000, dest="log_rounds")
    p.add_argument("--regions", type=int, default=12)
    p.add_argument("--min-participants", type=int, default=2, dest="min_participants")
    p.add_argument("--max-participants", type=int, default=10, dest="max_participants")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="auction_log.ndjson", help="output file")
    return parser


_MODE_BY_COMMAND = {
    "synthetic": "synthetic",
    "replay": "replay",
    "bound-check": "bound_check",
    "tail-demo": "tail_guard_demo",
}

_SYNTH_OVERRIDE_KEYS = ("price_kind", "ctr_kind", "k", "real_ctr_file")


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides: dict[str, Any] = {"mode": _MODE_BY_COMMAND[args.command]}
    for name in (
        "seed",
        "runs",
        "rounds",
        "delta",
        "window",
        "jobs",
        "out",
        "policy",
        "log",
        "quantile",
        "split_quantile",
        "beta",
        "alpha",
        "baseline_noise",
        "reference",
    ):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value

    base: dict[str, Any] | str = args.config if args.config else {}
    synth_over = {
        k: getattr(args, k) for k in _SYNTH_OVERRIDE_KEYS if getattr(args, k, None) is not None
    }
    if synth_over:
        # Merge flag-level synthetic fields over whatever the file provides.
        if isinstance(base, str):
            with open(base, encoding="utf-8") as fh:
                doc = json.load(fh)
            if isinstance(doc, dict) and "config" in doc and "seeds" in doc:
                doc = doc["config"]
            base = doc if isinstance(doc, dict) else {}
        synth = dict(base.get("synthetic") or {})
        synth.update(synth_over)
        overrides["synthetic"] = synth
        # parse_config re-validates the merged document.
        merged = dict(base)
        merged.update({k: v for k, v in overrides.items() if v is not None})
        return parse_config(merged)
    return parse_config(base, overrides)


def main(argv: Sequence[str] | None = None) -> int:
    """CLI entry point; returns the exit code."""
    args = _build_parser().parse_args(argv)
    if args.command == "gen-log":
        rng = np.random.default_rng(np.random.SeedSequence([args.seed]))
        log = generate_log(
            k=args.arms,
            n_rounds=args.log_rounds,
            n_regions=args.regions,
            rng=rng,
            participants=(args.min_participants, args.max_participants),
        )
        save_log(log, args.out)
        print(
            f"wrote {args.out}: {len(log.catalog)} arms, {len(log.rounds)} rounds"
        )
        return 0
    try:
        cfg = _config_from_args(args)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
