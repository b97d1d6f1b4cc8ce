"""Bandit simulator for position-based pay-per-click ad auctions."""

from .environment import (
    ClickOutcome,
    Instance,
    SyntheticSpec,
    default_visibility,
    generate_instance,
    load_ctr_samples,
    simulate_clicks,
)
from .harness import (
    AggregateResult,
    RunResult,
    aggregate,
    check_bound,
    ecpi_errors,
    error_vs_opportunities,
    replay_run_many,
    replay_run_once,
    run_many,
    run_once,
)
from .pbm import (
    Arm,
    BoundConstants,
    DegenerateInstanceError,
    Ranking,
    VisibilityProfile,
    action_gap,
    bound_constants,
    c_gamma,
    expected_reward,
    optimal_ranking,
    regret_bound,
)
from .policy import (
    BanditState,
    PolicyConfig,
    exploration_bonus,
    init_state,
    select_ranking,
    state_from_json,
    state_to_json,
    theta_hat,
    ucb_index,
    update,
    warm_start,
)
from .replay import (
    AuctionLog,
    CatalogEntry,
    LogFormatError,
    RoundRecord,
    filter_top_quantile,
    generate_log,
    load_log,
    nearest_rank_quantile,
    replay_round,
    save_log,
    split_groups,
)
from .tail_guard import (
    GuardedScores,
    TailGuardConfig,
    guarded_ctr,
    guarded_rank,
    top_slot_count,
)

__version__ = "0.1.0"
