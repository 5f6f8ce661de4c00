"""Mobility-aware D2D caching: policies, pricing game, and validation tools."""

from .errors import (
    CapacityError,
    D2DCacheError,
    InvalidArgumentError,
    InvalidProfileError,
)
from .profiles import (
    DemandProfile,
    MobilityProfile,
    OccupancyTensor,
    Scenario,
    build_occupancy,
    build_scenario,
    colocate_exact_prob,
    coverage_prob,
    isolation_factor,
    pairwise_meeting_avg,
    validate_scenario,
)
from .loadmodel import (
    CachingAllocation,
    CostBreakdown,
    PaymentBreakdown,
    average_proactive_load,
    payment_breakdown,
    per_user_load,
    proactive_cost,
    proactive_load,
    proactive_load_literal,
    reactive_cost,
    user_proactive_payment,
    user_reactive_payment,
)
from .centralized import (
    GainBounds,
    LadderSegment,
    PolicyResult,
    ThresholdLadder,
    ThreeUserThresholds,
    TwoUserThresholds,
    UncoveredBase,
    gain_bounds,
    greedy_policy,
    level1_scores,
    optimal_policy,
    prop1_thresholds,
    prop2_thresholds,
    reward_tradeoff,
    similarity_policy,
    uncovered_base,
)
from .decentralized import (
    GameOutcome,
    MemoryTradeoff,
    UserThresholds,
    best_response,
    memory_tradeoff,
    mobility_limit_policy,
    risk_dominant,
    spne_fair,
    user_thresholds,
    verify_nash,
)
from .montecarlo import (
    ComparisonReport,
    ExactMismatchError,
    SimulationConfig,
    SimulationReport,
    compare_analytic,
    simulate,
)
from .staircase import StaircaseLevel, TradeoffResult

__version__ = "0.1.0"
