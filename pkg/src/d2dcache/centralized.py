"""Provider-side caching policies: exact optimum, greedy, bounds, trade-offs.

For the linear cost model the optimum over each item is attained at a corner
allocation (every user caches all of the item or none of it), so the cost as a
function of the reward r is the lower envelope of N+1 lines: one line per
cache multiplicity k, with intercept equal to the best uncovered load among
k-user sets and slope k times the item size. The envelope's crossing points
are the item's reward ladder; a smaller reward always means at least as much
caching.

Tie-breaking is deterministic everywhere: smaller cardinality first, then
lexicographically smallest user set / lowest user index. A reward exactly on a
breakpoint resolves to the smaller-caching regime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import CapacityError, InvalidArgumentError
from .loadmodel import CachingAllocation, CostBreakdown, proactive_cost
from .profiles import DERIVED_TOL, Scenario
from .staircase import TradeoffResult, intersect_staircase, staircase_from_drops

# The exact optimum enumerates the 2^N - 2 proper nonempty user sets per item.
EXACT_SEARCH_CAP = 16


@dataclass(frozen=True)
class LadderSegment:
    """One regime of an item's reward ladder: cache at ``users`` on [r_lo, r_hi)."""

    r_lo: float
    r_hi: float
    cache_count: int
    users: tuple[int, ...]


@dataclass(frozen=True)
class ThresholdLadder:
    """Reward breakpoints of one item, ordered by ascending r.

    Segments partition [0, inf) left-closed/right-open, with cache counts
    strictly decreasing. ``skipped_levels`` lists multiplicities that never
    appear on the envelope (the printed ladder always shows contiguous
    levels; the true envelope may skip some).
    """

    item: int
    segments: tuple[LadderSegment, ...]
    skipped_levels: tuple[int, ...]

    def breakpoints(self) -> list[tuple[float, int, tuple[int, ...]]]:
        """(r, cache count to the left, user set to the left) per crossing."""
        return [
            (seg.r_hi, seg.cache_count, seg.users)
            for seg in self.segments
            if math.isfinite(seg.r_hi)
        ]

    def regime(self, r: float) -> LadderSegment:
        for seg in self.segments:
            if seg.r_lo <= r < seg.r_hi:
                return seg
        return self.segments[-1]


@dataclass(frozen=True)
class PolicyResult:
    """A caching policy at one reward: allocation, per-item ladders, cost.

    ``work`` counts the uncovered-load evaluations performed per item
    (2^N - 2 for the exact search, N(N+1)/2 for greedy).
    """

    allocation: CachingAllocation
    ladders: tuple[ThresholdLadder, ...]
    cost: CostBreakdown
    work: tuple[int, ...]


class UncoveredBase:
    """Memoized uncovered load B_m(a) for one item, with an evaluation counter.

    B_m(a) is the expected bytes per slot the network must serve when exactly
    the users in ``a`` cache all of item m: every non-member pays their demand
    whenever no member shares their location.
    """

    def __init__(self, scenario: Scenario, item: int):
        self.scenario = scenario
        self.item = item
        self.evaluations = 0
        self._memo: dict[tuple[int, ...], float] = {}
        # (T, L) occupancy per user and (N, T) demand column for this item.
        self._theta = scenario.occupancy.theta
        self._p = scenario.demand_array[:, :, item]

    def value(self, members: Sequence[int]) -> float:
        key = tuple(sorted(set(members)))
        if key in self._memo:
            return self._memo[key]
        n_users = self.scenario.num_users
        if 1 <= len(key) <= n_users - 1:
            self.evaluations += 1
        size = self.scenario.sizes[self.item]
        if len(key) == n_users:
            val = 0.0
        else:
            outsiders = [k for k in range(n_users) if k not in key]
            if key:
                none_there = np.prod(1.0 - self._theta[list(key)], axis=0)  # (T, L)
                uncovered = 0.0
                for k in outsiders:
                    cov = np.sum(self._theta[k] * (1.0 - none_there), axis=1)  # (T,)
                    uncovered += float(np.mean(self._p[k] * (1.0 - cov)))
            else:
                uncovered = float(np.sum(np.mean(self._p[outsiders], axis=1)))
            val = size * uncovered
        self._memo[key] = val
        return val


def uncovered_base(scenario: Scenario, m: int, members: Sequence[int]) -> float:
    """Uncovered load of item m when exactly ``members`` fully cache it."""
    return UncoveredBase(scenario, m).value(members)


def _lower_envelope(
    intercepts: Sequence[float], slope_unit: float
) -> list[tuple[int, float, float]]:
    """Lower envelope of lines intercepts[k] + r*k*slope_unit on r >= 0.

    Returns (level, r_lo, r_hi) segments with strictly decreasing levels.
    """
    n_lines = len(intercepts)
    cur = min(range(n_lines), key=lambda k: (intercepts[k], k))
    r_cur = 0.0
    segs: list[tuple[int, float, float]] = []
    while cur > 0:
        best_r, best_level = math.inf, 0
        for k in range(cur):
            r_x = (intercepts[k] - intercepts[cur]) / ((cur - k) * slope_unit)
            if r_x < best_r:
                best_r, best_level = r_x, k
        best_r = max(best_r, r_cur)
        segs.append((cur, r_cur, best_r))
        cur, r_cur = best_level, best_r
    segs.append((0, r_cur, math.inf))
    return [(level, lo, hi) for level, lo, hi in segs if hi > lo]


def _ladder_from_envelope(
    item: int,
    segments: list[tuple[int, float, float]],
    best_sets: Sequence[tuple[int, ...]],
    n_users: int,
) -> ThresholdLadder:
    on_envelope = {level for level, _, _ in segments}
    skipped = tuple(k for k in range(n_users + 1) if k not in on_envelope)
    return ThresholdLadder(
        item=item,
        segments=tuple(
            LadderSegment(lo, hi, level, best_sets[level]) for level, lo, hi in segments
        ),
        skipped_levels=skipped,
    )


def _allocation_from_ladders(
    scenario: Scenario, ladders: Sequence[ThresholdLadder], r: float
) -> CachingAllocation:
    x = np.zeros((scenario.num_users, scenario.num_items))
    for ladder in ladders:
        seg = ladder.regime(r)
        for n in seg.users:
            x[n, ladder.item] = scenario.sizes[ladder.item]
    return CachingAllocation(x)


def _check_reward(r: float) -> None:
    if not 0.0 <= r <= 1.0:
        raise InvalidArgumentError(f"reward must lie in [0, 1], got {r!r}")


def optimal_policy(scenario: Scenario, r: float) -> PolicyResult:
    """Exact minimum-cost caching policy and the full reward ladder per item."""
    _check_reward(r)
    N = scenario.num_users
    if N > EXACT_SEARCH_CAP:
        raise CapacityError(
            f"exact search enumerates 2^{N} - 2 user sets per item; cap is "
            f"N <= {EXACT_SEARCH_CAP}. Use greedy_policy."
        )
    ladders = []
    work = []
    for m in range(scenario.num_items):
        base = UncoveredBase(scenario, m)
        best_sets: list[tuple[int, ...]] = [()] * (N + 1)
        intercepts = [0.0] * (N + 1)
        for k in range(N + 1):
            best_val, best_set = math.inf, ()
            for members in combinations(range(N), k):
                val = base.value(members)
                if val < best_val:
                    best_val, best_set = val, members
            best_sets[k] = best_set
            intercepts[k] = best_val
        segments = _lower_envelope(intercepts, float(scenario.sizes[m]))
        ladders.append(_ladder_from_envelope(m, segments, best_sets, N))
        work.append(base.evaluations)
    allocation = _allocation_from_ladders(scenario, ladders, r)
    return PolicyResult(
        allocation=allocation,
        ladders=tuple(ladders),
        cost=proactive_cost(scenario, allocation, r),
        work=tuple(work),
    )


def greedy_policy(scenario: Scenario, r: float) -> PolicyResult:
    """Polynomial policy: repeatedly add the user with the best marginal gain.

    The i-th marginal gain (per byte) is the item's i-th ladder value from the
    top; the allocation caches at the prefix whose gains strictly exceed r.
    Performs exactly N(N+1)/2 uncovered-load evaluations per item.
    """
    _check_reward(r)
    N = scenario.num_users
    ladders = []
    work = []
    for m in range(scenario.num_items):
        base = UncoveredBase(scenario, m)
        size = float(scenario.sizes[m])
        prefix: list[int] = []
        gains: list[float] = []
        candidates_evaluated = 0
        b_prev = base.value(())
        for _ in range(N):
            best_gain, best_user, best_val = -math.inf, -1, 0.0
            for j in range(N):
                if j in prefix:
                    continue
                val = base.value(tuple(prefix) + (j,))
                candidates_evaluated += 1
                gain = (b_prev - val) / size
                if gain > best_gain:
                    best_gain, best_user, best_val = gain, j, val
            prefix.append(best_user)
            gains.append(best_gain)
            b_prev = best_val
        ladders.append(_greedy_ladder(m, prefix, gains))
        work.append(candidates_evaluated)
    allocation = _allocation_from_ladders(scenario, ladders, r)
    return PolicyResult(
        allocation=allocation,
        ladders=tuple(ladders),
        cost=proactive_cost(scenario, allocation, r),
        work=tuple(work),
    )


def _greedy_ladder(item: int, prefix: list[int], gains: list[float]) -> ThresholdLadder:
    """Ladder from greedy marginal gains (non-increasing by submodularity)."""
    N = len(prefix)
    segments = []
    r_lo = 0.0
    # Regime "cache the first k picks" holds where gains[k-1] > r >= gains[k].
    for count in range(N, 0, -1):
        r_hi = gains[count - 1]
        if r_hi > r_lo:
            users = tuple(sorted(prefix[:count]))
            segments.append(LadderSegment(r_lo, r_hi, count, users))
            r_lo = r_hi
    segments.append(LadderSegment(r_lo, math.inf, 0, ()))
    on_envelope = {seg.cache_count for seg in segments}
    skipped = tuple(k for k in range(N + 1) if k not in on_envelope)
    return ThresholdLadder(item=item, segments=tuple(segments), skipped_levels=skipped)


def level1_scores(scenario: Scenario, m: int) -> np.ndarray:
    """Per-byte gain of caching item m once at each user (the level-1 list)."""
    base = UncoveredBase(scenario, m)
    b0 = base.value(())
    size = float(scenario.sizes[m])
    return np.array([(b0 - base.value((i,))) / size for i in range(scenario.num_users)])


@dataclass(frozen=True)
class GainBounds:
    """Proactive service gain with its greedy lower and additive upper bound.

    ``exact`` is None when the user count exceeds the exact-search cap; the
    bounds are always returned.
    """

    lower: float
    exact: float | None
    upper: float


def gain_bounds(scenario: Scenario, r: float) -> GainBounds:
    """Sandwich the optimal gain: greedy below, top-score sums above.

    The upper bound adds up, per item, the top-k level-1 scores minus k
    rewards with k the optimal regime's cache count (the bound is built per
    case; caching once makes all three coincide). Beyond the exact cap the
    upper bound takes the best k over all multiplicities instead.
    """
    _check_reward(r)
    greedy = greedy_policy(scenario, r)
    lower = greedy.cost.gain
    try:
        exact_result = optimal_policy(scenario, r)
        exact = exact_result.cost.gain
        counts = [ladder.regime(r).cache_count for ladder in exact_result.ladders]
    except CapacityError:
        exact = None
        counts = None
    upper = 0.0
    for m in range(scenario.num_items):
        scores = np.sort(level1_scores(scenario, m))[::-1]
        size = float(scenario.sizes[m])
        if counts is None:
            best = max(
                (float(scores[:k].sum()) - k * r for k in range(len(scores) + 1)),
                default=0.0,
            )
        else:
            k = counts[m]
            best = float(scores[:k].sum()) - k * r
        upper += max(0.0, best) * size
    return GainBounds(lower=lower, exact=exact, upper=upper)


@dataclass(frozen=True)
class TwoUserThresholds:
    """Closed-form N=2 regime constants for one item."""

    tau: tuple[float, float]
    rho: tuple[float, float]
    r_full: float       # below: cache at both
    r_none: float       # above: cache nowhere
    single_user: int    # who caches in the middle regime


def prop1_thresholds(scenario: Scenario, m: int) -> TwoUserThresholds:
    """The two-user regime constants: full below min tau, none above max rho."""
    if scenario.num_users != 2:
        raise InvalidArgumentError("two-user thresholds require N = 2")
    theta = scenario.occupancy.theta
    meet = np.sum(theta[0] * theta[1], axis=1)  # (T,)
    p = scenario.demand_array[:, :, m]  # (N, T)
    tau = tuple(float(np.mean(p[i] * (1.0 - meet))) for i in range(2))
    rho = tuple(float(np.mean(p[i] + p[1 - i] * meet)) for i in range(2))
    single = 0 if tau[0] >= tau[1] else 1
    return TwoUserThresholds(
        tau=tau, rho=rho, r_full=min(tau), r_none=max(rho), single_user=single
    )


@dataclass(frozen=True)
class ThreeUserThresholds:
    """Closed-form N=3 regime constants and rankings for one item."""

    r_full: float                 # below: cache at all three
    r_once: float                 # above: caching once beats twice
    r_none: float                 # above: cache nowhere
    single_user: int
    pair: tuple[int, int]

    def cache_count(self, r: float) -> int:
        """Regime decision with breakpoints resolving to the smaller regime."""
        if r < self.r_full:
            return 3
        if r >= self.r_none:
            return 0
        if r >= self.r_once:
            return 1
        return 2


def prop2_thresholds(scenario: Scenario, m: int) -> ThreeUserThresholds:
    """The three-user closed forms: full/once/none thresholds plus rankings.

    The once-vs-twice threshold is the marginal gain of the best pair over
    the best single cacher, evaluated at the ranking selections: an
    unrestricted max over every (single, added user) ordering can exceed the
    true regime boundary whenever a weakly-covering user has a large marginal
    toward a strong pair, which would contradict the exact optimum. A
    counting argument over covered demand shows the three thresholds are
    always ordered and the three-user envelope never skips a multiplicity, so
    these closed forms reproduce the exact regime boundaries.
    """
    if scenario.num_users != 3:
        raise InvalidArgumentError("three-user thresholds require N = 3")
    theta = scenario.occupancy.theta
    p = scenario.demand_array[:, :, m]  # (N, T)

    def meet(i: int, j: int) -> np.ndarray:
        return np.sum(theta[i] * theta[j], axis=1)

    def cover_pair(k: int, i: int, j: int) -> np.ndarray:
        # user k met by i or j, per slot
        none = (1.0 - theta[i]) * (1.0 - theta[j])
        return np.sum(theta[k] * (1.0 - none), axis=1)

    # Isolation-discounted interests; caching three times pays below the least.
    discounted = [
        float(np.mean(p[i] * (1.0 - cover_pair(i, j, k))))
        for i, j, k in ((0, 1, 2), (1, 0, 2), (2, 0, 1))
    ]
    r_full = min(discounted)

    scores = level1_scores(scenario, m)
    r_none = float(np.max(scores))
    single_user = int(np.argmax(scores))
    # Uncovered load of the best single cacher, per byte.
    best_single_base = min(
        float(np.mean(p[j] * (1.0 - meet(i, j)) + p[k] * (1.0 - meet(i, k))))
        for i, j, k in ((0, 1, 2), (1, 0, 2), (2, 0, 1))
    )
    # Best pair leaves the least isolation-discounted user uncovered, so the
    # best pair's uncovered load per byte is exactly r_full.
    r_once = best_single_base - r_full

    best_pair, best_val = (0, 1), -math.inf
    for i, j in combinations(range(3), 2):
        k = 3 - i - j
        val = float(np.mean(p[i] + p[j] + p[k] * cover_pair(k, i, j)))
        if val > best_val:
            best_pair, best_val = (i, j), val
    return ThreeUserThresholds(
        r_full=r_full, r_once=r_once, r_none=r_none,
        single_user=single_user, pair=best_pair,
    )


def reward_tradeoff(scenario: Scenario, beta: float) -> TradeoffResult:
    """Pick the reward where the provider's memory-value staircase meets Z = beta*r."""
    if beta <= 0.0:
        raise InvalidArgumentError(f"users' preference slope must be positive, got {beta!r}")
    result = optimal_policy(scenario, 0.0)
    drops = []
    for ladder in result.ladders:
        size = float(scenario.sizes[ladder.item])
        for r_b, count_left, _ in ladder.breakpoints():
            seg_right = ladder.regime(r_b)
            drops.append((r_b, (count_left - seg_right.cache_count) * size))
    levels = staircase_from_drops(drops)
    z_star, r_star = intersect_staircase(levels, 1.0 / beta)
    return TradeoffResult(staircase=tuple(levels), z_star=z_star, r_star=r_star)


def similarity_policy(
    scenario: Scenario,
    r: float,
    uniform: bool = False,
    l_infinity: bool = False,
) -> PolicyResult:
    """Policy for users with identical mobility, via the closed-form ranking.

    With shared occupancy the best k-user set maximizes coverage-weighted
    interest, so the whole ladder needs only O(N^2) work. ``uniform`` forces
    the shared occupancy to 1/L per location; ``l_infinity`` takes the
    many-locations limit in which meeting probabilities vanish and breakpoints
    collapse to the users' plain average interests.
    """
    _check_reward(r)
    theta = scenario.occupancy.theta
    if not np.all(np.abs(theta - theta[0]) <= DERIVED_TOL):
        raise InvalidArgumentError(
            "similarity policy requires identical occupancy rows for all users"
        )
    N, T, L = scenario.num_users, scenario.num_slots, scenario.num_locations
    shared = np.full((T, L), 1.0 / L) if uniform else theta[0]
    p_all = scenario.demand_array  # (N, T, M)

    # cover_weight[k, t]: chance an outsider meets at least one of k cachers.
    cover_weight = np.zeros((N + 1, T))
    if not l_infinity:
        for k in range(1, N + 1):
            cover_weight[k] = np.sum(shared * (1.0 - (1.0 - shared) ** k), axis=1)

    ladders = []
    for m in range(scenario.num_items):
        size = float(scenario.sizes[m])
        p = p_all[:, :, m]  # (N, T)
        total = p.sum(axis=0)  # (T,)
        best_sets: list[tuple[int, ...]] = [()] * (N + 1)
        intercepts = [0.0] * (N + 1)
        for k in range(N + 1):
            weighted = ((1.0 - cover_weight[k])[None, :] * p).mean(axis=1)  # (N,)
            order = sorted(range(N), key=lambda i: (-weighted[i], i))
            members = tuple(sorted(order[:k]))
            uncovered = float(
                np.mean((1.0 - cover_weight[k]) * (total - p[list(members)].sum(axis=0)))
            ) if k < N else 0.0
            best_sets[k] = members
            intercepts[k] = size * uncovered
        segments = _lower_envelope(intercepts, size)
        ladders.append(_ladder_from_envelope(m, segments, best_sets, N))
    allocation = _allocation_from_ladders(scenario, ladders, r)
    cost = proactive_cost(scenario, allocation, r)
    return PolicyResult(allocation=allocation, ladders=tuple(ladders), cost=cost, work=())
