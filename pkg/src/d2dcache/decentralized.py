"""The users' caching game under an announced off-peak price.

Each user n compares the price r' with two per-item statistics: the plain
average interest p_hat and the isolation-discounted interest p_tilde (interest
weighted by the chance of being alone). Below p_tilde caching everything is
dominant; above p_hat caching nothing is dominant; in between one copy of the
item is worth splitting, and the split is not unique. The fair rule splits it
proportionally to interest; the risk rule has every user best-respond to a
worst-knowledge belief about the others. Equilibria are certified by an exact
unilateral best-response check.

The per-item game decomposes: items never interact, so each item is solved
independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from .errors import InvalidArgumentError
from .loadmodel import (
    CachingAllocation,
    PaymentBreakdown,
    payment_breakdown,
    user_group_events,
)
from .profiles import Scenario, isolation_factors
from .staircase import TradeoffResult, intersect_staircase, staircase_from_drops

NASH_TOL = 1e-9
MAX_BR_ROUNDS = 100


@dataclass(frozen=True)
class UserThresholds:
    """Per (user, item) full/none price thresholds, each of shape (N, M)."""

    interest: np.ndarray            # p_hat: plain average interest
    discounted: np.ndarray          # p_tilde: isolation-discounted interest


def user_thresholds(scenario: Scenario) -> UserThresholds:
    p = scenario.demand_array  # (N, T, M)
    alone = 1.0 - isolation_factors(scenario.occupancy)  # (N, T)
    return UserThresholds(
        interest=p.mean(axis=1),
        discounted=(p * alone[:, :, None]).mean(axis=1),
    )


class ItemGame:
    """Exact per-item payment machinery shared by all game operations."""

    def __init__(self, scenario: Scenario, item: int):
        self.scenario = scenario
        self.item = item
        self.size = float(scenario.sizes[item])
        self.p = scenario.demand_array[:, :, item]  # (N, T)
        # Per user: co-location events with the focal user removed.
        self.partners: list[list[tuple[tuple[int, ...], np.ndarray]]] = []
        self.alone: np.ndarray = np.ones((scenario.num_users, scenario.num_slots))
        for n in range(scenario.num_users):
            events = user_group_events(scenario, n)
            self.partners.append(
                [(tuple(k for k in members if k != n), prob) for members, prob in events]
            )
            for _, prob in events:
                self.alone[n] -= prob

    def payment(self, n: int, x_col: np.ndarray, r_prime: float) -> float:
        """Expected per-slot payment of user n for this item."""
        expected = self.alone[n] * (self.size - x_col[n])
        for group, prob in self.partners[n]:
            residual = self.size - x_col[n] - sum(x_col[k] for k in group)
            if residual > 0.0:
                expected = expected + prob * residual
        return float(np.mean(self.p[n] * expected) + r_prime * x_col[n])

    def best_response(self, n: int, x_col: np.ndarray, r_prime: float) -> float:
        """Payment-minimizing cache amount; ties resolve to the smallest."""
        candidates = {0.0, self.size}
        for group, _ in self.partners[n]:
            clamp = self.size - sum(x_col[k] for k in group)
            if 0.0 < clamp < self.size:
                candidates.add(clamp)
        best_x, best_pay = 0.0, math.inf
        for cand in sorted(candidates):
            trial = x_col.copy()
            trial[n] = cand
            pay = self.payment(n, trial, r_prime)
            if pay < best_pay - 1e-15:
                best_x, best_pay = cand, pay
        return best_x


@dataclass(frozen=True)
class GameOutcome:
    """A decentralized solution: allocation, payments, regimes, certification.

    ``nash_gap`` is the largest payment improvement any user could get by a
    unilateral deviation (None when certification does not apply, e.g. the
    mobility-limit schematics). ``converged`` reports whether best-response
    iteration reached a fixed point.
    """

    allocation: CachingAllocation
    payments: PaymentBreakdown
    regimes: tuple[tuple[str, ...], ...]  # [user][item] in {full, partial, none}
    selection: str
    nash_gap: float | None
    converged: bool = True

    @property
    def nash_certified(self) -> bool:
        return self.nash_gap is not None and self.nash_gap <= NASH_TOL


def _check_price(r_prime: float) -> None:
    if not 0.0 <= r_prime <= 1.0:
        raise InvalidArgumentError(f"off-peak price must lie in [0, 1], got {r_prime!r}")


def _regime_labels(scenario: Scenario, x: np.ndarray) -> tuple[tuple[str, ...], ...]:
    labels = []
    for n in range(scenario.num_users):
        row = []
        for m in range(scenario.num_items):
            if x[n, m] >= scenario.sizes[m] - 1e-9:
                row.append("full")
            elif x[n, m] <= 1e-9:
                row.append("none")
            else:
                row.append("partial")
        labels.append(tuple(row))
    return tuple(labels)


def _outcome(
    scenario: Scenario,
    x: np.ndarray,
    r_prime: float,
    selection: str,
    nash_gap: float | None,
    converged: bool = True,
) -> GameOutcome:
    alloc = CachingAllocation(x)
    return GameOutcome(
        allocation=alloc,
        payments=payment_breakdown(scenario, alloc, r_prime),
        regimes=_regime_labels(scenario, x),
        selection=selection,
        nash_gap=nash_gap,
        converged=converged,
    )


def best_response(
    scenario: Scenario, n: int, m: int, others: np.ndarray, r_prime: float
) -> float:
    """Exact best response of user n for item m, holding others fixed.

    ``others`` holds every user's cached bytes for item m (the entry for n is
    ignored). The payment is piecewise linear and convex in the own amount,
    so the minimum sits at 0, S_m, or a point where some group residual hits
    zero; ties return the smallest amount.
    """
    _check_price(r_prime)
    others = np.asarray(others, dtype=float)
    if np.any(others < -1e-12) or np.any(others > scenario.sizes[m] + 1e-12):
        raise InvalidArgumentError("fixed cache amounts must lie in [0, S_m]")
    return ItemGame(scenario, m).best_response(n, others.copy(), r_prime)


def _fair_start(
    scenario: Scenario, thresholds: UserThresholds, m: int, r_prime: float
) -> tuple[np.ndarray, list[int]]:
    """Algorithm-3 point: dominant branches plus interest-proportional shares."""
    N = scenario.num_users
    size = scenario.sizes[m]
    x = np.zeros(N)
    flagged = []
    for n in range(N):
        if r_prime <= thresholds.discounted[n, m]:
            x[n] = size
        elif r_prime > thresholds.interest[n, m]:
            x[n] = 0.0
        else:
            flagged.append(n)
    if flagged:
        total = sum(thresholds.interest[k, m] for k in flagged)
        for n in flagged:
            x[n] = size * thresholds.interest[n, m] / total
    return x, flagged


def _iterate_best_responses(
    game: ItemGame, x0: np.ndarray, r_prime: float
) -> tuple[np.ndarray, bool]:
    """Round-robin exact best responses until a fixed point or a cycle."""
    x = x0.copy()
    seen = set()
    for _ in range(MAX_BR_ROUNDS):
        changed = False
        for n in range(len(x)):
            best = game.best_response(n, x, r_prime)
            if abs(best - x[n]) > 1e-12:
                changed = True
                x[n] = best
        if not changed:
            return x, True
        state = tuple(np.round(x, 12))
        if state in seen:
            return x, False
        seen.add(state)
    return x, False


def spne_fair(scenario: Scenario, r_prime: float) -> GameOutcome:
    """Fair-split equilibrium per Algorithm-3 branches, Nash-certified.

    Whenever the fair point is not already a fixed point (partial bands that
    do not overlap, or multi-event kinks for N >= 3), best responses are
    iterated from it; alternative deterministic starts are tried if the
    iteration cycles. Verification failure is reported, never raised.
    """
    _check_price(r_prime)
    thresholds = user_thresholds(scenario)
    N, M = scenario.num_users, scenario.num_items
    x = np.zeros((N, M))
    converged_all = True
    for m in range(M):
        game = ItemGame(scenario, m)
        fair, _ = _fair_start(scenario, thresholds, m, r_prime)
        starts = [fair, np.zeros(N), np.full(N, scenario.sizes[m], dtype=float)]
        solution, ok = None, False
        for start in starts:
            solution, ok = _iterate_best_responses(game, start, r_prime)
            if ok:
                break
        if not ok:
            solution, _ = _iterate_best_responses(game, fair, r_prime)
            converged_all = False
        x[:, m] = solution
    gap = verify_nash(scenario, CachingAllocation(x), r_prime)
    return _outcome(scenario, x, r_prime, "fair", gap, converged_all)


def _integrated_uniform_cdf(t: float, count: int) -> float:
    """Integral from 0 to t of the CDF of a sum of ``count`` U[0,1] variables."""
    if t <= 0.0:
        return 0.0
    if count == 0:
        return t
    tail = 0.0
    if t >= count:
        tail = t - count
        t = float(count)
    total = 0.0
    for j in range(int(math.floor(t)) + 1):
        total += (-1.0) ** j * math.comb(count, j) * (t - j) ** (count + 1)
    return total / math.factorial(count + 1) + tail


def _expected_shortfall(c: float, count: int, size: float) -> float:
    """E[(c - sum of ``count`` U[0, size])+], the expected residual bytes."""
    if c <= 0.0:
        return 0.0
    if count == 0:
        return c
    return size * _integrated_uniform_cdf(c / size, count)


def risk_dominant(scenario: Scenario, r_prime: float) -> GameOutcome:
    """Worst-knowledge play: best-respond to beliefs, not to a proposal.

    Every user treats each other user's action as known only where dominance
    pins it down (full below their discounted interest, none above their
    plain interest) and as uniformly distributed over [0, S_m] in the partial
    band. The resulting profile need not be a Nash point; inside the paper's
    conflict band users over-cache and certification fails.
    """
    _check_price(r_prime)
    thresholds = user_thresholds(scenario)
    N, M = scenario.num_users, scenario.num_items
    x = np.zeros((N, M))
    for m in range(M):
        game = ItemGame(scenario, m)
        size = float(scenario.sizes[m])
        kind = []  # per user: fixed bytes or None for uniform-uncertain
        for k in range(N):
            if r_prime <= thresholds.discounted[k, m]:
                kind.append(size)
            elif r_prime > thresholds.interest[k, m]:
                kind.append(0.0)
            else:
                kind.append(None)
        for n in range(N):
            x[n, m] = _belief_best_response(game, n, kind, r_prime)
    gap = verify_nash(scenario, CachingAllocation(x), r_prime)
    return _outcome(scenario, x, r_prime, "risk-dominant", gap)


def _belief_expected_payment(
    game: ItemGame, n: int, kind: list[float | None], r_prime: float, x_n: float
) -> float:
    """Expected payment of user n under the product belief about others."""
    size = game.size
    expected = game.alone[n] * (size - x_n)
    for group, prob in game.partners[n]:
        fixed = sum(kind[k] for k in group if kind[k] is not None)
        uncertain = sum(1 for k in group if kind[k] is None)
        shortfall = _expected_shortfall(size - x_n - fixed, uncertain, size)
        if shortfall > 0.0:
            expected = expected + prob * shortfall
    return float(np.mean(game.p[n] * expected) + r_prime * x_n)


def _belief_best_response(
    game: ItemGame, n: int, kind: list[float | None], r_prime: float
) -> float:
    """Minimize the belief-expected payment (convex in the own amount)."""
    size = game.size

    def value(x_n: float) -> float:
        return _belief_expected_payment(game, n, kind, r_prime, x_n)

    lo, hi = 0.0, size
    for _ in range(200):
        third = (hi - lo) / 3.0
        m1, m2 = lo + third, hi - third
        if value(m1) <= value(m2):
            hi = m2
        else:
            lo = m1
    candidates = {0.0, size, 0.5 * (lo + hi)}
    for group, _ in game.partners[n]:
        fixed = sum(kind[k] for k in group if kind[k] is not None)
        clamp = size - fixed
        if 0.0 < clamp < size:
            candidates.add(clamp)
    best_x, best_pay = 0.0, math.inf
    for cand in sorted(candidates):
        pay = value(cand)
        if pay < best_pay - 1e-12:
            best_x, best_pay = cand, pay
    return best_x


def deviation_gains(scenario: Scenario, x: CachingAllocation, r_prime: float) -> np.ndarray:
    """Per (user, item) payment improvement available by deviating alone."""
    _check_price(r_prime)
    gains = np.zeros((scenario.num_users, scenario.num_items))
    for m in range(scenario.num_items):
        game = ItemGame(scenario, m)
        for n in range(scenario.num_users):
            col = x.x[:, m].copy()
            current = game.payment(n, col, r_prime)
            trial = col.copy()
            trial[n] = game.best_response(n, col, r_prime)
            gains[n, m] = max(0.0, current - game.payment(n, trial, r_prime))
    return gains


def verify_nash(scenario: Scenario, x: CachingAllocation, r_prime: float) -> float:
    """Largest unilateral payment improvement over all (user, item) pairs.

    At or below 1e-9 the profile is certified as a Nash equilibrium.
    """
    return float(deviation_gains(scenario, x, r_prime).max())


def per_item_payments(scenario: Scenario, x: CachingAllocation, r_prime: float) -> np.ndarray:
    """Each user's expected payment split by item, shape (N, M).

    Rows sum (over items) to the user's total proactive payment.
    """
    _check_price(r_prime)
    out = np.zeros((scenario.num_users, scenario.num_items))
    for m in range(scenario.num_items):
        game = ItemGame(scenario, m)
        for n in range(scenario.num_users):
            out[n, m] = game.payment(n, x.x[:, m], r_prime)
    return out


@dataclass(frozen=True)
class MemoryTradeoff:
    """Memory-vs-price staircases per user plus the aggregate."""

    per_user: tuple[TradeoffResult, ...]
    aggregate: TradeoffResult


def memory_tradeoff(scenario: Scenario, gamma: float) -> MemoryTradeoff:
    """Pick memory sizes where user staircases meet the provider line r' = gamma*Z.

    Each user's first bytes (up to the all-user fair share) are worth their
    plain interest; the rest of the item is worth the isolation-discounted
    interest; beyond the item size the value is 0. The aggregate staircase
    merges every user's levels by descending value.
    """
    if gamma <= 0.0:
        raise InvalidArgumentError(f"provider preference slope must be positive, got {gamma!r}")
    thresholds = user_thresholds(scenario)
    interest_totals = thresholds.interest.sum(axis=0)  # (M,)
    per_user = []
    all_drops: list[tuple[float, float]] = []
    for n in range(scenario.num_users):
        drops = []
        for m in range(scenario.num_items):
            size = float(scenario.sizes[m])
            share = (
                size * thresholds.interest[n, m] / interest_totals[m]
                if interest_totals[m] > 0.0
                else 0.0
            )
            drops.append((float(thresholds.interest[n, m]), share))
            drops.append((float(thresholds.discounted[n, m]), size - share))
        levels = staircase_from_drops(drops)
        z_star, r_star = intersect_staircase(levels, gamma)
        per_user.append(TradeoffResult(tuple(levels), z_star, r_star))
        all_drops.extend(drops)
    agg_levels = staircase_from_drops(all_drops)
    z_star, r_star = intersect_staircase(agg_levels, gamma)
    return MemoryTradeoff(
        per_user=tuple(per_user),
        aggregate=TradeoffResult(tuple(agg_levels), z_star, r_star),
    )


def mobility_limit_policy(scenario: Scenario, limit: str, r_prime: float) -> GameOutcome:
    """Game outcome in the many-locations or single-location mobility limit.

    ``limit`` is "many-locations" (meeting probabilities vanish: every user
    independently caches fully below their plain interest) or
    "single-location" (users always meet: the discounted interest is 0, so
    one shared copy is split fairly below the participating interests). The
    limit overrides the scenario's actual mobility statistics; certification
    gaps are not computed against the unmodified scenario.
    """
    _check_price(r_prime)
    thresholds = user_thresholds(scenario)
    N, M = scenario.num_users, scenario.num_items
    x = np.zeros((N, M))
    if limit == "many-locations":
        for n in range(N):
            for m in range(M):
                if r_prime < thresholds.interest[n, m]:
                    x[n, m] = scenario.sizes[m]
    elif limit == "single-location":
        for m in range(M):
            flagged = [
                n for n in range(N) if r_prime <= thresholds.interest[n, m]
            ]
            total = sum(thresholds.interest[k, m] for k in flagged)
            if r_prime == 0.0:
                for n in range(N):
                    x[n, m] = scenario.sizes[m]
            elif flagged and total > 0.0:
                for n in flagged:
                    x[n, m] = scenario.sizes[m] * thresholds.interest[n, m] / total
    else:
        raise InvalidArgumentError(
            f"limit must be 'many-locations' or 'single-location', got {limit!r}"
        )
    return _outcome(scenario, x, r_prime, f"limit-{limit}", nash_gap=None)
