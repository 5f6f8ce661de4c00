"""Reactive/proactive network load, provider cost and per-user payments.

The proactive load is evaluated exactly by partitioning each user's slot into
mutually exclusive co-location events: for user n, either n shares a location
with exactly the users of some subset a (one event per subset containing n,
size >= 2), or n is alone. Cached bytes of co-located users complement each
other, so the network serves the residual (S_m - sum of the group's cached
bytes)+ for every request of a group member.

Summation order is fixed for bit-reproducibility: items outer, subsets by
increasing size (lexicographic within a size), locations inner.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import CapacityError, InvalidArgumentError
from .profiles import Scenario

# Exact evaluation enumerates all subsets containing a user; beyond this many
# users callers must fall back to Monte Carlo estimation.
EXACT_USER_CAP = 20


@dataclass(frozen=True)
class CachingAllocation:
    """Cached bytes per (user, item), shape (N, M); 0 <= x[n, m] <= S_m."""

    x: np.ndarray

    @staticmethod
    def zeros(scenario: Scenario) -> "CachingAllocation":
        return CachingAllocation(np.zeros((scenario.num_users, scenario.num_items)))

    @staticmethod
    def full(scenario: Scenario) -> "CachingAllocation":
        return CachingAllocation(
            np.tile(scenario.sizes, (scenario.num_users, 1)).astype(float)
        )

    def violations(self, scenario: Scenario) -> list[str]:
        out = []
        if self.x.shape != (scenario.num_users, scenario.num_items):
            return [f"allocation shape {self.x.shape} does not match (N, M)"]
        for n, m in np.argwhere(
            (self.x < -1e-12) | (self.x > scenario.sizes[None, :] + 1e-12)
        ):
            out.append(
                f"allocation out of [0, S_m] at user {n + 1}, item {m + 1}: {self.x[n, m]!r}"
            )
        return out


@dataclass(frozen=True)
class CostBreakdown:
    """Provider-side cost summary for one allocation and reward."""

    reactive: float
    proactive_load: float
    caching_cost: float

    @property
    def total_proactive(self) -> float:
        return self.proactive_load + self.caching_cost

    @property
    def gain(self) -> float:
        return self.reactive - self.total_proactive


@dataclass(frozen=True)
class PaymentBreakdown:
    """Per-user payments: reactive baseline, proactive, and the saving."""

    reactive: np.ndarray
    proactive: np.ndarray

    @property
    def gain(self) -> np.ndarray:
        return self.reactive - self.proactive


def _check_allocation(scenario: Scenario, x: CachingAllocation) -> None:
    problems = x.violations(scenario)
    if problems:
        raise InvalidArgumentError("; ".join(problems))


def _check_cap(scenario: Scenario) -> None:
    if scenario.num_users > EXACT_USER_CAP:
        raise CapacityError(
            f"exact load evaluation enumerates 2^{scenario.num_users - 1} co-location "
            f"events per user; cap is N <= {EXACT_USER_CAP}. Use montecarlo.simulate."
        )


def reactive_cost(scenario: Scenario) -> float:
    """Time-averaged network load with no caching at all."""
    p = scenario.demand_array  # (N, T, M)
    return float(np.sum(p.mean(axis=1) * scenario.sizes[None, :]))


def user_group_events(scenario: Scenario, n: int):
    """Exact co-location events of user n: [(members, prob_per_slot)].

    ``members`` are tuples containing n with at least one other user, ordered
    by increasing size then lexicographically; ``prob_per_slot`` has shape
    (T,). The residual probability (user alone) is 1 minus their sum.
    """
    _check_cap(scenario)
    theta = scenario.occupancy.theta  # (N, T, L)
    others = [k for k in range(scenario.num_users) if k != n]
    events = []
    for size in range(1, len(others) + 1):
        for extra in combinations(others, size):
            members = tuple(sorted((n,) + extra))
            inside = theta[list(members)].prod(axis=0)  # (T, L)
            absent = [k for k in range(scenario.num_users) if k not in members]
            outside = (1.0 - theta[absent]).prod(axis=0) if absent else 1.0
            events.append((members, np.sum(inside * outside, axis=1)))
    return events


def per_user_load(scenario: Scenario, x: CachingAllocation, n: int, t: int) -> float:
    """Expected bytes the network serves for user n's requests in slot t."""
    _check_allocation(scenario, x)
    events = user_group_events(scenario, n)
    return _per_user_load_from_events(scenario, x.x, n, t, events)


def _per_user_load_from_events(scenario, x_arr, n, t, events) -> float:
    sizes = scenario.sizes
    p = scenario.demand[n].probs  # (T, M)
    alone = 1.0 - sum(prob[t] for _, prob in events) if events else 1.0
    total = 0.0
    for m in range(scenario.num_items):
        expected = 0.0
        for members, prob in events:
            residual = sizes[m] - sum(x_arr[k, m] for k in members)
            if residual > 0.0:
                expected += prob[t] * residual
        expected += alone * (sizes[m] - x_arr[n, m])
        total += p[t, m] * expected
    return total


def proactive_load(scenario: Scenario, x: CachingAllocation, t: int) -> float:
    """Total expected network load in slot t under allocation x."""
    _check_allocation(scenario, x)
    return sum(
        _per_user_load_from_events(scenario, x.x, n, t, user_group_events(scenario, n))
        for n in range(scenario.num_users)
    )


def proactive_load_literal(scenario: Scenario, x: CachingAllocation, t: int) -> float:
    """The printed form of the proactive load, kept for arbitration.

    Its "every user is alone" complement subtracts the probability that *any*
    group of two or more users is co-located somewhere, rather than the
    probability that the focal user is in such a group. It coincides with
    :func:`proactive_load` for N = 2 and undercounts the alone term for
    N >= 3; Monte Carlo arbitrates (see montecarlo.compare_analytic).
    """
    _check_allocation(scenario, x)
    _check_cap(scenario)
    theta = scenario.occupancy.theta
    sizes = scenario.sizes
    N = scenario.num_users
    x_arr = x.x

    group_terms = []  # (members, prob at slot t)
    any_group_prob = 0.0
    for size in range(2, N + 1):
        for members in combinations(range(N), size):
            inside = theta[list(members), t, :].prod(axis=0)
            absent = [k for k in range(N) if k not in members]
            outside = (1.0 - theta[absent, t, :]).prod(axis=0) if absent else 1.0
            prob = float(np.sum(inside * outside))
            group_terms.append((members, prob))
            any_group_prob += prob

    total = 0.0
    for m in range(scenario.num_items):
        for members, prob in group_terms:
            residual = sizes[m] - sum(x_arr[k, m] for k in members)
            if residual > 0.0:
                total += residual * prob * sum(
                    scenario.demand[k].probs[t, m] for k in members
                )
        alone = 1.0 - any_group_prob
        for n in range(N):
            total += (sizes[m] - x_arr[n, m]) * scenario.demand[n].probs[t, m] * alone
    return total


def average_proactive_load(scenario: Scenario, x: CachingAllocation) -> float:
    """Time-averaged total network load under allocation x."""
    _check_allocation(scenario, x)
    total = 0.0
    for n in range(scenario.num_users):
        events = user_group_events(scenario, n)
        total += np.mean(
            [
                _per_user_load_from_events(scenario, x.x, n, t, events)
                for t in range(scenario.num_slots)
            ]
        )
    return float(total)


def proactive_cost(scenario: Scenario, x: CachingAllocation, r: float) -> CostBreakdown:
    """Time-averaged proactive cost: served load plus the caching reward bill."""
    if not 0.0 <= r <= 1.0:
        raise InvalidArgumentError(f"reward must lie in [0, 1], got {r!r}")
    _check_allocation(scenario, x)
    return CostBreakdown(
        reactive=reactive_cost(scenario),
        proactive_load=average_proactive_load(scenario, x),
        caching_cost=float(r * x.x.sum()),
    )


def user_reactive_payment(scenario: Scenario, n: int) -> float:
    """Time-averaged payment of user n in the flat-priced reactive baseline."""
    p = scenario.demand[n].probs
    return float(np.sum(p.mean(axis=0) * scenario.sizes))


def user_proactive_payment(
    scenario: Scenario, x: CachingAllocation, n: int, r_prime: float
) -> float:
    """Time-averaged payment of user n: served residuals plus the cache bill."""
    if not 0.0 <= r_prime <= 1.0:
        raise InvalidArgumentError(f"off-peak price must lie in [0, 1], got {r_prime!r}")
    _check_allocation(scenario, x)
    events = user_group_events(scenario, n)
    load = np.mean(
        [
            _per_user_load_from_events(scenario, x.x, n, t, events)
            for t in range(scenario.num_slots)
        ]
    )
    return float(load + r_prime * x.x[n].sum())


def payment_breakdown(
    scenario: Scenario, x: CachingAllocation, r_prime: float
) -> PaymentBreakdown:
    """Reactive and proactive payments for every user."""
    reactive = np.array(
        [user_reactive_payment(scenario, n) for n in range(scenario.num_users)]
    )
    proactive = np.array(
        [
            user_proactive_payment(scenario, x, n, r_prime)
            for n in range(scenario.num_users)
        ]
    )
    return PaymentBreakdown(reactive=reactive, proactive=proactive)
