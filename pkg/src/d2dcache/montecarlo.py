"""Trajectory/demand sampling and empirical validation of the load model.

Replications are drawn in fixed-size batches, each from its own
counter-based Philox stream keyed by (seed, batch index), so results are
reproducible for a fixed (seed, lane count) and independent of execution
interleaving. Lanes partition the batches contiguously; per-lane partial sums
merge in lane order.

Within a replication the sharing protocol is replayed literally: users walk
their Markov chains, request items by their demand Bernoullis, receive
min(S_m, bytes cached by their co-located group including themselves) over
the D2D link, and fetch the residual from the network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import D2DCacheError, InvalidArgumentError
from .loadmodel import CachingAllocation, proactive_load, proactive_load_literal, user_proactive_payment
from .profiles import Scenario

BATCH_SIZE = 1024


class ExactMismatchError(D2DCacheError):
    """A deterministic (zero-variance) quantity disagreed with the analytic value."""


@dataclass(frozen=True)
class SimulationConfig:
    """Replication count, RNG seed, and the number of accumulation lanes."""

    replications: int
    seed: int = 0
    lanes: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise InvalidArgumentError("need at least one replication")
        if self.lanes < 1:
            raise InvalidArgumentError("need at least one lane")
        if not 0 <= self.seed < 2**64:
            raise InvalidArgumentError("seed must fit in 64 bits")


@dataclass(frozen=True)
class SimulationReport:
    """Empirical means and standard errors over replications."""

    slot_load_mean: np.ndarray      # (T,)
    slot_load_stderr: np.ndarray    # (T,)
    avg_load_mean: float            # period-averaged network load
    avg_load_stderr: float
    payment_mean: np.ndarray        # (N,)
    payment_stderr: np.ndarray      # (N,)
    replications: int
    seed: int
    lanes: int


class _Accumulator:
    def __init__(self, T: int, N: int):
        self.slot_sum = np.zeros(T)
        self.slot_sumsq = np.zeros(T)
        self.avg_sum = 0.0
        self.avg_sumsq = 0.0
        self.pay_sum = np.zeros(N)
        self.pay_sumsq = np.zeros(N)

    def add_batch(self, slot_loads: np.ndarray, payments: np.ndarray) -> None:
        avg = slot_loads.mean(axis=1)
        self.slot_sum += slot_loads.sum(axis=0)
        self.slot_sumsq += (slot_loads**2).sum(axis=0)
        self.avg_sum += avg.sum()
        self.avg_sumsq += (avg**2).sum()
        self.pay_sum += payments.sum(axis=0)
        self.pay_sumsq += (payments**2).sum(axis=0)

    def merge(self, other: "_Accumulator") -> None:
        self.slot_sum += other.slot_sum
        self.slot_sumsq += other.slot_sumsq
        self.avg_sum += other.avg_sum
        self.avg_sumsq += other.avg_sumsq
        self.pay_sum += other.pay_sum
        self.pay_sumsq += other.pay_sumsq


def _mean_stderr(total, total_sq, count: int):
    mean = total / count
    if count > 1:
        var = np.maximum((total_sq - count * mean**2) / (count - 1), 0.0)
        stderr = np.sqrt(var / count)
    else:
        stderr = np.zeros_like(np.asarray(mean, dtype=float))
    return mean, stderr


def _sample_batch(
    scenario: Scenario, x: np.ndarray, price: float, seed: int, batch_index: int, size: int
):
    """One batch of replications: returns (slot_loads (B, T), payments (B, N))."""
    rng = np.random.Generator(
        np.random.Philox(key=np.array([seed, batch_index], dtype=np.uint64))
    )
    N, T, L, M = (
        scenario.num_users,
        scenario.num_slots,
        scenario.num_locations,
        scenario.num_items,
    )
    sizes = scenario.sizes

    # Locations: inverse-CDF sampling, one draw per user per step, users in order.
    loc = np.empty((size, N, T), dtype=np.intp)
    for n in range(N):
        mob = scenario.mobility[n]
        cdf0 = np.cumsum(mob.initial)
        current = np.searchsorted(cdf0, rng.random(size), side="right")
        np.clip(current, 0, L - 1, out=current)
        for t in range(T):
            rows_cdf = np.cumsum(mob.transitions[t], axis=1)[current]  # (B, L)
            u = rng.random(size)
            current = (u[:, None] >= rows_cdf).sum(axis=1)
            np.clip(current, 0, L - 1, out=current)
            loc[:, n, t] = current

    # Demand indicators, per user in order.
    want = np.empty((size, N, T, M), dtype=bool)
    for n in range(N):
        want[:, n] = rng.random((size, T, M)) < scenario.demand[n].probs[None, :, :]

    slot_loads = np.zeros((size, T))
    payments = np.tile(price * x.sum(axis=1), (size, 1))  # (B, N)
    rows = np.arange(size)[:, None]
    for t in range(T):
        loc_t = loc[:, :, t]  # (B, N)
        for m in range(M):
            cached = np.zeros((size, L))
            np.add.at(cached, (rows, loc_t), np.broadcast_to(x[:, m], (size, N)))
            group_cache = np.take_along_axis(cached, loc_t, axis=1)  # (B, N)
            residual = sizes[m] - np.minimum(sizes[m], group_cache)
            served = want[:, :, t, m] * residual
            slot_loads[:, t] += served.sum(axis=1)
            payments += served / T
    return slot_loads, payments


def simulate(
    scenario: Scenario,
    x: CachingAllocation,
    price: float,
    config: SimulationConfig,
) -> SimulationReport:
    """Replay the sharing protocol and report empirical loads and payments."""
    if not 0.0 <= price <= 1.0:
        raise InvalidArgumentError(f"price must lie in [0, 1], got {price!r}")
    problems = x.violations(scenario)
    if problems:
        raise InvalidArgumentError("; ".join(problems))
    R = config.replications
    n_batches = (R + BATCH_SIZE - 1) // BATCH_SIZE
    batches = [
        (b, min(BATCH_SIZE, R - b * BATCH_SIZE)) for b in range(n_batches)
    ]
    per_lane = (n_batches + config.lanes - 1) // config.lanes
    lane_accs = []
    for lane in range(config.lanes):
        acc = _Accumulator(scenario.num_slots, scenario.num_users)
        for b, size in batches[lane * per_lane : (lane + 1) * per_lane]:
            slot_loads, payments = _sample_batch(
                scenario, x.x, price, config.seed, b, size
            )
            acc.add_batch(slot_loads, payments)
        lane_accs.append(acc)
    total = lane_accs[0]
    for acc in lane_accs[1:]:
        total.merge(acc)
    slot_mean, slot_stderr = _mean_stderr(total.slot_sum, total.slot_sumsq, R)
    avg_mean, avg_stderr = _mean_stderr(total.avg_sum, total.avg_sumsq, R)
    pay_mean, pay_stderr = _mean_stderr(total.pay_sum, total.pay_sumsq, R)
    return SimulationReport(
        slot_load_mean=slot_mean,
        slot_load_stderr=slot_stderr,
        avg_load_mean=float(avg_mean),
        avg_load_stderr=float(avg_stderr),
        payment_mean=pay_mean,
        payment_stderr=pay_stderr,
        replications=R,
        seed=config.seed,
        lanes=config.lanes,
    )


@dataclass(frozen=True)
class ComparisonReport:
    """z-scores of the empirical estimates against the analytic load model.

    ``literal_load_z`` scores the printed-form load expression (its alone
    complement sums over all groups); for three or more users it is biased
    and this field quantifies by how much.
    """

    load_z: float
    payment_z: np.ndarray
    max_abs_z: float
    literal_load_z: float
    literal_load_bias: float

    @property
    def max_z(self) -> float:
        return self.max_abs_z


def _zscore(empirical: float, analytic: float, stderr: float, what: str) -> float:
    if stderr == 0.0:
        if abs(empirical - analytic) > 1e-9:
            raise ExactMismatchError(
                f"{what}: zero variance but empirical {empirical!r} != analytic {analytic!r}"
            )
        return 0.0
    return (empirical - analytic) / stderr


def compare_analytic(
    report: SimulationReport,
    scenario: Scenario,
    x: CachingAllocation,
    price: float,
) -> ComparisonReport:
    """Score empirical means against the exact per-user-partition load model."""
    analytic_load = float(
        np.mean([proactive_load(scenario, x, t) for t in range(scenario.num_slots)])
    )
    literal_load = float(
        np.mean(
            [proactive_load_literal(scenario, x, t) for t in range(scenario.num_slots)]
        )
    )
    load_z = _zscore(report.avg_load_mean, analytic_load, report.avg_load_stderr, "load")
    payment_z = np.array(
        [
            _zscore(
                float(report.payment_mean[n]),
                user_proactive_payment(scenario, x, n, price),
                float(report.payment_stderr[n]),
                f"payment of user {n + 1}",
            )
            for n in range(scenario.num_users)
        ]
    )
    literal_z = (
        0.0
        if report.avg_load_stderr == 0.0 and abs(report.avg_load_mean - literal_load) <= 1e-9
        else (report.avg_load_mean - literal_load) / report.avg_load_stderr
        if report.avg_load_stderr > 0.0
        else float("inf")
    )
    return ComparisonReport(
        load_z=load_z,
        payment_z=payment_z,
        max_abs_z=float(max(abs(load_z), np.max(np.abs(payment_z)) if payment_z.size else 0.0)),
        literal_load_z=float(literal_z),
        literal_load_bias=float(report.avg_load_mean - literal_load),
    )
