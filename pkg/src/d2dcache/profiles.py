"""Demand/mobility profiles, occupancy propagation and co-location statistics.

A scenario describes N users requesting M items over a cyclo-stationary period
of T slots while moving between L locations according to per-slot Markov
transition matrices. Everything downstream (load model, policies, game) is a
function of the occupancy tensor computed here and of the demand
probabilities.

All operations are pure functions of immutable inputs; arrays are treated as
read-only after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgumentError, InvalidProfileError

# Tolerances: user-supplied rows must be exact up to rounding of literals,
# derived probabilities accumulate arithmetic error.
INPUT_TOL = 1e-12
DERIVED_TOL = 1e-9


@dataclass(frozen=True)
class DemandProfile:
    """Per-user request probabilities, shape (T, M).

    Entry [t, m] is the probability the user requests item m in slot t.
    The stored T slots are the cyclo-stationary period. Requests for distinct
    items in the same slot are independent events; rows are not normalized.
    """

    probs: np.ndarray

    def violations(self, who: str = "user") -> list[str]:
        out = []
        p = self.probs
        if p.ndim != 2:
            return [f"{who}: demand must be a TxM matrix, got ndim={p.ndim}"]
        bad = np.argwhere((p < -INPUT_TOL) | (p > 1.0 + INPUT_TOL))
        for t, m in bad:
            out.append(
                f"{who}: demand prob out of [0,1] at slot {t + 1}, item {m + 1}: {p[t, m]!r}"
            )
        return out


@dataclass(frozen=True)
class MobilityProfile:
    """Per-user Markov mobility: slot transition matrices plus a start law.

    ``transitions`` has shape (T, L, L); row [t, l] is the distribution of the
    next location when leaving location l at the start of slot t+1.
    ``initial`` (length L) is the location law feeding the first transition,
    so the slot-1 occupancy is ``initial @ transitions[0]``.
    """

    transitions: np.ndarray
    initial: np.ndarray

    def violations(self, who: str = "user") -> list[str]:
        out = []
        lam, ini = self.transitions, self.initial
        if lam.ndim != 3 or lam.shape[1] != lam.shape[2]:
            return [f"{who}: transitions must have shape (T, L, L), got {lam.shape}"]
        if ini.ndim != 1 or ini.shape[0] != lam.shape[1]:
            out.append(
                f"{who}: initial distribution length {ini.shape} does not match L={lam.shape[1]}"
            )
            return out
        if np.any(ini < -INPUT_TOL):
            out.append(f"{who}: initial distribution has negative entries")
        if abs(ini.sum() - 1.0) > INPUT_TOL:
            out.append(f"{who}: initial distribution sums to {ini.sum()!r}, expected 1")
        row_sums = lam.sum(axis=2)
        for t in range(lam.shape[0]):
            if np.any(lam[t] < -INPUT_TOL):
                out.append(f"{who}: negative transition prob in slot {t + 1}")
            for l in range(lam.shape[1]):
                s = row_sums[t, l]
                if abs(s - 1.0) > INPUT_TOL:
                    out.append(
                        f"{who}: transition row not stochastic at slot {t + 1}, "
                        f"row {l + 1}: sums to {s!r}"
                    )
        return out


@dataclass(frozen=True)
class OccupancyTensor:
    """Location-presence probabilities, shape (N, T, L)."""

    theta: np.ndarray

    @property
    def num_users(self) -> int:
        return self.theta.shape[0]

    @property
    def num_slots(self) -> int:
        return self.theta.shape[1]

    @property
    def num_locations(self) -> int:
        return self.theta.shape[2]

    def violations(self) -> list[str]:
        out = []
        sums = self.theta.sum(axis=2)
        bad = np.argwhere(np.abs(sums - 1.0) > DERIVED_TOL)
        for n, t in bad:
            out.append(
                f"occupancy row of user {n + 1}, slot {t + 1} sums to {sums[n, t]!r}"
            )
        return out


@dataclass(frozen=True)
class Scenario:
    """A complete problem instance.

    ``sizes`` are item sizes in bytes (S_m > 0). ``demand`` and ``mobility``
    are per-user profiles; ``occupancy`` is derived from mobility at build
    time. Use :func:`build_scenario` to construct a validated instance.
    """

    num_users: int
    num_items: int
    num_locations: int
    num_slots: int
    sizes: np.ndarray
    demand: tuple[DemandProfile, ...]
    mobility: tuple[MobilityProfile, ...]
    occupancy: OccupancyTensor = field(repr=False)

    @property
    def demand_array(self) -> np.ndarray:
        """Demand probabilities stacked to shape (N, T, M)."""
        return np.stack([d.probs for d in self.demand])


def build_occupancy(mobility: MobilityProfile) -> np.ndarray:
    """Propagate the Markov chain: returns the (T, L) occupancy matrix.

    Slot-1 occupancy is ``initial @ transitions[0]``; each later slot applies
    the recursion theta_t = theta_{t-1} @ transitions[t].
    """
    problems = mobility.violations()
    if problems:
        raise InvalidProfileError("; ".join(problems))
    lam = mobility.transitions
    T, L = lam.shape[0], lam.shape[1]
    theta = np.empty((T, L))
    row = np.asarray(mobility.initial, dtype=float)
    for t in range(T):
        row = row @ lam[t]
        theta[t] = row
    return theta


def build_scenario(
    sizes: Sequence[float],
    demand: Sequence[DemandProfile],
    mobility: Sequence[MobilityProfile],
) -> Scenario:
    """Assemble and validate a Scenario, deriving the occupancy tensor."""
    scenario = _assemble(sizes, demand, mobility)
    problems = validate_scenario(scenario)
    if problems:
        raise InvalidProfileError("; ".join(problems))
    return scenario


def _assemble(
    sizes: Sequence[float],
    demand: Sequence[DemandProfile],
    mobility: Sequence[MobilityProfile],
) -> Scenario:
    """Build a Scenario without raising on invariant violations.

    Dimension mismatches that make occupancy propagation impossible still
    raise; probability-value violations are left for validate_scenario.
    """
    if len(demand) != len(mobility) or not demand:
        raise InvalidArgumentError("need one demand and one mobility profile per user")
    sizes_arr = np.asarray(sizes, dtype=float)
    thetas = []
    for mob in mobility:
        structural = [v for v in mob.violations() if "shape" in v or "length" in v]
        if structural:
            raise InvalidProfileError("; ".join(structural))
        lam = mob.transitions
        T, L = lam.shape[0], lam.shape[1]
        theta = np.empty((T, L))
        row = np.asarray(mob.initial, dtype=float)
        for t in range(T):
            row = row @ lam[t]
            theta[t] = row
        thetas.append(theta)
    occupancy = OccupancyTensor(np.stack(thetas))
    return Scenario(
        num_users=len(demand),
        num_items=int(demand[0].probs.shape[1]),
        num_locations=int(mobility[0].transitions.shape[1]),
        num_slots=int(mobility[0].transitions.shape[0]),
        sizes=sizes_arr,
        demand=tuple(demand),
        mobility=tuple(mobility),
        occupancy=occupancy,
    )


def validate_scenario(scenario: Scenario) -> list[str]:
    """Collect every violated invariant; an empty list means valid."""
    out: list[str] = []
    if np.any(scenario.sizes <= 0):
        for m in np.flatnonzero(scenario.sizes <= 0):
            out.append(f"item {m + 1}: size must be positive, got {scenario.sizes[m]!r}")
    if scenario.sizes.shape[0] != scenario.num_items:
        out.append(
            f"sizes length {scenario.sizes.shape[0]} does not match M={scenario.num_items}"
        )
    for n, (dem, mob) in enumerate(zip(scenario.demand, scenario.mobility)):
        who = f"user {n + 1}"
        out.extend(dem.violations(who))
        out.extend(mob.violations(who))
        if dem.probs.shape != (scenario.num_slots, scenario.num_items):
            out.append(
                f"{who}: demand shape {dem.probs.shape} does not match "
                f"(T={scenario.num_slots}, M={scenario.num_items})"
            )
        if mob.transitions.shape != (
            scenario.num_slots,
            scenario.num_locations,
            scenario.num_locations,
        ):
            out.append(
                f"{who}: transitions shape {mob.transitions.shape} does not match "
                f"(T={scenario.num_slots}, L={scenario.num_locations}, L)"
            )
    out.extend(scenario.occupancy.violations())
    return out


def pairwise_meeting_avg(occupancy: OccupancyTensor, i: int, j: int) -> float:
    """Time-averaged probability that users i and j share a location."""
    if i == j:
        raise InvalidArgumentError("meeting probability requires two distinct users")
    theta = occupancy.theta
    return float(np.mean(np.sum(theta[i] * theta[j], axis=1)))


def colocate_exact_prob(occupancy: OccupancyTensor, users: Iterable[int], t: int) -> float:
    """Probability that exactly the given users share a location in slot t.

    Sums over locations the chance that every member is there and every
    non-member is elsewhere.
    """
    members = sorted(set(users))
    if not members:
        raise InvalidArgumentError("co-location subset must be nonempty")
    theta_t = occupancy.theta[:, t, :]
    inside = np.prod(theta_t[members], axis=0)
    outside_idx = [n for n in range(occupancy.num_users) if n not in members]
    outside = np.prod(1.0 - theta_t[outside_idx], axis=0) if outside_idx else 1.0
    return float(np.sum(inside * outside))


def coverage_prob(occupancy: OccupancyTensor, k: int, helpers: Iterable[int], t: int) -> float:
    """Probability user k meets at least one of ``helpers`` in slot t.

    Empty helper set gives 0. For a single helper this is the plain
    same-location cross term; for all other users it equals the isolation
    factor's complement event.
    """
    helper_list = sorted(set(helpers))
    if k in helper_list:
        raise InvalidArgumentError("coverage target must not be in the helper set")
    if not helper_list:
        return 0.0
    theta_t = occupancy.theta[:, t, :]
    none_there = np.prod(1.0 - theta_t[helper_list], axis=0)
    return float(np.sum(theta_t[k] * (1.0 - none_there)))


def isolation_factor(occupancy: OccupancyTensor, n: int, t: int) -> float:
    """Probability user n is co-located with at least one other user in slot t.

    Returns 0 for a single-user scenario (documented convention).
    """
    others = [k for k in range(occupancy.num_users) if k != n]
    if not others:
        return 0.0
    return coverage_prob(occupancy, n, others, t)


def isolation_factors(occupancy: OccupancyTensor) -> np.ndarray:
    """All isolation factors as an (N, T) array."""
    N, T = occupancy.num_users, occupancy.num_slots
    out = np.empty((N, T))
    for n in range(N):
        for t in range(T):
            out[n, t] = isolation_factor(occupancy, n, t)
    return out
