"""Pydantic models for the service API and the scenario file format.

The scenario document is the same tree whether it arrives as YAML on disk
(CLI) or as JSON in a request body; unknown keys are rejected everywhere.
"""

from __future__ import annotations

from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import InvalidProfileError
from .profiles import DemandProfile, MobilityProfile, Scenario, _assemble


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CountsDoc(StrictModel):
    N: int = Field(ge=1)
    M: int = Field(ge=1)
    L: int = Field(ge=1)
    T: int = Field(ge=1)


class ItemDoc(StrictModel):
    size: float


class MobilityDoc(StrictModel):
    initial: list[float]
    transitions: list[list[list[float]]]


class UserDoc(StrictModel):
    demand: list[list[float]]
    mobility: MobilityDoc


class EconomicsDoc(StrictModel):
    reward: Optional[float] = None
    price: Optional[float] = None
    beta: Optional[float] = None
    gamma: Optional[float] = None


class ScenarioDoc(StrictModel):
    counts: CountsDoc
    items: list[ItemDoc]
    users: list[UserDoc]
    economics: Optional[EconomicsDoc] = None

    def structural_problems(self) -> list[str]:
        """Dimension mismatches between the counts block and the data."""
        out = []
        c = self.counts
        if len(self.items) != c.M:
            out.append(f"counts.M={c.M} but {len(self.items)} items given")
        if len(self.users) != c.N:
            out.append(f"counts.N={c.N} but {len(self.users)} users given")
        for i, user in enumerate(self.users):
            who = f"user {i + 1}"
            if len(user.demand) != c.T or any(len(row) != c.M for row in user.demand):
                out.append(f"{who}: demand must be T={c.T} rows of M={c.M} entries")
            mob = user.mobility
            if len(mob.initial) != c.L:
                out.append(f"{who}: mobility.initial must have L={c.L} entries")
            if len(mob.transitions) != c.T or any(
                len(mat) != c.L or any(len(row) != c.L for row in mat)
                for mat in mob.transitions
            ):
                out.append(f"{who}: mobility.transitions must be T={c.T} matrices of LxL")
        return out

    def to_scenario(self) -> Scenario:
        """Build the in-memory scenario; semantic checks stay report-style."""
        problems = self.structural_problems()
        if problems:
            raise InvalidProfileError("; ".join(problems))
        demand = [DemandProfile(np.asarray(u.demand, dtype=float)) for u in self.users]
        mobility = [
            MobilityProfile(
                transitions=np.asarray(u.mobility.transitions, dtype=float),
                initial=np.asarray(u.mobility.initial, dtype=float),
            )
            for u in self.users
        ]
        return _assemble([item.size for item in self.items], demand, mobility)


class SweepDoc(StrictModel):
    """A sweep grid: either an explicit value list or start/stop/step."""

    start: Optional[float] = None
    stop: Optional[float] = None
    step: Optional[float] = None
    values: Optional[list[float]] = None

    @model_validator(mode="after")
    def _check(self) -> "SweepDoc":
        if self.values is not None:
            if self.start is not None or self.stop is not None or self.step is not None:
                raise ValueError("give either values or start/stop/step, not both")
            if not self.values:
                raise ValueError("sweep values must be nonempty")
            bad = [v for v in self.values if not 0.0 <= v <= 1.0]
        else:
            if None in (self.start, self.stop, self.step):
                raise ValueError("sweep needs start, stop and step (or explicit values)")
            if self.step <= 0.0:
                raise ValueError("sweep step must be positive")
            if self.stop < self.start:
                raise ValueError("sweep stop must not precede start")
            bad = [v for v in (self.start, self.stop) if not 0.0 <= v <= 1.0]
        if bad:
            raise ValueError(f"sweep grid must stay within [0, 1], got {bad}")
        return self

    def grid(self) -> list[float]:
        """The grid, including both endpoints."""
        if self.values is not None:
            return list(self.values)
        out = []
        k = 0
        while True:
            v = self.start + k * self.step
            if v > self.stop + 1e-12:
                break
            out.append(min(v, self.stop))
            k += 1
        if not out or abs(out[-1] - self.stop) > 1e-12:
            out.append(self.stop)
        return out


# ---------------------------------------------------------------- requests


class ValidateRequest(StrictModel):
    scenario: ScenarioDoc


class CentralizedRequest(StrictModel):
    scenario: ScenarioDoc
    policy: Literal["optimal", "greedy"] = "optimal"
    r: Optional[float] = None
    sweep: Optional[SweepDoc] = None


class BoundsRequest(StrictModel):
    scenario: ScenarioDoc
    r: Optional[float] = None
    sweep: Optional[SweepDoc] = None


class DecentralizedRequest(StrictModel):
    scenario: ScenarioDoc
    select: Literal["fair", "risk"] = "fair"
    r_prime: Optional[float] = None
    sweep: Optional[SweepDoc] = None


class TradeoffRequest(StrictModel):
    scenario: ScenarioDoc
    side: Literal["sp", "users"]
    beta: Optional[float] = None
    gamma: Optional[float] = None


class SimulateRequest(StrictModel):
    scenario: ScenarioDoc
    alloc: Literal["optimal", "greedy", "fair", "explicit"] = "optimal"
    x: Optional[list[list[float]]] = None
    r: Optional[float] = None
    r_prime: Optional[float] = None
    replications: int = Field(default=100_000, ge=1)
    seed: int = Field(default=0, ge=0)
    lanes: int = Field(default=1, ge=1)


# ---------------------------------------------------------------- responses


class ValidateResponse(StrictModel):
    valid: bool
    problems: list[str]


class LadderStepDoc(StrictModel):
    r: float
    count_left: int
    users_left: list[int]  # 1-based


class CentralizedRow(StrictModel):
    item: int  # 1-based
    r: float
    cache_count: int
    users: list[int]  # 1-based
    load: float
    caching_cost: float
    total: float
    gain: float
    ladder: list[LadderStepDoc]
    skipped_levels: list[int]
    work: int


class CentralizedResponse(StrictModel):
    policy: str
    rows: list[CentralizedRow]


class BoundsRow(StrictModel):
    r: float
    gain_lower: float
    gain_exact: Optional[float]
    gain_upper: float


class BoundsResponse(StrictModel):
    rows: list[BoundsRow]


class DecentralizedRow(StrictModel):
    item: int  # 1-based
    r_prime: float
    x: list[float]
    payments: list[float]
    regimes: list[str]
    nash_gap: float
    converged: bool


class DecentralizedResponse(StrictModel):
    selection: str
    rows: list[DecentralizedRow]


class StaircaseLevelDoc(StrictModel):
    z_lo: float
    z_hi: float
    level: float


class TradeoffBlock(StrictModel):
    scope: str  # "aggregate" or "user <n>"
    levels: list[StaircaseLevelDoc]
    z_star: float
    r_star: float


class TradeoffResponse(StrictModel):
    side: str
    blocks: list[TradeoffBlock]


class SimulateResponse(StrictModel):
    replications: int
    seed: int
    lanes: int
    price: float
    allocation: list[list[float]]
    slot_load_mean: list[float]
    slot_load_stderr: list[float]
    slot_load_analytic: list[float]
    avg_load_mean: float
    avg_load_stderr: float
    avg_load_analytic: float
    payment_mean: list[float]
    payment_stderr: list[float]
    payment_analytic: list[float]
    load_z: float
    payment_z: list[float]
    max_abs_z: float
    literal_load_analytic: float
    literal_load_z: float
    literal_load_bias: float
