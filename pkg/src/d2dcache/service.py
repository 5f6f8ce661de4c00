"""FastAPI service exposing the caching-policy computations.

Every endpoint is a stateless POST taking the scenario document inline.
Run standalone with ``uvicorn d2dcache.service:app``; the CLI mounts the
same app in-process when no server URL is given.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException

from . import centralized, decentralized, loadmodel, montecarlo
from .errors import CapacityError, D2DCacheError, InvalidProfileError
from .profiles import Scenario, validate_scenario
from .schemas import (
    BoundsRequest,
    BoundsResponse,
    BoundsRow,
    CentralizedRequest,
    CentralizedResponse,
    CentralizedRow,
    DecentralizedRequest,
    DecentralizedResponse,
    DecentralizedRow,
    LadderStepDoc,
    ScenarioDoc,
    SimulateRequest,
    SimulateResponse,
    StaircaseLevelDoc,
    TradeoffBlock,
    TradeoffRequest,
    TradeoffResponse,
    ValidateRequest,
    ValidateResponse,
)

app = FastAPI(
    title="d2dcache",
    description="Mobility-aware D2D caching policies: exact/greedy placement, "
    "gain bounds, pricing-game equilibria, trade-off staircases and Monte "
    "Carlo validation.",
    version="0.1.0",
)


def _load_scenario(doc: ScenarioDoc) -> Scenario:
    try:
        scenario = doc.to_scenario()
    except (InvalidProfileError, ValueError) as exc:
        raise HTTPException(status_code=422, detail={"problems": [str(exc)]})
    problems = validate_scenario(scenario)
    if problems:
        raise HTTPException(status_code=422, detail={"problems": problems})
    return scenario


def _grid(single, sweep, fallback, what: str) -> list[float]:
    if single is not None and sweep is not None:
        raise HTTPException(422, detail={"problems": [f"give {what} or a sweep, not both"]})
    if sweep is not None:
        return sweep.grid()
    if single is not None:
        return [float(single)]
    if fallback is not None:
        return [float(fallback)]
    raise HTTPException(
        422, detail={"problems": [f"missing {what}: pass it or set it in economics"]}
    )


def _economics(doc: ScenarioDoc, field: str):
    return getattr(doc.economics, field, None) if doc.economics is not None else None


@app.get("/health")
def health() -> dict:
    return {"status": "ok"}


@app.post("/validate", response_model=ValidateResponse)
def validate(req: ValidateRequest) -> ValidateResponse:
    try:
        scenario = req.scenario.to_scenario()
    except (InvalidProfileError, ValueError) as exc:
        return ValidateResponse(valid=False, problems=[str(exc)])
    problems = validate_scenario(scenario)
    return ValidateResponse(valid=not problems, problems=problems)


def _policy_rows(scenario: Scenario, policy: str, grid: list[float]) -> list[CentralizedRow]:
    run = centralized.optimal_policy if policy == "optimal" else centralized.greedy_policy
    rows = []
    for r in grid:
        try:
            result = run(scenario, r)
        except CapacityError as exc:
            raise HTTPException(422, detail={"problems": [str(exc)]})
        for ladder in result.ladders:
            seg = ladder.regime(r)
            rows.append(
                CentralizedRow(
                    item=ladder.item + 1,
                    r=r,
                    cache_count=seg.cache_count,
                    users=[u + 1 for u in seg.users],
                    load=result.cost.proactive_load,
                    caching_cost=result.cost.caching_cost,
                    total=result.cost.total_proactive,
                    gain=result.cost.gain,
                    ladder=[
                        LadderStepDoc(r=r_b, count_left=c, users_left=[u + 1 for u in users])
                        for r_b, c, users in ladder.breakpoints()
                    ],
                    skipped_levels=list(ladder.skipped_levels),
                    work=result.work[ladder.item] if result.work else 0,
                )
            )
    return rows


@app.post("/centralized", response_model=CentralizedResponse)
def centralized_endpoint(req: CentralizedRequest) -> CentralizedResponse:
    scenario = _load_scenario(req.scenario)
    grid = _grid(req.r, req.sweep, _economics(req.scenario, "reward"), "r")
    return CentralizedResponse(policy=req.policy, rows=_policy_rows(scenario, req.policy, grid))


@app.post("/bounds", response_model=BoundsResponse)
def bounds_endpoint(req: BoundsRequest) -> BoundsResponse:
    scenario = _load_scenario(req.scenario)
    grid = _grid(req.r, req.sweep, _economics(req.scenario, "reward"), "r")
    rows = []
    for r in grid:
        b = centralized.gain_bounds(scenario, r)
        rows.append(BoundsRow(r=r, gain_lower=b.lower, gain_exact=b.exact, gain_upper=b.upper))
    return BoundsResponse(rows=rows)


@app.post("/decentralized", response_model=DecentralizedResponse)
def decentralized_endpoint(req: DecentralizedRequest) -> DecentralizedResponse:
    scenario = _load_scenario(req.scenario)
    grid = _grid(req.r_prime, req.sweep, _economics(req.scenario, "price"), "r_prime")
    solve = decentralized.spne_fair if req.select == "fair" else decentralized.risk_dominant
    rows = []
    for rp in grid:
        outcome = solve(scenario, rp)
        gains = decentralized.deviation_gains(scenario, outcome.allocation, rp)
        item_pay = decentralized.per_item_payments(scenario, outcome.allocation, rp)
        for m in range(scenario.num_items):
            rows.append(
                DecentralizedRow(
                    item=m + 1,
                    r_prime=rp,
                    x=[float(v) for v in outcome.allocation.x[:, m]],
                    payments=[float(v) for v in item_pay[:, m]],
                    regimes=[outcome.regimes[n][m] for n in range(scenario.num_users)],
                    nash_gap=float(gains[:, m].max()),
                    converged=outcome.converged,
                )
            )
    return DecentralizedResponse(selection=req.select, rows=rows)


def _tradeoff_block(scope: str, result) -> TradeoffBlock:
    return TradeoffBlock(
        scope=scope,
        levels=[
            StaircaseLevelDoc(z_lo=l.z_lo, z_hi=l.z_hi, level=l.level)
            for l in result.staircase
        ],
        z_star=result.z_star,
        r_star=result.r_star,
    )


@app.post("/tradeoff", response_model=TradeoffResponse)
def tradeoff_endpoint(req: TradeoffRequest) -> TradeoffResponse:
    scenario = _load_scenario(req.scenario)
    try:
        if req.side == "sp":
            beta = req.beta if req.beta is not None else _economics(req.scenario, "beta")
            if beta is None:
                raise HTTPException(422, detail={"problems": ["missing beta"]})
            result = centralized.reward_tradeoff(scenario, float(beta))
            return TradeoffResponse(side="sp", blocks=[_tradeoff_block("aggregate", result)])
        gamma = req.gamma if req.gamma is not None else _economics(req.scenario, "gamma")
        if gamma is None:
            raise HTTPException(422, detail={"problems": ["missing gamma"]})
        mt = decentralized.memory_tradeoff(scenario, float(gamma))
        blocks = [
            _tradeoff_block(f"user {n + 1}", res) for n, res in enumerate(mt.per_user)
        ]
        blocks.append(_tradeoff_block("aggregate", mt.aggregate))
        return TradeoffResponse(side="users", blocks=blocks)
    except D2DCacheError as exc:
        raise HTTPException(422, detail={"problems": [str(exc)]})


def _pick_allocation(scenario: Scenario, req: SimulateRequest) -> tuple[np.ndarray, float]:
    """Resolve the allocation to simulate and the price used for payments."""
    reward = req.r if req.r is not None else _economics(req.scenario, "reward")
    price = req.r_prime if req.r_prime is not None else _economics(req.scenario, "price")
    if price is None and reward is not None:
        price = 1.0 - float(reward)
    if req.alloc == "explicit":
        if req.x is None:
            raise HTTPException(422, detail={"problems": ["alloc=explicit needs x"]})
        x = np.asarray(req.x, dtype=float)
    elif req.alloc in ("optimal", "greedy"):
        if reward is None:
            raise HTTPException(422, detail={"problems": [f"alloc={req.alloc} needs r"]})
        run = centralized.optimal_policy if req.alloc == "optimal" else centralized.greedy_policy
        x = run(scenario, float(reward)).allocation.x
    else:  # fair
        if price is None:
            raise HTTPException(422, detail={"problems": ["alloc=fair needs r_prime"]})
        x = decentralized.spne_fair(scenario, float(price)).allocation.x
    if price is None:
        raise HTTPException(422, detail={"problems": ["missing price: pass r or r_prime"]})
    return x, float(price)


@app.post("/simulate", response_model=SimulateResponse)
def simulate_endpoint(req: SimulateRequest) -> SimulateResponse:
    scenario = _load_scenario(req.scenario)
    x_arr, price = _pick_allocation(scenario, req)
    alloc = loadmodel.CachingAllocation(x_arr)
    problems = alloc.violations(scenario)
    if problems:
        raise HTTPException(422, detail={"problems": problems})
    try:
        config = montecarlo.SimulationConfig(
            replications=req.replications, seed=req.seed, lanes=req.lanes
        )
        report = montecarlo.simulate(scenario, alloc, price, config)
        comparison = montecarlo.compare_analytic(report, scenario, alloc, price)
    except D2DCacheError as exc:
        raise HTTPException(422, detail={"problems": [str(exc)]})
    slot_analytic = [
        loadmodel.proactive_load(scenario, alloc, t) for t in range(scenario.num_slots)
    ]
    literal = float(
        np.mean(
            [
                loadmodel.proactive_load_literal(scenario, alloc, t)
                for t in range(scenario.num_slots)
            ]
        )
    )
    return SimulateResponse(
        replications=report.replications,
        seed=report.seed,
        lanes=report.lanes,
        price=price,
        allocation=[[float(v) for v in row] for row in x_arr],
        slot_load_mean=[float(v) for v in report.slot_load_mean],
        slot_load_stderr=[float(v) for v in report.slot_load_stderr],
        slot_load_analytic=[float(v) for v in slot_analytic],
        avg_load_mean=report.avg_load_mean,
        avg_load_stderr=report.avg_load_stderr,
        avg_load_analytic=float(np.mean(slot_analytic)),
        payment_mean=[float(v) for v in report.payment_mean],
        payment_stderr=[float(v) for v in report.payment_stderr],
        payment_analytic=[
            loadmodel.user_proactive_payment(scenario, alloc, n, price)
            for n in range(scenario.num_users)
        ],
        load_z=comparison.load_z,
        payment_z=[float(v) for v in comparison.payment_z],
        max_abs_z=comparison.max_abs_z,
        literal_load_analytic=literal,
        literal_load_z=comparison.literal_load_z,
        literal_load_bias=comparison.literal_load_bias,
    )
