import math

import numpy as np
import pytest

from d2dcache import (
    CachingAllocation,
    CapacityError,
    DemandProfile,
    InvalidArgumentError,
    build_scenario,
    gain_bounds,
    greedy_policy,
    level1_scores,
    optimal_policy,
    proactive_cost,
    prop1_thresholds,
    prop2_thresholds,
    reward_tradeoff,
    similarity_policy,
    uncovered_base,
)
from conftest import random_scenario, uniform_mobility
from oracles import corner_item_costs, corner_min_cost


class TestUncoveredBase:
    def test_empty_set_is_reactive(self, s1):
        assert uncovered_base(s1, 0, []) == pytest.approx(1.4)

    def test_everyone_caching_covers_all(self, s1):
        assert uncovered_base(s1, 0, [0, 1]) == 0.0

    def test_s1_single_cacher_matches_load(self, s1):
        # equals the proactive load of the (S, 0) corner allocation
        assert uncovered_base(s1, 0, [0]) == pytest.approx(0.3)

    def test_monotone_in_set(self, rng):
        sc = random_scenario(rng, 5, 2, 3, 2)
        assert uncovered_base(sc, 1, [0, 2]) <= uncovered_base(sc, 1, [0]) + 1e-12


class TestOptimalPolicy:
    def test_s1_ladder_and_allocations(self, s1):
        result = optimal_policy(s1, 0.2)
        steps = result.ladders[0].breakpoints()
        assert [round(r, 12) for r, _, _ in steps] == [0.3, 1.1]
        assert steps[0][1] == 2 and steps[1][1] == 1
        assert steps[1][2] == (0,)
        assert np.array_equal(result.allocation.x, [[1.0], [1.0]])
        assert np.array_equal(optimal_policy(s1, 0.5).allocation.x, [[1.0], [0.0]])

    def test_breakpoint_resolves_to_smaller_caching(self, s1):
        # exactly on the crossing the smaller-cardinality regime wins
        assert optimal_policy(s1, 0.3).ladders[0].regime(0.3).cache_count == 1

    def test_free_caching_at_zero_reward(self, rng):
        sc = random_scenario(rng, 4, 2, 3, 2)
        result = optimal_policy(sc, 0.0)
        assert np.allclose(result.allocation.x, np.tile(sc.sizes, (4, 1)))

    def test_cost_matches_envelope_line(self, rng):
        sc = random_scenario(rng, 4, 2, 3, 2)
        r = 0.35
        result = optimal_policy(sc, r)
        expected = 0.0
        for ladder in result.ladders:
            seg = ladder.regime(r)
            expected += uncovered_base(sc, ladder.item, seg.users)
            expected += r * seg.cache_count * sc.sizes[ladder.item]
        assert result.cost.total_proactive == pytest.approx(expected, abs=1e-9)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_corner_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        sc = random_scenario(rng, int(rng.integers(2, 7)), 2, 3, 2)
        r = float(rng.uniform(0.0, 1.0))
        assert optimal_policy(sc, r).cost.total_proactive == pytest.approx(
            corner_min_cost(sc, r), abs=1e-9
        )

    def test_oracle_agrees_with_load_model_on_corners(self, rng):
        # ties the bitmask oracle to proactive_cost before trusting it
        sc = random_scenario(rng, 4, 1, 3, 2)
        r = 0.4
        costs = corner_item_costs(sc, 0, r)
        for mask in (0b0000, 0b0101, 0b1111, 0b0010):
            x = np.zeros((4, 1))
            for n in range(4):
                if mask >> n & 1:
                    x[n, 0] = sc.sizes[0]
            direct = proactive_cost(sc, CachingAllocation(x), r).total_proactive
            assert costs[mask] == pytest.approx(direct, abs=1e-12)

    def test_work_counter_is_all_proper_nonempty_subsets(self, rng):
        for N in (4, 6):
            sc = random_scenario(rng, N, 1, 2, 1)
            assert optimal_policy(sc, 0.4).work == (2**N - 2,)

    def test_capacity_error_beyond_cap(self, rng, monkeypatch):
        import d2dcache.centralized as cen

        sc = random_scenario(rng, 4, 1, 2, 1)
        monkeypatch.setattr(cen, "EXACT_SEARCH_CAP", 3)
        with pytest.raises(CapacityError, match="greedy"):
            optimal_policy(sc, 0.2)

    def test_reward_range_checked(self, s1):
        with pytest.raises(InvalidArgumentError):
            optimal_policy(s1, -0.1)

    def test_cached_bytes_non_increasing_in_reward(self, rng):
        sc = random_scenario(rng, 5, 2, 3, 2)
        ladders = optimal_policy(sc, 0.0).ladders
        grid = np.linspace(0.0, 1.0, 101)
        totals = [
            sum(l.regime(float(r)).cache_count * sc.sizes[l.item] for l in ladders)
            for r in grid
        ]
        assert all(a >= b - 1e-9 for a, b in zip(totals, totals[1:]))


class TestProp1:
    def test_s1_thresholds(self, s1):
        res = prop1_thresholds(s1, 0)
        assert res.tau == pytest.approx((0.4, 0.3), abs=1e-12)
        assert res.rho == pytest.approx((1.1, 1.0), abs=1e-12)
        assert res.r_full == pytest.approx(0.3, abs=1e-12)
        assert res.r_none == pytest.approx(1.1, abs=1e-12)
        assert res.single_user == 0

    def test_thresholds_match_envelope_breakpoints(self, rng):
        for _ in range(10):
            sc = random_scenario(rng, 2, 1, 3, 2)
            res = prop1_thresholds(sc, 0)
            steps = optimal_policy(sc, 0.0).ladders[0].breakpoints()
            if len(steps) == 2:
                assert steps[0][0] == pytest.approx(res.r_full, abs=1e-9)
                assert steps[1][0] == pytest.approx(res.r_none, abs=1e-9)
                assert steps[1][2] == (res.single_user,)

    def test_wrong_user_count_rejected(self, rng):
        with pytest.raises(InvalidArgumentError):
            prop1_thresholds(random_scenario(rng, 3, 1, 2, 1), 0)


class TestProp2:
    def test_thresholds_ordered_and_regimes_match_envelope(self, rng):
        for _ in range(20):
            sc = random_scenario(rng, 3, 1, 3, 2)
            th = prop2_thresholds(sc, 0)
            assert th.r_full <= th.r_once + 1e-12
            assert th.r_once <= th.r_none + 1e-12
            ladder = optimal_policy(sc, 0.0).ladders[0]
            for r in rng.uniform(0.0, 1.0, 25):
                assert ladder.regime(float(r)).cache_count == th.cache_count(float(r))

    def test_symmetric_users_tie_lexicographically(self):
        sc = build_scenario(
            sizes=[1.0],
            demand=[DemandProfile(np.array([[0.5]]))] * 3,
            mobility=[uniform_mobility(2, 1)] * 3,
        )
        th = prop2_thresholds(sc, 0)
        assert th.single_user == 0
        assert th.pair == (0, 1)

    def test_uniform_limit_collapses_to_interests(self):
        # with uniform mobility over L locations the discount is (1-1/L)^2,
        # so r_full -> min interest and r_none -> max interest as L grows
        L = 10
        p_hats = [0.9, 0.5, 0.2]
        sc = build_scenario(
            sizes=[1.0],
            demand=[DemandProfile(np.array([[p]])) for p in p_hats],
            mobility=[uniform_mobility(L, 1)] * 3,
        )
        th = prop2_thresholds(sc, 0)
        assert th.r_full == pytest.approx(min(p_hats) * (1 - 1 / L) ** 2, abs=1e-12)
        expected_none = max(
            p_hats[i] + sum(p_hats[j] for j in range(3) if j != i) / L
            for i in range(3)
        )
        assert th.r_none == pytest.approx(expected_none, abs=1e-12)

    def test_wrong_user_count_rejected(self, s1):
        with pytest.raises(InvalidArgumentError):
            prop2_thresholds(s1, 0)


class TestGreedy:
    def test_s1_picks_and_ladder(self, s1):
        result = greedy_policy(s1, 0.2)
        steps = result.ladders[0].breakpoints()
        assert [round(r, 12) for r, _, _ in steps] == [0.3, 1.1]
        assert np.array_equal(result.allocation.x, [[1.0], [1.0]])
        assert result.work == (3,)

    def test_single_user_caches_iff_interest_beats_reward(self):
        sc = build_scenario(
            sizes=[1.0],
            demand=[DemandProfile(np.array([[0.6]]))],
            mobility=[uniform_mobility(2, 1)],
        )
        assert greedy_policy(sc, 0.5).allocation.x[0, 0] == 1.0
        assert greedy_policy(sc, 0.7).allocation.x[0, 0] == 0.0
        assert greedy_policy(sc, 0.6).allocation.x[0, 0] == 0.0  # strict

    def test_first_pick_equals_optimal_single_cache_user(self, rng):
        for _ in range(10):
            sc = random_scenario(rng, 5, 1, 3, 2)
            greedy_ladder = greedy_policy(sc, 0.9).ladders[0]
            scores = level1_scores(sc, 0)
            top = greedy_ladder.segments[-2].users  # the single-cache segment
            assert len(top) == 1 and top[0] == int(np.argmax(scores))

    def test_marginal_gains_non_increasing(self, rng):
        sc = random_scenario(rng, 6, 1, 3, 2)
        steps = greedy_policy(sc, 0.2).ladders[0].breakpoints()
        rs = [r for r, _, _ in steps]
        assert rs == sorted(rs)

    def test_work_counter(self, rng):
        for N in (4, 6):
            sc = random_scenario(rng, N, 1, 2, 1)
            assert greedy_policy(sc, 0.4).work == (N * (N + 1) // 2,)


class TestGainBounds:
    def test_s1_values(self, s1):
        b = gain_bounds(s1, 0.2)
        assert b.exact == pytest.approx(1.0)
        assert b.lower == pytest.approx(1.0)
        assert b.upper == pytest.approx(1.7)
        assert b.lower <= b.exact <= b.upper

    def test_sandwich_on_random_instances(self, rng):
        for _ in range(15):
            sc = random_scenario(rng, int(rng.integers(2, 7)), 2, 3, 2)
            r = float(rng.uniform(0.0, 1.0))
            b = gain_bounds(sc, r)
            assert b.lower <= b.exact + 1e-9
            assert b.exact <= b.upper + 1e-9
            assert b.lower >= -1e-12

    def test_equality_in_single_cache_regime(self, rng):
        found = 0
        for _ in range(30):
            sc = random_scenario(rng, int(rng.integers(2, 6)), 1, 3, 2)
            ladder = optimal_policy(sc, 0.0).ladders[0]
            seg = next((s for s in ladder.segments if s.cache_count == 1), None)
            if seg is None or seg.r_lo >= 1.0:
                continue
            r = min((seg.r_lo + seg.r_hi) / 2.0, (seg.r_lo + 1.0) / 2.0)
            b = gain_bounds(sc, float(r))
            assert b.lower == pytest.approx(b.exact, abs=1e-9)
            assert b.upper == pytest.approx(b.exact, abs=1e-9)
            found += 1
        assert found >= 5

    def test_prohibitive_reward_gives_zero_gains(self, rng):
        sc = random_scenario(rng, 4, 2, 3, 1)
        b = gain_bounds(sc, 1.0)
        assert b.lower >= 0.0 and b.upper >= 0.0
        opt = optimal_policy(sc, 1.0)
        if opt.allocation.x.sum() == 0.0:
            assert b.exact == pytest.approx(0.0, abs=1e-12)

    def test_bounds_survive_capacity_error(self, rng, monkeypatch):
        import d2dcache.centralized as cen

        sc = random_scenario(rng, 5, 1, 2, 1)
        reference_upper = gain_bounds(sc, 0.3)
        monkeypatch.setattr(cen, "EXACT_SEARCH_CAP", 3)
        b = cen.gain_bounds(sc, 0.3)
        assert b.exact is None
        assert b.lower <= b.upper + 1e-12
        assert b.upper >= reference_upper.exact - 1e-9  # max-over-k fallback is valid


class TestRewardTradeoff:
    def test_s1_staircase_and_intersection(self, s1):
        res = reward_tradeoff(s1, 10.0)
        levels = [(l.z_lo, l.z_hi, round(l.level, 12)) for l in res.staircase]
        assert levels == [(0.0, 1.0, 1.1), (1.0, 2.0, 0.3)]
        # the line Z = 10 r crosses the Z = 2 step (span [0, 0.3]) at r = 0.2
        assert (res.z_star, res.r_star) == (2.0, pytest.approx(0.2))

    def test_steep_line_degenerates_to_origin(self, s1):
        res = reward_tradeoff(s1, 1e-9)
        assert res.z_star == pytest.approx(0.0, abs=1e-6)

    def test_interest_sorted_staircase_in_uniform_limit(self):
        # near the many-locations limit the staircase heights approach the
        # sorted interests; a line through a step pins r* = 0.5 and exactly
        # the users with interest above 0.5 receive caching
        L = 400
        p_hats = [0.9, 0.7, 0.3]
        sc = build_scenario(
            sizes=[1.0],
            demand=[DemandProfile(np.array([[p]])) for p in p_hats],
            mobility=[uniform_mobility(L, 1)] * 3,
        )
        res = reward_tradeoff(sc, 4.0)
        heights = [l.level for l in res.staircase]
        assert heights == pytest.approx(sorted(p_hats, reverse=True), abs=0.01)
        assert res.z_star == pytest.approx(2.0)
        assert res.r_star == pytest.approx(0.5)
        cached = optimal_policy(sc, res.r_star).allocation.x[:, 0]
        assert list(cached > 0) == [True, True, False]

    def test_bad_slope_rejected(self, s1):
        with pytest.raises(InvalidArgumentError):
            reward_tradeoff(s1, 0.0)


class TestSimilarityPolicy:
    def test_interest_ladder_in_many_locations_limit(self):
        sc = build_scenario(
            sizes=[1.0],
            demand=[DemandProfile(np.array([[0.9]])), DemandProfile(np.array([[0.4]]))],
            mobility=[uniform_mobility(3, 1)] * 2,
        )
        res = similarity_policy(sc, 0.5, l_infinity=True)
        steps = res.ladders[0].breakpoints()
        assert [round(r, 12) for r, _, _ in steps] == [0.4, 0.9]
        assert np.array_equal(res.allocation.x, [[1.0], [0.0]])

    def test_uniform_agrees_with_exact_policy(self, s1):
        for r in (0.1, 0.25, 0.5, 0.9):
            sim = similarity_policy(s1, r, uniform=True)
            opt = optimal_policy(s1, r)
            assert np.array_equal(sim.allocation.x, opt.allocation.x)
            sim_steps = sim.ladders[0].breakpoints()
            opt_steps = opt.ladders[0].breakpoints()
            assert len(sim_steps) == len(opt_steps)
            for (ra, ca, ua), (rb, cb, ub) in zip(sim_steps, opt_steps):
                assert ra == pytest.approx(rb, abs=1e-12)
                assert (ca, ua) == (cb, ub)

    def test_identical_users_tie_break_to_first(self):
        sc = build_scenario(
            sizes=[1.0],
            demand=[DemandProfile(np.array([[0.6]]))] * 3,
            mobility=[uniform_mobility(2, 1)] * 3,
        )
        res = similarity_policy(sc, 0.9)
        single = next(s for s in res.ladders[0].segments if s.cache_count == 1)
        assert single.users == (0,)

    def test_distinct_mobility_rejected(self, rng):
        sc = random_scenario(rng, 2, 1, 3, 2)
        with pytest.raises(InvalidArgumentError):
            similarity_policy(sc, 0.5)
