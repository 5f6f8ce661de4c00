import numpy as np
import pytest

from d2dcache import (
    CachingAllocation,
    DemandProfile,
    InvalidArgumentError,
    best_response,
    build_scenario,
    memory_tradeoff,
    mobility_limit_policy,
    risk_dominant,
    spne_fair,
    user_proactive_payment,
    user_thresholds,
    verify_nash,
)
from d2dcache.decentralized import deviation_gains, per_item_payments
from conftest import random_scenario, uniform_mobility


class TestUserThresholds:
    def test_s1_values(self, s1):
        th = user_thresholds(s1)
        assert th.interest[:, 0] == pytest.approx([0.8, 0.6], abs=1e-12)
        assert th.discounted[:, 0] == pytest.approx([0.4, 0.3], abs=1e-12)

    def test_single_location_kills_discounted(self):
        sc = build_scenario(
            sizes=[1.0],
            demand=[DemandProfile(np.array([[0.7]])), DemandProfile(np.array([[0.2]]))],
            mobility=[uniform_mobility(1, 1)] * 2,
        )
        th = user_thresholds(sc)
        assert np.allclose(th.discounted, 0.0)

    def test_ordering_invariant(self, rng):
        for _ in range(10):
            sc = random_scenario(rng, int(rng.integers(2, 6)), 2, 3, 2)
            th = user_thresholds(sc)
            assert np.all(th.discounted <= th.interest + 1e-12)
            assert np.all(th.discounted >= -1e-12)
            assert np.all(th.interest <= 1.0 + 1e-12)


class TestBestResponse:
    def test_cheap_price_caches_regardless(self, s1):
        assert best_response(s1, 0, 0, np.array([0.0, 0.0]), 0.3) == 1.0
        assert best_response(s1, 0, 0, np.array([0.0, 1.0]), 0.3) == 1.0

    def test_partial_band_completes_the_item(self, s1):
        assert best_response(s1, 0, 0, np.array([0.0, 0.4]), 0.5) == pytest.approx(0.6)

    def test_high_price_never_caches(self, s1):
        for x2 in (0.0, 0.5, 1.0):
            assert best_response(s1, 0, 0, np.array([0.0, x2]), 0.9) == 0.0

    def test_indifference_breaks_to_smallest(self, s1):
        # at exactly the discounted interest with the item already covered,
        # every amount pays the same; the smallest is returned
        assert best_response(s1, 0, 0, np.array([0.0, 1.0]), 0.4) == 0.0

    def test_bad_price_rejected(self, s1):
        with pytest.raises(InvalidArgumentError):
            best_response(s1, 0, 0, np.array([0.0, 0.0]), 1.2)


class TestFairEquilibrium:
    def test_partial_shares_on_s1(self, s1):
        out = spne_fair(s1, 0.5)
        assert out.allocation.x[:, 0] == pytest.approx([4 / 7, 3 / 7], abs=1e-12)
        assert out.regimes == (("partial",), ("partial",))
        assert out.nash_certified and out.converged

    def test_partial_interval_matches_figure(self, s1):
        # partial for both exactly when the price sits in (0.4, 0.6]
        for rp in (0.41, 0.5, 0.6):
            out = spne_fair(s1, rp)
            assert out.regimes == (("partial",), ("partial",))
            assert out.allocation.x[:, 0].sum() == pytest.approx(1.0, abs=1e-9)

    def test_free_rider_region(self, s1):
        out = spne_fair(s1, 0.35)
        assert np.array_equal(out.allocation.x, [[1.0], [0.0]])
        assert out.nash_certified

    def test_zero_price_everyone_full(self, s1):
        out = spne_fair(s1, 0.0)
        assert np.array_equal(out.allocation.x, [[1.0], [1.0]])
        assert out.nash_certified

    def test_takeover_region(self, s1):
        out = spne_fair(s1, 0.7)
        assert np.array_equal(out.allocation.x, [[1.0], [0.0]])
        out = spne_fair(s1, 0.9)
        assert np.array_equal(out.allocation.x, [[0.0], [0.0]])

    def test_random_instances_certify(self, rng):
        for _ in range(25):
            sc = random_scenario(rng, int(rng.integers(2, 6)), int(rng.integers(1, 4)), 3, 2)
            out = spne_fair(sc, float(rng.uniform(0.0, 1.0)))
            assert out.converged
            assert out.nash_gap <= 1e-9

    def test_individual_rationality(self, rng):
        for _ in range(10):
            sc = random_scenario(rng, int(rng.integers(2, 5)), 2, 3, 2)
            out = spne_fair(sc, float(rng.uniform(0.0, 1.0)))
            assert np.all(out.payments.gain >= -1e-9)

    def test_regime_labels_consistent_with_allocation(self, rng):
        sc = random_scenario(rng, 4, 2, 3, 2)
        out = spne_fair(sc, 0.45)
        for n in range(4):
            for m in range(2):
                v, label = out.allocation.x[n, m], out.regimes[n][m]
                if label == "full":
                    assert v == pytest.approx(sc.sizes[m])
                elif label == "none":
                    assert v == 0.0
                else:
                    assert 0.0 < v < sc.sizes[m]


class TestRiskDominant:
    def test_conflict_region_overcaches_and_fails_nash(self, s1):
        out = risk_dominant(s1, 0.45)
        assert out.allocation.x[:, 0].sum() > 1.0 + 1e-6
        assert out.nash_gap > 1e-6
        assert not out.nash_certified

    def test_high_price_trivially_nash(self, s1):
        out = risk_dominant(s1, 0.9)
        assert np.array_equal(out.allocation.x, [[0.0], [0.0]])
        assert out.nash_certified

    def test_dominant_region_matches_fair(self, s1):
        out = risk_dominant(s1, 0.2)
        fair = spne_fair(s1, 0.2)
        assert np.array_equal(out.allocation.x, fair.allocation.x)
        assert out.nash_certified

    def test_unique_equilibrium_region_is_nash(self, s1):
        # user 1 full by dominance, user 2 best-responds to the certainty
        out = risk_dominant(s1, 0.35)
        assert np.array_equal(out.allocation.x, [[1.0], [0.0]])
        assert out.nash_certified

    def test_ramp_values_in_conflict_band(self, s1):
        # uniform-belief best responses: x_n = S (p_hat - r') / (p_hat - p_tilde)
        out = risk_dominant(s1, 0.45)
        assert out.allocation.x[0, 0] == pytest.approx((0.8 - 0.45) / 0.4, abs=1e-6)
        assert out.allocation.x[1, 0] == pytest.approx((0.6 - 0.45) / 0.3, abs=1e-6)


class TestVerifyNash:
    def test_fair_point_certifies(self, s1):
        out = spne_fair(s1, 0.5)
        assert verify_nash(s1, out.allocation, 0.5) <= 1e-9

    def test_risk_conflict_gain_positive(self, s1):
        out = risk_dominant(s1, 0.45)
        assert verify_nash(s1, out.allocation, 0.45) > 1e-6

    def test_empty_allocation_at_max_price(self, s1):
        x = CachingAllocation(np.zeros((2, 1)))
        assert verify_nash(s1, x, 1.0) == 0.0

    def test_gains_match_totals(self, rng):
        sc = random_scenario(rng, 3, 2, 3, 2)
        x = CachingAllocation(rng.uniform(0.0, 1.0, (3, 2)) * sc.sizes[None, :])
        gains = deviation_gains(sc, x, 0.4)
        assert verify_nash(sc, x, 0.4) == pytest.approx(gains.max(), abs=1e-15)

    def test_per_item_payments_sum_to_total(self, rng):
        sc = random_scenario(rng, 3, 3, 3, 2)
        x = CachingAllocation(rng.uniform(0.0, 1.0, (3, 3)) * sc.sizes[None, :])
        pays = per_item_payments(sc, x, 0.4)
        for n in range(3):
            assert pays[n].sum() == pytest.approx(
                user_proactive_payment(sc, x, n, 0.4), abs=1e-12
            )


class TestMemoryTradeoff:
    def test_user_one_intersection_on_s1(self, s1):
        mt = memory_tradeoff(s1, 0.7)
        res = mt.per_user[0]
        levels = [(round(l.z_lo, 12), round(l.z_hi, 12), l.level) for l in res.staircase]
        assert levels == [(0.0, round(4 / 7, 12), 0.8), (round(4 / 7, 12), 1.0, 0.4)]
        assert res.z_star == pytest.approx(4 / 7)
        assert res.r_star == pytest.approx(0.4)

    def test_aggregate_staircase_merges_levels(self, s1):
        mt = memory_tradeoff(s1, 0.7)
        heights = [l.level for l in mt.aggregate.staircase]
        assert heights == pytest.approx([0.8, 0.6, 0.4, 0.3], abs=1e-12)
        widths = [l.z_hi - l.z_lo for l in mt.aggregate.staircase]
        assert widths == pytest.approx([4 / 7, 3 / 7, 3 / 7, 4 / 7], abs=1e-12)

    def test_greedy_provider_kills_memory(self, s1):
        mt = memory_tradeoff(s1, 1e9)
        assert mt.aggregate.z_star == pytest.approx(0.0, abs=1e-6)

    def test_generous_provider_fills_memory(self, s1):
        mt = memory_tradeoff(s1, 1e-9)
        assert mt.aggregate.z_star == pytest.approx(2.0)
        assert mt.per_user[0].z_star == pytest.approx(1.0)

    def test_bad_slope_rejected(self, s1):
        with pytest.raises(InvalidArgumentError):
            memory_tradeoff(s1, -1.0)


class TestMobilityLimits:
    def test_many_locations_regions_on_s1(self, s1):
        assert np.array_equal(
            mobility_limit_policy(s1, "many-locations", 0.5).allocation.x, [[1.0], [1.0]]
        )
        assert np.array_equal(
            mobility_limit_policy(s1, "many-locations", 0.7).allocation.x, [[1.0], [0.0]]
        )
        assert np.array_equal(
            mobility_limit_policy(s1, "many-locations", 0.85).allocation.x, [[0.0], [0.0]]
        )

    def test_many_locations_boundary_is_strict(self, s1):
        out = mobility_limit_policy(s1, "many-locations", 0.6)
        assert np.array_equal(out.allocation.x, [[1.0], [0.0]])

    def test_single_location_splits_fairly(self, s1):
        out = mobility_limit_policy(s1, "single-location", 0.3)
        assert out.allocation.x[:, 0] == pytest.approx([4 / 7, 3 / 7], abs=1e-12)

    def test_single_location_takeover(self, s1):
        out = mobility_limit_policy(s1, "single-location", 0.7)
        assert np.array_equal(out.allocation.x, [[1.0], [0.0]])

    def test_unknown_limit_rejected(self, s1):
        with pytest.raises(InvalidArgumentError):
            mobility_limit_policy(s1, "sideways", 0.5)


class TestRegimeSweepConsistency:
    def test_only_crossed_thresholds_change_regimes(self, s1):
        # sweeping the price changes regimes only at 0.3, 0.4, 0.6, 0.8
        labels = {}
        for rp in (0.1, 0.35, 0.5, 0.7, 0.9):
            labels[rp] = spne_fair(s1, rp).regimes
        assert labels[0.1] == (("full",), ("full",))
        assert labels[0.35] == (("full",), ("none",))
        assert labels[0.5] == (("partial",), ("partial",))
        assert labels[0.7] == (("full",), ("none",))
        assert labels[0.9] == (("none",), ("none",))
