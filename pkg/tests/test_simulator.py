import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowdelay.model import ModelParams, expected_delay, per_packet_delay
from flowdelay.simulator import (
    SLOTS_PER_STREAM,
    Estimator,
    SimConfig,
    _packet_level_fractions,
    estimate_expected_delay,
    sample_poisson,
    sample_poisson_array,
    simulate_slot,
    stream_for_block,
)


def rng(seed=0):
    return np.random.default_rng(seed)


class TestSamplePoisson:
    def test_mean_and_variance_b10(self):
        draws = sample_poisson_array(rng(1), 10.0, 10**6)
        assert abs(draws.mean() - 10.0) <= 4 * math.sqrt(10.0 / 10**6)
        assert abs(draws.var() - 10.0) <= 0.05 * 10.0

    @pytest.mark.parametrize("b", [30.0, 75.5, 1e4])
    def test_rejection_branch_moments(self, b):
        draws = sample_poisson_array(rng(2), b, 400_000)
        assert abs(draws.mean() - b) <= 5 * math.sqrt(b / draws.size)
        assert abs(draws.var() - b) <= 0.03 * b

    @pytest.mark.parametrize("b", [0.7, 12.0, 45.0])
    def test_scalar_moments(self, b):
        g = rng(3)
        draws = np.array([sample_poisson(g, b) for _ in range(40_000)])
        assert abs(draws.mean() - b) <= 5 * math.sqrt(b / draws.size)
        assert abs(draws.var() - b) <= 0.06 * b

    @pytest.mark.parametrize("b", [0.5, 8.0, 29.9])
    def test_scalar_and_vector_inversion_agree(self, b):
        # same uniforms through the same partial sums
        scalar = [sample_poisson(g, b) for g in [rng(9)] for _ in range(2000)]
        vector = sample_poisson_array(rng(9), b, 2000)
        assert scalar == vector.tolist()

    def test_pmf_chi_square(self):
        b = 40.0
        draws = sample_poisson_array(rng(4), b, 200_000)
        from flowdelay.specfun import poisson_pmf

        ks = np.arange(20, 61)
        expected = np.array([poisson_pmf(int(k), b) for k in ks]) * draws.size
        observed = np.array([(draws == k).sum() for k in ks])
        chi2 = float(((observed - expected) ** 2 / expected).sum())
        # 41 cells; 99.9% quantile of chi^2(40) is ~73.4
        assert chi2 < 73.4

    def test_deterministic(self):
        assert [sample_poisson(g, 50.0) for g in [rng(5)] for _ in range(50)] == [
            sample_poisson(g, 50.0) for g in [rng(5)] for _ in range(50)
        ]
        assert np.array_equal(sample_poisson_array(rng(6), 3.0, 1000), sample_poisson_array(rng(6), 3.0, 1000))

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            sample_poisson(rng(), 0.0)


class TestSimulateSlot:
    def test_all_cached(self):
        assert simulate_slot(rng(), 5, 10) == 0.0

    @pytest.mark.parametrize("n", [1, 2, 17])
    def test_empty_table(self, n):
        assert simulate_slot(rng(), n, 0) == 1.0

    def test_half_cached_on_average(self):
        g = rng(7)
        fr = np.array([simulate_slot(g, 20, 10) for _ in range(2000)])
        assert abs(fr.mean() - 0.5) <= 4 * fr.std(ddof=1) / math.sqrt(fr.size) + 1e-15

    def test_subset_is_uniform(self):
        # each user is cached with probability C/n
        g = rng(8)
        n, c, trials = 6, 2, 30_000
        hits = np.zeros(n)
        for _ in range(trials):
            users = list(range(n))
            for i in range(c):
                j = int(g.integers(i, n))
                users[i], users[j] = users[j], users[i]
            hits[users[:c]] += 1
        p = c / n
        assert np.all(np.abs(hits / trials - p) <= 4 * math.sqrt(p * (1 - p) / trials))

    @given(st.integers(0, 60), st.integers(0, 60), st.integers(0, 2**32))
    @settings(max_examples=100, deadline=None)
    def test_matches_conditional_expectation(self, n, c, seed):
        assert simulate_slot(rng(seed), n, c) == pytest.approx(per_packet_delay(n, c), abs=1e-15)

    def test_vectorised_slots_match_scalar_rule(self):
        counts = np.array([0, 3, 4, 5, 9, 12, 40, 4])
        fr = _packet_level_fractions(rng(11), counts, 4)
        expected = [per_packet_delay(int(n), 4) for n in counts]
        assert fr == pytest.approx(expected, abs=1e-15)


class TestEstimate:
    def test_agrees_with_analytic(self):
        p = ModelParams.from_load(5.0, 2)
        est = estimate_expected_delay(p, SimConfig(slots=10**6, seed=12))
        assert abs(est.mean - expected_delay(p).normalized) <= 4 * est.std_error

    def test_oversized_table(self):
        b = 2.0
        p = ModelParams.from_load(b, math.ceil(20 * b + 20))
        est = estimate_expected_delay(p, SimConfig(slots=100_000, seed=3))
        assert est.mean <= 1e-6

    @pytest.mark.parametrize("estimator", list(Estimator))
    def test_bit_identical_rerun(self, estimator):
        p = ModelParams.from_load(12.0, 9)
        cfg = SimConfig(slots=150_000, seed=2**63 + 5, estimator=estimator)
        assert estimate_expected_delay(p, cfg) == estimate_expected_delay(p, cfg)

    def test_independent_of_worker_count(self):
        p = ModelParams.from_load(35.0, 30)
        one = estimate_expected_delay(p, SimConfig(slots=3 * SLOTS_PER_STREAM + 17, seed=4, workers=1))
        many = estimate_expected_delay(p, SimConfig(slots=3 * SLOTS_PER_STREAM + 17, seed=4, workers=3))
        assert one == many
        assert one.samples == 3 * SLOTS_PER_STREAM + 17

    def test_seed_changes_estimate(self):
        p = ModelParams.from_load(12.0, 9)
        a = estimate_expected_delay(p, SimConfig(slots=10_000, seed=1))
        b = estimate_expected_delay(p, SimConfig(slots=10_000, seed=2))
        assert a.mean != b.mean

    def test_interval(self):
        est = estimate_expected_delay(ModelParams.from_load(3.0, 1), SimConfig(slots=5000, seed=0))
        assert est.ci95_low <= est.mean <= est.ci95_high
        assert est.ci95_high - est.mean == pytest.approx(1.96 * est.std_error)
        assert 0.0 <= est.mean <= 1.0
        assert est.seed == 0 and est.samples == 5000

    def test_std_error_matches_direct_computation(self):
        p = ModelParams.from_load(6.0, 3)
        cfg = SimConfig(slots=SLOTS_PER_STREAM + 1000, seed=21, estimator="conditional")
        est = estimate_expected_delay(p, cfg)
        xs = []
        for block, size in [(0, SLOTS_PER_STREAM), (1, 1000)]:
            counts = sample_poisson_array(stream_for_block(21, block), 6.0, size)
            xs.append(np.where(counts > 3, 1 - 3 / np.maximum(counts, 1), 0.0))
        x = np.concatenate(xs)
        assert est.mean == pytest.approx(x.mean(), rel=1e-13)
        assert est.std_error == pytest.approx(x.std(ddof=1) / math.sqrt(x.size), rel=1e-10)

    @pytest.mark.parametrize("b,c", [(5.0, 2), (50.0, 40), (5.0, 40), (50.0, 2)])
    def test_conditional_not_noisier(self, b, c):
        p = ModelParams.from_load(b, c)
        packet = estimate_expected_delay(p, SimConfig(slots=10**5, seed=8, estimator="packet_level"))
        cond = estimate_expected_delay(p, SimConfig(slots=10**5, seed=8, estimator="conditional"))
        assert cond.std_error <= packet.std_error
        assert abs(cond.mean - packet.mean) <= 4 * math.hypot(cond.std_error, packet.std_error) + 1e-15

    def test_single_slot(self):
        est = estimate_expected_delay(ModelParams.from_load(3.0, 1), SimConfig(slots=1, seed=0))
        assert est.std_error == 0.0 and est.samples == 1

    @pytest.mark.parametrize("kw", [{"slots": 0}, {"slots": 1, "seed": -1}, {"slots": 1, "seed": 2**64},
                                    {"slots": 1, "workers": 0}, {"slots": 1, "estimator": "bogus"}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            SimConfig(**kw)
