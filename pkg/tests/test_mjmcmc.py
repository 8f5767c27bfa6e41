"""Mode-jumping search kernels and the shared-registry chain driver."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import PseudoEvidenceOracle, enumerate_posterior, total_variation
from methsel.mjmcmc import (
    EvidenceFailureError,
    EvidenceRecord,
    ModelRegistry,
    ProposalConfig,
    StopRule,
    acceptance_probability,
    acceptance_ratio,
    enumerate_registry,
    large_jump,
    local_optimize,
    randomize,
    randomize_log_density,
    run_chains,
)
from methsel.model import model_key


class TestProposalConfig:
    def test_default_jump_range_fraction(self):
        cfg = ProposalConfig()
        assert cfg.jump_range(17) == (5, 6)
        assert cfg.jump_range(2) == (1, 1)
        assert cfg.jump_range(1) == (1, 1)

    def test_explicit_range_clipped_to_dimension(self):
        cfg = ProposalConfig(jump_min=5, jump_max=9)
        assert cfg.jump_range(17) == (5, 9)
        assert cfg.jump_range(3) == (3, 3)

    def test_validation(self):
        with pytest.raises(ValueError):
            ProposalConfig(rho_large=1.5)
        with pytest.raises(ValueError):
            ProposalConfig(rho_randomize=0.0)
        with pytest.raises(ValueError):
            ProposalConfig(jump_min=3)
        with pytest.raises(ValueError):
            ProposalConfig(jump_min=4, jump_max=2)


class TestLargeJump:
    def test_full_flip_is_complement(self):
        rng = np.random.default_rng(0)
        cfg = ProposalConfig(jump_min=6, jump_max=6)
        bits = np.array([1, 0, 1, 1, 0, 0], dtype=bool)
        out = large_jump(bits, rng, cfg)
        assert np.array_equal(out, ~bits)

    def test_jump_size_distribution(self):
        rng = np.random.default_rng(7)
        cfg = ProposalConfig(jump_min=5, jump_max=6)
        bits = np.zeros(17, dtype=bool)
        counts = {5: 0, 6: 0}
        n = 100_000
        for _ in range(n):
            h = int(np.sum(large_jump(bits, rng, cfg) ^ bits))
            counts[h] += 1
        assert counts[5] + counts[6] == n
        assert counts[5] / n == pytest.approx(0.5, abs=0.01)
        assert counts[6] / n == pytest.approx(0.5, abs=0.01)

    @given(
        d=st.integers(1, 20),
        seed=st.integers(0, 500),
        frac=st.integers(0, 2**16 - 1),
    )
    @settings(max_examples=80, deadline=None)
    def test_hamming_distance_always_in_range(self, d, seed, frac):
        rng = np.random.default_rng(seed)
        bits = np.array([(frac >> j) & 1 for j in range(d)], dtype=bool)
        cfg = ProposalConfig()
        lo, hi = cfg.jump_range(d)
        h = int(np.sum(large_jump(bits, rng, cfg) ^ bits))
        assert lo <= h <= hi


class TestRandomize:
    def test_no_flip_log_density_d17(self):
        bits = np.zeros(17, dtype=bool)
        val = randomize_log_density(bits, bits, 0.1)
        assert val == pytest.approx(-1.7911287661830468, abs=1e-12)

    def test_two_flip_density_d17(self):
        a = np.zeros(17, dtype=bool)
        b = a.copy()
        b[[3, 11]] = True
        val = math.exp(randomize_log_density(a, b, 0.1))
        assert val == pytest.approx(0.002058911320946491, rel=1e-12)

    @given(
        d=st.integers(1, 20),
        x=st.integers(0, 2**16 - 1),
        y=st.integers(0, 2**16 - 1),
        rho=st.floats(0.01, 0.99),
    )
    @settings(max_examples=80, deadline=None)
    def test_symmetric_in_arguments(self, d, x, y, rho):
        a = np.array([(x >> j) & 1 for j in range(d)], dtype=bool)
        b = np.array([(y >> j) & 1 for j in range(d)], dtype=bool)
        assert randomize_log_density(a, b, rho) == randomize_log_density(b, a, rho)

    def test_draw_density_consistent(self):
        rng = np.random.default_rng(3)
        bits = np.random.default_rng(1).random(12) < 0.5
        out, logq = randomize(bits, rng, 0.2)
        assert logq == pytest.approx(randomize_log_density(bits, out, 0.2))

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            randomize_log_density(np.zeros(3, dtype=bool), np.zeros(4, dtype=bool), 0.1)


class TestAcceptance:
    def test_symmetric_case_accepts(self):
        assert acceptance_probability(-5.0, -5.0, -1.0, -1.0) == 1.0

    def test_unit_log_drop(self):
        val = acceptance_probability(-5.0, -6.0, -1.0, -1.0)
        assert val == pytest.approx(0.36787944117144233, abs=1e-15)

    def test_self_proposal_always_accepted(self):
        bits = np.array([1, 0, 1], dtype=bool)

        def lp(_):
            raise AssertionError("posterior must not be evaluated for a self-proposal")

        assert acceptance_ratio(bits, bits.copy(), bits, bits, lp) == 1.0

    def test_no_overflow_for_huge_differences(self):
        assert acceptance_probability(-1e6, 1e6, 0.0, 0.0) == 1.0
        assert acceptance_probability(1e6, -1e6, 0.0, 0.0) == 0.0

    @given(
        lp_cur=st.floats(-100, 100),
        lp_new=st.floats(-100, 100),
        qf=st.floats(-20, 0),
        qb=st.floats(-20, 0),
    )
    @settings(max_examples=100, deadline=None)
    def test_always_a_probability(self, lp_cur, lp_new, qf, qb):
        val = acceptance_probability(lp_cur, lp_new, qf, qb)
        assert 0.0 <= val <= 1.0


class TestLocalOptimize:
    def test_dominant_model_reached_from_anywhere(self):
        oracle = PseudoEvidenceOracle(2, seed=1)
        # make (1,1) dominate every neighbor
        oracle.linear[:] = [2.0, 1.5]
        oracle.pair[0, 1] = 0.5

        def lp(bits):
            return oracle.log_mlik(bits)

        rng = np.random.default_rng(5)
        for start in range(4):
            bits = np.array([(start >> j) & 1 for j in range(2)], dtype=bool)
            out, lp_out = local_optimize(bits, lp, rng)
            assert np.array_equal(out, np.ones(2, dtype=bool))
            assert lp_out == pytest.approx(4.0)

    def test_local_mode_returned_unchanged(self):
        # (0,0) is a strict local mode
        def lp(bits):
            return -5.0 * float(np.sum(bits))

        rng = np.random.default_rng(2)
        start = np.zeros(4, dtype=bool)
        out, lp_out = local_optimize(start, lp, rng)
        assert np.array_equal(out, start)
        assert lp_out == 0.0

    def test_result_dominates_every_evaluated_state(self):
        oracle = PseudoEvidenceOracle(8, seed=4, scale=2.0)
        trace = []

        def lp(bits):
            val = oracle.log_mlik(bits)
            trace.append(val)
            return val

        rng = np.random.default_rng(9)
        start = np.zeros(8, dtype=bool)
        out, lp_out = local_optimize(start, lp, rng)
        # first-improvement climbing keeps every value that beats the
        # incumbent, so the result is the max over everything it looked at
        assert lp_out == max(trace)
        assert lp_out == oracle.log_mlik(out)
        assert lp_out >= oracle.log_mlik(start)

    def test_failed_candidates_skipped(self):
        # the dominant state is unreachable because its evaluation fails
        def lp(bits):
            if np.array_equal(bits, np.array([True, True])):
                return None
            return float(np.sum(bits))

        rng = np.random.default_rng(0)
        out, lp_out = local_optimize(np.zeros(2, dtype=bool), lp, rng)
        assert np.sum(out) == 1
        assert lp_out == 1.0

    def test_failing_start_raises(self):
        rng = np.random.default_rng(0)
        with pytest.raises(EvidenceFailureError):
            local_optimize(np.zeros(3, dtype=bool), lambda bits: None, rng)


class TestRegistry:
    def _record(self, key):
        bits = np.array([c == "1" for c in key])
        return EvidenceRecord(
            key=key, bits=bits, log_mlik=-1.0, log_prior=-0.5, eta={}
        )

    def test_insert_and_lookup(self):
        reg = ModelRegistry()
        reg.insert(self._record("101"))
        assert "101" in reg
        assert len(reg) == 1
        assert reg.get("101").log_post == pytest.approx(-1.5)

    def test_duplicate_rejected(self):
        reg = ModelRegistry()
        reg.insert(self._record("11"))
        with pytest.raises(ValueError, match="already registered"):
            reg.insert(self._record("11"))

    def test_insertion_order_preserved(self):
        reg = ModelRegistry()
        for key in ("10", "01", "11", "00"):
            reg.insert(self._record(key))
        assert reg.keys() == ["10", "01", "11", "00"]


class TestStopRule:
    def test_requires_a_criterion(self):
        with pytest.raises(ValueError):
            StopRule()

    def test_positive_values(self):
        with pytest.raises(ValueError):
            StopRule(unique_models=0)
        with pytest.raises(ValueError):
            StopRule(max_iterations=0)


class TestRunChains:
    def test_small_space_fully_covered(self):
        oracle = PseudoEvidenceOracle(2, seed=3)
        res = run_chains(
            oracle, d=2, q=0.5, n_chains=1, seed=1,
            stop=StopRule(max_iterations=300),
        )
        assert len(res.registry) == 4
        assert res.stopped_on == "max_iterations"

    def test_evidence_computed_exactly_once_per_model(self):
        oracle = PseudoEvidenceOracle(6, seed=2)
        res = run_chains(
            oracle, d=6, q=0.5, n_chains=4, seed=0,
            stop=StopRule(max_iterations=400),
        )
        assert oracle.calls == len(res.registry)
        assert res.n_requests == len(res.registry)
        assert res.n_failures == 0

    def test_identical_seeds_reproduce_registry_order(self):
        kwargs = dict(d=8, q=0.5, n_chains=3, seed=42, stop=StopRule(max_iterations=250))
        r1 = run_chains(PseudoEvidenceOracle(8, seed=5), **kwargs)
        r2 = run_chains(PseudoEvidenceOracle(8, seed=5), **kwargs)
        assert r1.registry.keys() == r2.registry.keys()
        assert r1.histories == r2.histories
        assert [s.__dict__ for s in r1.chain_stats] == [s.__dict__ for s in r2.chain_stats]

    def test_worker_count_does_not_change_the_run(self):
        kwargs = dict(d=8, q=0.5, n_chains=4, seed=11, stop=StopRule(max_iterations=120))
        serial = run_chains(PseudoEvidenceOracle(8, seed=5), **kwargs)
        pooled = run_chains(PseudoEvidenceOracle(8, seed=5), n_workers=2, **kwargs)
        assert serial.registry.keys() == pooled.registry.keys()
        assert serial.histories == pooled.histories

    def test_stops_exactly_at_unique_model_target(self):
        oracle = PseudoEvidenceOracle(10, seed=1)
        res = run_chains(
            oracle, d=10, q=0.5, n_chains=4, seed=3,
            stop=StopRule(unique_models=25, max_iterations=100_000),
        )
        assert len(res.registry) == 25
        assert res.stopped_on == "unique_models"

    def test_preseeded_registry_already_past_target(self):
        oracle = PseudoEvidenceOracle(4, seed=0)
        registry = enumerate_registry(oracle, d=4, q=0.5)
        res = run_chains(
            oracle, d=4, q=0.5, n_chains=2, seed=0,
            stop=StopRule(unique_models=10), registry=registry,
        )
        assert res.stopped_on == "unique_models"
        assert len(res.registry) == 16
        assert res.n_requests == 0

    def test_all_evaluations_failing_aborts(self):
        def oracle(bits):
            raise ValueError("synthetic failure")

        with pytest.raises(EvidenceFailureError) as exc:
            run_chains(
                oracle, d=10, q=0.5, n_chains=4, seed=0,
                stop=StopRule(max_iterations=10_000),
            )
        assert len(exc.value.failed_keys) > 0

    def test_non_finite_evidence_counts_as_failure(self):
        from methsel.laplace import EvidenceResult

        def oracle(bits):
            return EvidenceResult(
                log_mlik=math.nan, eta_mode={}, converged=True, method="eb"
            )

        with pytest.raises(EvidenceFailureError):
            run_chains(
                oracle, d=10, q=0.5, n_chains=4, seed=0,
                stop=StopRule(max_iterations=10_000),
            )

    def test_isolated_failure_tolerated(self):
        inner = PseudoEvidenceOracle(8, seed=6)
        state = {"calls": 0}

        def oracle(bits):
            state["calls"] += 1
            if state["calls"] == 1:
                raise ValueError("transient failure")
            return inner(bits)

        res = run_chains(
            oracle, d=8, q=0.5, n_chains=4, seed=2,
            stop=StopRule(max_iterations=1000),
        )
        assert res.n_failures == 1
        assert res.n_requests >= 100  # the abort check was armed and declined
        assert len(res.registry) == res.n_requests - 1

    def test_persistently_failing_model_stays_unregistered(self):
        inner = PseudoEvidenceOracle(4, seed=0)
        bad_key = "1" * 4

        def oracle(bits):
            if model_key(bits) == bad_key:
                raise ValueError("one bad model")
            return inner(bits)

        res = run_chains(
            oracle, d=4, q=0.5, n_chains=1, seed=5,
            proposal=ProposalConfig(rho_large=0.0),
            stop=StopRule(max_iterations=60),
        )
        assert bad_key not in res.registry
        assert res.n_failures >= 1
        assert res.n_requests < 100
        for key in res.registry.keys():
            assert key != bad_key

    def test_chain_current_state_always_registered(self):
        oracle = PseudoEvidenceOracle(6, seed=9)
        res = run_chains(
            oracle, d=6, q=0.5, n_chains=2, seed=8,
            stop=StopRule(max_iterations=500),
        )
        for history in res.histories:
            for key in history:
                assert key in res.registry


class TestStationaryDistribution:
    def _frequencies(self, histories, burn=0.2):
        counts: dict[str, int] = {}
        total = 0
        for h in histories:
            start = int(len(h) * burn)
            for key in h[start:]:
                counts[key] = counts.get(key, 0) + 1
                total += 1
        return {k: v / total for k, v in counts.items()}

    def test_single_flip_kernel_matches_enumeration(self):
        oracle = PseudoEvidenceOracle(5, seed=12, scale=1.0)
        exact, _ = enumerate_posterior(oracle.log_mlik, d=5, q=0.5)
        res = run_chains(
            oracle, d=5, q=0.5, n_chains=1, seed=4,
            proposal=ProposalConfig(rho_large=0.0),
            stop=StopRule(max_iterations=50_000),
        )
        tv = total_variation(exact, self._frequencies(res.histories))
        assert tv < 0.03

    def test_mode_jump_kernel_matches_enumeration(self):
        oracle = PseudoEvidenceOracle(5, seed=12, scale=1.0)
        exact, _ = enumerate_posterior(oracle.log_mlik, d=5, q=0.5)
        res = run_chains(
            oracle, d=5, q=0.5, n_chains=1, seed=4,
            proposal=ProposalConfig(rho_large=0.05),
            stop=StopRule(max_iterations=50_000),
        )
        tv = total_variation(exact, self._frequencies(res.histories))
        assert tv < 0.03


class TestEnumerateRegistry:
    def test_covers_space_in_bit_order(self):
        oracle = PseudoEvidenceOracle(3, seed=0)
        reg = enumerate_registry(oracle, d=3, q=0.5)
        assert len(reg) == 8
        assert reg.keys()[0] == "000"
        assert reg.keys()[1] == "100"  # bit 0 varies fastest
        assert reg.keys()[7] == "111"

    def test_dimension_cap(self):
        with pytest.raises(ValueError):
            enumerate_registry(lambda b: None, d=25, q=0.5)
