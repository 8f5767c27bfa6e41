"""Model-probability estimators and their CSV serializations."""

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import PseudoEvidenceOracle, enumerate_posterior
from methsel.estimators import (
    frequency_probabilities,
    inclusion_probabilities,
    median_probability_model,
    mode_model,
    renormalized_probabilities,
    summarize,
    total_log_evidence_mass,
    write_inclusion_csv,
    write_models_csv,
)
from methsel.mjmcmc import (
    EvidenceRecord,
    ModelRegistry,
    StopRule,
    enumerate_registry,
    run_chains,
)


def make_registry(entries):
    """entries: list of (key, log_mlik, log_prior)."""
    reg = ModelRegistry()
    for key, lm, lp in entries:
        bits = np.array([c == "1" for c in key])
        reg.insert(EvidenceRecord(key=key, bits=bits, log_mlik=lm, log_prior=lp, eta={}))
    return reg


class TestRenormalized:
    def test_matches_enumeration_exactly(self):
        oracle = PseudoEvidenceOracle(8, seed=3)
        registry = enumerate_registry(oracle, d=8, q=0.5)
        rm = renormalized_probabilities(registry)
        exact, exact_incl = enumerate_posterior(oracle.log_mlik, d=8, q=0.5)
        assert set(rm) == set(exact)
        for key in exact:
            assert rm[key] == pytest.approx(exact[key], abs=1e-12)
        incl = inclusion_probabilities(rm)
        assert np.allclose(list(incl.values()), exact_incl, atol=1e-12)

    def test_sums_to_one(self):
        reg = make_registry([("10", -3.0, -1.0), ("01", -5.0, -1.0), ("11", -4.0, -2.0)])
        rm = renormalized_probabilities(reg)
        assert sum(rm.values()) == pytest.approx(1.0, abs=1e-14)

    def test_invariant_to_common_shift(self):
        entries = [("100", -2.0, -1.0), ("010", -3.5, -1.0), ("111", -1.0, -2.5)]
        shifted = [(k, lm + 500.0, lp) for k, lm, lp in entries]
        a = renormalized_probabilities(make_registry(entries))
        b = renormalized_probabilities(make_registry(shifted))
        for key in a:
            assert a[key] == pytest.approx(b[key], rel=1e-12)

    def test_impossible_model_gets_zero_without_disturbing_others(self):
        base = [("10", -3.0, -1.0), ("01", -4.0, -1.0)]
        with_inf = base + [("11", -math.inf, -2.0)]
        a = renormalized_probabilities(make_registry(base))
        b = renormalized_probabilities(make_registry(with_inf))
        assert b["11"] == 0.0
        for key in a:
            assert a[key] == pytest.approx(b[key], rel=1e-14)

    def test_huge_magnitudes_do_not_overflow(self):
        reg = make_registry([("1", -1e6, 0.0), ("0", -1e6 - 3.0, 0.0)])
        rm = renormalized_probabilities(reg)
        # cancellation at magnitude 1e6 costs ~1e6*eps in the shifted logs
        assert rm["1"] == pytest.approx(1.0 / (1.0 + math.exp(-3.0)), rel=1e-9)

    def test_empty_registry_rejected(self):
        with pytest.raises(ValueError):
            renormalized_probabilities(ModelRegistry())


class TestFrequency:
    def test_burn_in_drops_prefix_of_each_chain(self):
        hist = [["a"] * 2 + ["b"] * 8]
        freq = frequency_probabilities(hist, burn_in_fraction=0.2)
        assert freq == {"b": 1.0}

    def test_pooling_across_chains(self):
        h1 = ["a"] * 5 + ["b"] * 5
        h2 = ["b"] * 10
        freq = frequency_probabilities([h1, h2], burn_in_fraction=0.0)
        assert freq["a"] == pytest.approx(0.25)
        assert freq["b"] == pytest.approx(0.75)

    def test_sums_to_one(self):
        rng = np.random.default_rng(0)
        hist = [[f"{rng.integers(4):02b}" for _ in range(100)] for _ in range(3)]
        freq = frequency_probabilities(hist)
        assert sum(freq.values()) == pytest.approx(1.0, abs=1e-14)

    def test_invalid_burn_fraction(self):
        with pytest.raises(ValueError):
            frequency_probabilities([["a"]], burn_in_fraction=1.0)
        with pytest.raises(ValueError):
            frequency_probabilities([["a"]], burn_in_fraction=-0.1)

    def test_empty_after_burn_in_rejected(self):
        with pytest.raises(ValueError):
            frequency_probabilities([[]], burn_in_fraction=0.2)


class TestInclusion:
    def test_marginal_sums(self):
        probs = {"11": 0.5, "10": 0.3, "00": 0.2}
        incl = inclusion_probabilities(probs, ["u", "v"])
        assert incl["u"] == pytest.approx(0.8)
        assert incl["v"] == pytest.approx(0.5)

    def test_default_names(self):
        incl = inclusion_probabilities({"101": 1.0})
        assert list(incl) == ["x0", "x1", "x2"]

    def test_clipped_to_unit_interval(self):
        probs = {"1": 1.0 + 5e-16}
        assert inclusion_probabilities(probs)["x0"] == 1.0

    def test_mismatched_key_lengths_rejected(self):
        with pytest.raises(ValueError):
            inclusion_probabilities({"10": 0.5, "100": 0.5})

    def test_wrong_name_count_rejected(self):
        with pytest.raises(ValueError):
            inclusion_probabilities({"10": 1.0}, ["only_one"])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            inclusion_probabilities({})

    @given(
        d=st.integers(1, 6),
        seed=st.integers(0, 1000),
    )
    @settings(max_examples=50, deadline=None)
    def test_bounded_by_total_mass(self, d, seed):
        rng = np.random.default_rng(seed)
        n_models = int(rng.integers(1, 10))
        keys = {
            "".join(rng.choice(["0", "1"], d)) for _ in range(n_models)
        }
        raw = rng.random(len(keys))
        probs = dict(zip(keys, raw / raw.sum()))
        incl = inclusion_probabilities(probs)
        for v in incl.values():
            assert 0.0 <= v <= 1.0


class TestModeAndMedian:
    def test_mode_is_argmax(self):
        assert mode_model({"10": 0.7, "01": 0.3}) == "10"

    def test_tie_prefers_fewer_covariates(self):
        assert mode_model({"11": 0.4, "00": 0.4, "10": 0.2}) == "00"

    def test_tie_with_equal_size_is_lexicographic(self):
        assert mode_model({"10": 0.5, "01": 0.5}) == "01"

    def test_median_uses_strict_threshold(self):
        incl = {"a": 0.9, "b": 0.4, "c": 0.6}
        assert median_probability_model(incl) == "101"

    def test_exact_half_is_excluded(self):
        assert median_probability_model({"a": 0.5, "b": 0.50001}) == "01"

    def test_median_preserves_name_order(self):
        incl = {"z": 0.8, "a": 0.2, "m": 0.9}
        assert median_probability_model(incl) == "101"


class TestLogMass:
    def test_matches_direct_logsumexp(self):
        reg = make_registry([("1", -1.0, 0.0), ("0", -2.0, 0.0)])
        expect = math.log(math.exp(-1.0) + math.exp(-2.0))
        assert total_log_evidence_mass(reg) == pytest.approx(expect, rel=1e-14)

    def test_registry_growth_increases_mass(self):
        small = make_registry([("10", -3.0, -1.0)])
        large = make_registry([("10", -3.0, -1.0), ("01", -2.0, -1.0)])
        assert total_log_evidence_mass(large) > total_log_evidence_mass(small)


class TestSummarize:
    def test_integration_with_search(self):
        oracle = PseudoEvidenceOracle(5, seed=12)
        res = run_chains(
            oracle, d=5, q=0.5, n_chains=2, seed=4,
            stop=StopRule(max_iterations=3000),
        )
        names = [f"c{j}" for j in range(5)]
        summary = summarize(res.registry, names, res.histories)
        exact, _ = enumerate_posterior(oracle.log_mlik, d=5, q=0.5)

        assert summary.n_models == len(res.registry)
        assert sum(summary.probabilities_rm.values()) == pytest.approx(1.0, abs=1e-12)
        assert sum(summary.probabilities_freq.values()) == pytest.approx(1.0, abs=1e-12)
        assert summary.mode == mode_model(summary.probabilities_rm)
        assert summary.median == median_probability_model(summary.inclusion_rm)
        # with the space exhausted, renormalization is exact
        if summary.n_models == 32:
            for key, p in exact.items():
                assert summary.probabilities_rm[key] == pytest.approx(p, abs=1e-12)

    def test_without_histories(self):
        reg = make_registry([("10", -3.0, -1.0), ("01", -2.0, -1.0)])
        summary = summarize(reg, ["u", "v"])
        assert summary.probabilities_freq is None
        assert summary.inclusion_freq is None
        assert summary.mode == "01"


class TestCsvOutput:
    def _registry(self):
        return make_registry(
            [("110", -4.0, -2.0), ("010", -2.0, -1.5), ("001", -2.0, -3.0)]
        )

    def test_models_csv_schema_and_order(self, tmp_path):
        reg = self._registry()
        rm = renormalized_probabilities(reg)
        path = tmp_path / "models.csv"
        write_models_csv(path, reg, rm, mcmc={"010": 0.9, "110": 0.1})
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["bitstring", "n_covariates", "log_mlik", "log_prior", "rm_pmp", "mcmc_pmp"]
        keys = [r[0] for r in rows[1:]]
        pmps = [float(r[4]) for r in rows[1:]]
        assert pmps == sorted(pmps, reverse=True)
        assert keys[0] == "010"  # largest renormalized mass first
        assert int(rows[1][1]) == 1
        # full float precision survives the round trip
        assert float(rows[1][2]) == -2.0
        assert float(rows[1][4]) == rm["010"]
        for row in rows[1:]:
            assert len(row) == 6

    def test_models_csv_without_frequencies(self, tmp_path):
        reg = self._registry()
        rm = renormalized_probabilities(reg)
        path = tmp_path / "models.csv"
        write_models_csv(path, reg, rm)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert all(float(r[5]) == 0.0 for r in rows[1:])

    def test_inclusion_csv_schema(self, tmp_path):
        incl_rm = {"X_A": 0.25, "X_B": 0.9921875}
        incl_freq = {"X_A": 0.3}
        path = tmp_path / "inclusion.csv"
        write_inclusion_csv(path, incl_rm, incl_freq)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["covariate", "rm_inclusion", "mcmc_inclusion"]
        assert rows[1] == ["X_A", "0.25", "0.3"]
        assert rows[2][0] == "X_B"
        assert float(rows[2][1]) == 0.9921875
        assert float(rows[2][2]) == 0.0  # absent name falls back to zero

    def test_inclusion_csv_without_frequencies(self, tmp_path):
        path = tmp_path / "inclusion.csv"
        write_inclusion_csv(path, {"X_A": 1.0}, None)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[1] == ["X_A", "1.0", ""]
