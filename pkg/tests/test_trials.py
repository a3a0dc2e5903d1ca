import math

import pytest
from scipy.stats import binomtest

from wignersim.errors import FactorizationAssertFailed, InvalidCounts, InvalidThreshold
from wignersim.protocol import CheckFactorized, Couple, Measure, Protocol, Superpose, builtin, validate
from wignersim.statevec import RegisterLayout
from wignersim.trials import bayes_factor, run_trials, trials_to_threshold, wilson_interval


@pytest.fixture(scope="module")
def dw():
    return validate(builtin("deutsch-wigner"))


@pytest.fixture(scope="module")
def dw_collapse_big(dw):
    return run_trials(dw, "collapse", 100_000, 42)


class TestBayesFactor:
    @pytest.mark.parametrize("n,expected", [(7, 128), (20, 1048576), (1, 2)])
    def test_all_returned(self, n, expected):
        assert bayes_factor(n, n) == expected

    def test_single_failure_falsifies(self):
        assert bayes_factor(0, 1) == 0
        assert bayes_factor(99, 100) == 0

    def test_no_trials(self):
        assert bayes_factor(0, 0) == 1

    def test_overflow_is_infinite(self):
        assert bayes_factor(2000, 2000) == math.inf

    def test_general_point_hypotheses(self):
        # hand-evaluated: (0.9/0.5)^3 (0.1/0.5)^1
        assert bayes_factor(3, 4, p_unitary=0.9) == pytest.approx(1.8**3 * 0.2, rel=1e-12)

    @pytest.mark.parametrize("k,n", [(-1, 3), (4, 3), (0, -1), (1.5, 2)])
    def test_invalid_counts(self, k, n):
        with pytest.raises(InvalidCounts):
            bayes_factor(k, n)


class TestThreshold:
    @pytest.mark.parametrize("b,n", [(100, 7), (2, 1), (1e6, 20), (128, 7), (129, 8), (1.0001, 1)])
    def test_values(self, b, n):
        assert trials_to_threshold(b) == n

    @pytest.mark.parametrize("b", [10.0, 1e6, 3.3e9, 2**40, 2**40 + 1])
    def test_matches_integer_scan(self, b):
        n = 1
        while 2**n < b:
            n += 1
        assert trials_to_threshold(b) == n

    @pytest.mark.parametrize("b", [1, 0.5, -3, math.inf, math.nan])
    def test_invalid(self, b):
        with pytest.raises(InvalidThreshold):
            trials_to_threshold(b)


def test_wilson_interval_contains_estimate():
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi
    assert wilson_interval(0, 10)[0] == 0.0


class TestUnitaryRuns:
    def test_deutsch_wigner(self, dw):
        report = run_trials(dw, "unitary", 1000, 0)
        assert report.histogram == {(0, 0, 0, 0, 1): 1000}
        assert report.return_rate == 1.0
        assert report.bayes_factor == 2.0**1000
        (verdict,) = report.expectations
        assert verdict.exact and verdict.passed
        assert abs(verdict.observed_prob - 1) <= 1e-10

    def test_which_outcome_empirical_expectation(self):
        report = run_trials(validate(builtin("which-outcome")), "unitary", 4000, 5)
        (verdict,) = report.expectations
        assert not verdict.exact
        assert verdict.passed
        assert report.bayes_factor == 0.0

    def test_histogram_counts_sum(self, dw):
        report = run_trials(validate(builtin("which-outcome")), "collapse", 500, 1)
        assert sum(report.histogram.values()) == 500
        assert 0 <= report.return_rate <= 1


class TestCollapseRuns:
    def test_atom_frequency_and_paper_record(self, dw_collapse_big):
        report = dw_collapse_big
        assert abs(report.frequency(atom=1) - 0.5) <= 3 * math.sqrt(0.25 / 100_000)
        assert report.frequency(paper=1) == 1.0

    def test_deficit_within_wilson_interval(self, dw_collapse_big):
        k = round(dw_collapse_big.frequency(atom=1) * 100_000)
        lo, hi = wilson_interval(k, 100_000, 0.99)
        assert lo <= 0.5 <= hi

    def test_prob_one_expectation_fails(self, dw_collapse_big):
        (verdict,) = dw_collapse_big.expectations
        assert not verdict.passed
        assert abs(verdict.observed_prob - 0.5) < 0.01
        assert dw_collapse_big.bayes_factor == 0.0

    def test_photon_mirror(self):
        report = run_trials(validate(builtin("photon-mirror")), "collapse", 10_000, 3)
        assert abs(report.frequency(photon=0) - 0.5) <= 0.015

    @pytest.mark.parametrize("seed", range(1, 11))
    def test_binomial_soundness(self, dw, seed):
        n = 20_000
        report = run_trials(dw, "collapse", n, seed)
        k = round(report.frequency(atom=1) * n)
        assert binomtest(k, n, 0.5).pvalue > 0.001


class TestReproducibility:
    def test_identical_reports(self, dw):
        a = run_trials(dw, "collapse", 3000, 99).to_dict()
        b = run_trials(dw, "collapse", 3000, 99).to_dict()
        a.pop("wall_ms"), b.pop("wall_ms")
        assert a == b

    def test_parallel_matches_sequential(self, dw):
        seq = run_trials(dw, "collapse", 3000, 17).to_dict()
        par = run_trials(dw, "collapse", 3000, 17, workers=3).to_dict()
        seq.pop("wall_ms"), par.pop("wall_ms")
        assert seq == par

    def test_different_seeds_differ(self, dw):
        a = run_trials(dw, "collapse", 500, 1).histogram
        b = run_trials(dw, "collapse", 500, 2).histogram
        assert a != b


def test_engine_error_annotated_with_trial():
    lay = RegisterLayout.of(("a", 2), ("b", 2))
    p = Protocol("bad", lay, (("a", 0), ("b", 0)), (
        Superpose("a", math.pi / 4), Couple("a", "b"), CheckFactorized("b", 1e-10), Measure(None),
    ))
    with pytest.raises(FactorizationAssertFailed) as info:
        run_trials(validate(p), "unitary", 10, 0)
    assert info.value.trial == 0
    assert "trial 0" in str(info.value)


def test_report_json_fields(dw):
    d = run_trials(dw, "unitary", 10, 7).to_dict()
    assert list(d) == [
        "format_version", "protocol", "model", "trials", "seed", "histogram",
        "expectations", "return_rate", "bayes_factor", "wall_ms",
    ]
    assert d["histogram"] == [{"outcome": [0, 0, 0, 0, 1], "count": 10}]
    assert list(d["expectations"][0]) == ["step", "target_prob", "observed_prob", "tol", "pass"]
    assert d["expectations"][0]["step"] == 10
