import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_metrics
from qcbm.datasets import (
    SEPARATION,
    CostFunction,
    TrainingSet,
    cardinality_space,
    evens_space,
    sample_training_set,
)
from qcbm.metrics import (
    MetricsReport,
    QueryBatch,
    classify,
    coverage,
    coverage_asymptotic,
    coverage_normalized,
    evaluate,
    expected_coverage,
    exploration,
    fidelity,
    median_run_index,
    precision,
    random_baseline,
    rate,
    rate_normalized,
    select_median_run,
    tail_probability,
    utility,
    utility_from_costs,
)
from qcbm.statevector import bitstring_to_index, index_to_bitstring


def batch_of(bitstrings):
    return QueryBatch(np.array([bitstring_to_index(b) for b in bitstrings], dtype=np.int64), len(bitstrings[0]))


def ts_of(bitstrings, epsilon):
    idx = np.array(sorted(bitstring_to_index(b) for b in bitstrings), dtype=np.int64)
    return TrainingSet(len(bitstrings[0]), idx, np.full(idx.shape[0], 1 / idx.shape[0]), epsilon)


@pytest.fixture
def example():
    space = cardinality_space(4, 2)
    ts = ts_of(["0011", "0101"], 1 / 3)
    batch = batch_of(["0011"] * 2 + ["0110"] * 3 + ["1010"] * 4 + ["1111"])
    return batch, ts, space


class TestClassification:
    def test_hand_enumerated(self, example):
        c = classify(*example)
        assert (c.g_train, c.g_new, c.g_sol_multi, c.g_sol_unique) == (2, 8, 7, 2)

    def test_all_memorized(self, example):
        _, ts, space = example
        c = classify(batch_of(["0011", "0101", "0011"]), ts, space)
        assert c.g_new == 0 and c.g_train == 3
        assert fidelity(c) is None

    def test_all_noise(self, example):
        _, ts, space = example
        c = classify(batch_of(["1111", "0000", "1110"]), ts, space)
        assert c.g_sol_multi == 0 and c.g_new == 3

    def test_width_mismatch(self, example):
        _, ts, space = example
        with pytest.raises(ValueError):
            classify(batch_of(["011"]), ts, space)

    def test_weights_irrelevant(self, example):
        batch, ts, space = example
        skewed = TrainingSet(ts.n_bits, ts.indices, np.array([0.9, 0.1]), ts.epsilon)
        assert classify(batch, skewed, space) == classify(batch, ts, space)


class TestValidityMetrics:
    def test_example_values(self, example):
        batch, ts, space = example
        c = classify(*example)
        assert fidelity(c) == 0.875
        assert rate(c, 10) == 0.7
        assert rate_normalized(0.7, 1 / 3) == pytest.approx(1.05)
        assert coverage(c, 6, 2) == 0.5
        assert precision(c, 10) == 0.9
        assert exploration(c, 10) == 0.8

    def test_report_flags_supernormal_rate(self, example):
        report = evaluate(*example)
        assert report.R_norm == pytest.approx(1.05)
        assert "R_norm>1" in report.flags

    def test_all_unseen_valid_gives_unit_fidelity(self, example):
        _, ts, space = example
        assert fidelity(classify(batch_of(["0110", "1100", "1001"]), ts, space)) == 1.0

    def test_expected_coverage_formula(self):
        for size, eps, q in [(924, 0.3, 10000), (100, 0.5, 7), (2048, 0.1, 1)]:
            direct = 1 - (1 - 1 / (size * (1 - eps))) ** q
            assert expected_coverage(size, eps, q) == pytest.approx(direct, rel=1e-12)

    def test_saturation(self):
        space = cardinality_space(6, 3)
        ts = sample_training_set(space, 0.25, np.random.default_rng(0))
        unseen = np.setdiff1d(space.members, ts.indices)
        batch = QueryBatch(np.tile(unseen, 50), 6)
        report = evaluate(batch, ts, space)
        assert report.C == 1.0
        assert expected_coverage(space.size, ts.epsilon, batch.q_total) == pytest.approx(1.0)

    def test_baseline_precision_expectation(self):
        # uniform draws over 2^12 land in the k=6 sector with probability 924/4096
        space = cardinality_space(12, 6)
        ts = sample_training_set(space, 0.3, np.random.default_rng(0))
        summary = random_baseline(space, ts, 10000, 20, np.random.default_rng(1))
        assert summary.mean["p"] == pytest.approx(924 / 4096, abs=0.003)

    def test_small_q_baseline(self):
        space = cardinality_space(6, 3)
        ts = sample_training_set(space, 0.3, np.random.default_rng(0))
        summary = random_baseline(space, ts, 10, 5, np.random.default_rng(2))
        assert len(summary.reports) == 5
        assert all(r.q_total == 10 for r in summary.reports)


class TestCoverageNormalization:
    @pytest.mark.parametrize("seed", range(5))
    def test_asymptotic_agreement(self, seed):
        """C_norm exceeds g_sol_unique/Q by a factor of about 1 + Q/(2U)."""
        space = cardinality_space(12, 6)
        ts = sample_training_set(space, 0.3, np.random.default_rng(seed))
        rng = np.random.default_rng(100 + seed)
        unseen_total = space.size * (1 - ts.epsilon)
        for frac in (0.005, 0.01, 0.02, 0.05):
            q = max(1, int(frac * unseen_total))
            batch = QueryBatch(rng.choice(space.members, size=q), 12)
            r = evaluate(batch, ts, space)
            # 1e-3 absorbs |S| - D differing from |S|(1 - eps) by rounding of D
            bound = r.C_norm_asymptotic * (q / (2 * unseen_total) + 1e-3)
            assert abs(r.C_norm - r.C_norm_asymptotic) <= bound
            if frac <= 0.02:
                assert abs(r.C_norm - r.C_norm_asymptotic) <= 0.01

    def test_normalized_equals_ratio(self):
        assert coverage_normalized(0.3, 924, 0.3, 500) == 0.3 / expected_coverage(924, 0.3, 500)


class TestUtility:
    def test_lowest_five_percent(self):
        costs = np.array([-5] * 95 + [-9] * 5)
        assert utility_from_costs(costs) == -9.0

    def test_rounds_up_and_keeps_at_least_one(self):
        assert utility_from_costs(np.array([-1, -2, -3])) == -3.0
        assert utility_from_costs(np.array([-1] * 20 + [-4])) == -2.5  # ceil(1.05) = 2

    def test_empty_is_absent(self):
        assert utility_from_costs(np.array([], dtype=np.int64)) is None

    def test_bitstring_interface(self):
        queries = np.array([bitstring_to_index("100000000001")] * 3 + [bitstring_to_index("110000000000")] * 57)
        assert utility(queries, SEPARATION, 12) == -11.0

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(-11, 0), min_size=1, max_size=120), st.integers(-11, 0))
    def test_monotone_when_selection_size_is_fixed(self, costs, extra):
        n = len(costs)
        if math.ceil(0.05 * (n + 1)) != math.ceil(0.05 * n):
            return
        before = utility_from_costs(np.array(costs))
        after = utility_from_costs(np.array(costs + [extra]))
        cutoff = sorted(costs)[max(1, math.ceil(0.05 * n)) - 1]
        if extra >= cutoff:
            assert after == before
        else:
            assert after <= before

    def test_tail_probability(self):
        q = np.array([bitstring_to_index(b) for b in ["100000000001", "110000000000", "100000001000"]])
        assert tail_probability(q, SEPARATION, 12, -7) == pytest.approx(2 / 3)
        assert tail_probability(np.array([], dtype=np.int64), SEPARATION, 12, -7) is None

    def test_tail_denominators(self):
        space = evens_space(12)
        ts = ts_of(["110000000000", "101000000000"], 0.001)
        batch = batch_of(["110000000000"] * 2 + ["100000000001"] * 2 + ["100000000000"])
        default = evaluate(batch, ts, space, SEPARATION, tail_threshold=-7)
        unseen = evaluate(batch, ts, space, SEPARATION, tail_threshold=-7, tail_denominator="unseen_valid")
        assert default.tail_prob == 0.5
        assert unseen.tail_prob == 1.0
        assert default.U == -11.0


def _report(score_parts, **kw):
    f, r, c = score_parts
    from qcbm.metrics import QueryClassification

    return MetricsReport(
        F=f, R=0.0, R_norm=r, C=0.0, C_norm=c, C_norm_asymptotic=0.0, p=0.0, E=0.0, U=None,
        tail_prob=None, raw=QueryClassification(0, 0, 0, 0), q_total=1, space_size=2, d=1, epsilon=0.5,
    )


class TestMedianRun:
    def test_three(self):
        reports = [_report((1.0, 0, 0)), _report((3.0, 0, 0)), _report((2.0, 0, 0))]
        assert select_median_run(reports) is reports[2]

    def test_fifteen(self):
        scores = np.random.default_rng(0).permutation(15).astype(float)
        reports = [_report((s, 0, 0)) for s in scores]
        assert reports[median_run_index(reports)].F == sorted(scores)[7]

    def test_even_uses_lower_middle(self):
        reports = [_report((s, 0, 0)) for s in (4.0, 1.0, 3.0, 2.0)]
        assert median_run_index(reports) == 3

    def test_ties_pick_lowest_index(self):
        reports = [_report((2.0, 0, 0)), _report((1.0, 0, 0)), _report((2.0, 0, 0)), _report((3.0, 0, 0)), _report((2.0, 0, 0))]
        assert median_run_index(reports) == 0

    def test_absent_fidelity_skipped(self):
        reports = [_report((None, 0, 0)), _report((1.0, 0, 0)), _report((5.0, 0, 0)), _report((3.0, 0, 0))]
        assert median_run_index(reports) == 3
        with pytest.raises(ValueError):
            median_run_index([_report((None, 0, 0))])


class TestSerialization:
    def test_json_and_csv(self, example):
        report = evaluate(*example)
        d = MetricsReport.from_dict(report.to_dict())
        assert d == report
        header, row = report.to_csv_row(header=True).splitlines()
        assert header.split(",") == list(MetricsReport.FIELDS)
        assert '"schema_version": 1' in report.to_json()

    def test_absent_fields_empty_in_csv(self, example):
        _, ts, space = example
        report = evaluate(batch_of(["0011"]), ts, space)
        row = dict(zip(MetricsReport.FIELDS, report.to_csv_row().strip().split(",")))
        assert row["F"] == ""
        assert MetricsReport.from_dict(report.to_dict()).F is None


@st.composite
def instances(draw):
    n = draw(st.integers(2, 6))
    kind = draw(st.sampled_from(["cardinality", "evens"]))
    if kind == "evens":
        space = evens_space(n)
    else:
        k = draw(st.integers(1, n - 1))
        space = cardinality_space(n, k)
    d = draw(st.integers(1, space.size - 1))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    train = np.sort(rng.choice(space.members, d, replace=False))
    q = draw(st.integers(1, 200))
    queries = rng.integers(0, 2**n, size=q)
    return space, train, queries


@settings(max_examples=300, deadline=None)
@given(instances())
def test_matches_brute_force(case):
    space, train, queries = case
    n = space.n_bits
    ts = TrainingSet(n, train.astype(np.int64), np.full(train.shape[0], 1 / train.shape[0]), train.shape[0] / space.size)
    cost = CostFunction("separation", SEPARATION.fn)
    report = evaluate(QueryBatch(queries, n), ts, space, cost)
    q_bits = [index_to_bitstring(int(i), n) for i in queries]
    t_bits = [index_to_bitstring(int(i), n) for i in train]
    oracle = brute_force_metrics(q_bits, t_bits, space.contains, space.size, SEPARATION)
    for name in ("F", "R", "C", "p", "E", "U"):
        assert getattr(report, name) == oracle[name], name
    c = report.raw
    assert c.g_train + c.g_new == len(queries)
    assert c.g_sol_unique <= c.g_sol_multi <= c.g_new
    assert c.g_sol_unique <= space.size - train.shape[0]


def test_perfect_model_limits():
    space = cardinality_space(12, 6)
    ts = sample_training_set(space, 0.3, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    report = evaluate(QueryBatch(rng.choice(space.members, size=100_000), 12), ts, space)
    assert report.F == 1.0
    assert abs(report.R_norm - 1) <= 0.01
