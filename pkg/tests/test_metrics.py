"""Metrics against an independently written brute-force oracle."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmdn.metrics import (REPORT_KEYS, ConfusionMatrix, compute_report,
                          relative_change)


def oracle_report(counts):
    """Brute-force one-vs-rest metrics plus the R_K correlation.

    Written before the main implementation, using only per-class loops.
    """
    m = np.asarray(counts, dtype=float)
    c = m.shape[0]
    total = m.sum()
    acc = sum(m[i, i] for i in range(c)) / total
    precisions, recalls, specs = [], [], []
    for i in range(c):
        tp = m[i, i]
        fp = sum(m[j, i] for j in range(c)) - tp
        fn = sum(m[i, j] for j in range(c)) - tp
        tn = total - tp - fp - fn
        precisions.append(tp / (tp + fp) if tp + fp else 0.0)
        recalls.append(tp / (tp + fn) if tp + fn else 0.0)
        specs.append(tn / (tn + fp) if tn + fp else 0.0)
    prec = sum(precisions) / c
    rec = sum(recalls) / c
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    t_k = [sum(m[i, j] for j in range(c)) for i in range(c)]
    p_k = [sum(m[j, i] for j in range(c)) for i in range(c)]
    num = total * sum(m[i, i] for i in range(c)) - sum(p * t for p, t in zip(p_k, t_k))
    den = math.sqrt(total ** 2 - sum(p * p for p in p_k)) * \
        math.sqrt(total ** 2 - sum(t * t for t in t_k))
    mcc = num / den if den else 0.0
    return {"test_error": 1 - acc, "accuracy": acc, "recall": rec,
            "precision": prec, "specificity": sum(specs) / c, "mcc": mcc, "f1": f1}


class TestAccumulate:
    def test_single_correct_sample(self):
        cm = ConfusionMatrix(2)
        cm.accumulate(1, 1)
        assert compute_report(cm).accuracy == 1.0

    def test_out_of_range(self):
        cm = ConfusionMatrix(3)
        with pytest.raises(ValueError, match="outside"):
            cm.accumulate(3, 0)
        with pytest.raises(ValueError, match="outside"):
            cm.accumulate(0, -1)

    def test_three_samples_total(self):
        cm = ConfusionMatrix(2)
        for t, p in [(0, 0), (1, 0), (1, 1)]:
            cm.accumulate(t, p)
        assert cm.total == 3

    def test_merge_adds_counts(self):
        a = ConfusionMatrix.from_counts([[1, 0], [0, 1]])
        b = ConfusionMatrix.from_counts([[2, 1], [0, 3]])
        a.merge(b)
        np.testing.assert_array_equal(a.counts, [[3, 1], [0, 4]])


class TestComputeReport:
    def test_perfect_diagonal(self):
        r = compute_report(ConfusionMatrix.from_counts(np.diag([10, 20, 30])))
        assert r.accuracy == 1.0 and r.f1 == 1.0
        assert r.mcc == pytest.approx(1.0, abs=1e-12)
        assert r.specificity == 1.0 and r.test_error == 0.0

    def test_independent_2class(self):
        r = compute_report(ConfusionMatrix.from_counts([[25, 25], [25, 25]]))
        assert r.mcc == pytest.approx(0.0, abs=1e-12)
        assert r.accuracy == 0.5

    def test_3class_against_oracle(self):
        counts = [[40, 5, 5], [4, 38, 8], [6, 7, 37]]
        got = compute_report(ConfusionMatrix.from_counts(counts)).as_dict()
        want = oracle_report(counts)
        for key in REPORT_KEYS:
            assert got[key] == pytest.approx(want[key], abs=1e-9), key

    def test_100_random_matrices_match_oracle(self, rng):
        for trial in range(100):
            c = int(rng.choice([2, 3, 7]))
            counts = rng.integers(0, 40, size=(c, c))
            if counts.sum() == 0:
                counts[0, 0] = 1
            got = compute_report(ConfusionMatrix.from_counts(counts)).as_dict()
            want = oracle_report(counts)
            for key in REPORT_KEYS:
                assert got[key] == pytest.approx(want[key], abs=1e-9), (trial, key)

    def test_binary_mcc_matches_classical_formula(self, rng):
        for _ in range(50):
            tp, fn, fp, tn = (int(x) for x in rng.integers(0, 50, 4))
            if tp + fn + fp + tn == 0:
                tp = 1
            r = compute_report(ConfusionMatrix.from_counts([[tp, fn], [fp, tn]]))
            den = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
            classical = (tp * tn - fp * fn) / den if den else 0.0
            assert r.mcc == pytest.approx(classical, abs=1e-12)

    def test_test_error_plus_accuracy_is_one_exactly(self, rng):
        counts = rng.integers(0, 30, size=(4, 4)) + 1
        r = compute_report(ConfusionMatrix.from_counts(counts))
        assert r.test_error + r.accuracy == 1.0

    def test_degenerate_ratio_flagged_not_nan(self):
        # class 2 never predicted and never true -> 0/0 precision and recall
        r = compute_report(ConfusionMatrix.from_counts(
            [[5, 0, 0], [0, 5, 0], [0, 0, 0]]))
        assert r.degenerate_ratios > 0
        assert all(np.isfinite(v) for v in r.as_dict().values())

    def test_empty_matrix_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            compute_report(ConfusionMatrix(2))

    def test_micro_average_equals_accuracy(self, rng):
        counts = rng.integers(0, 30, size=(3, 3)) + 1
        r = compute_report(ConfusionMatrix.from_counts(counts), average="micro")
        assert r.precision == pytest.approx(r.accuracy)
        assert r.recall == pytest.approx(r.accuracy)

    @given(st.integers(0, 6), st.integers(1, 9))
    @settings(max_examples=20, deadline=None)
    def test_permutation_and_scaling_invariance(self, shift, scale):
        base = np.array([[12, 3, 1], [2, 20, 4], [0, 5, 9]])
        r0 = compute_report(ConfusionMatrix.from_counts(base)).as_dict()
        perm = np.roll(np.arange(3), shift % 3)
        r1 = compute_report(
            ConfusionMatrix.from_counts(base[np.ix_(perm, perm)])).as_dict()
        r2 = compute_report(ConfusionMatrix.from_counts(base * scale)).as_dict()
        for key in REPORT_KEYS:
            assert r1[key] == pytest.approx(r0[key], abs=1e-12)
            assert r2[key] == pytest.approx(r0[key], abs=1e-12)


class TestSerialization:
    def test_json_key_order_matches_table_schema(self):
        r = compute_report(ConfusionMatrix.from_counts([[3, 1], [1, 3]]))
        assert list(json.loads(r.to_json())) == list(REPORT_KEYS)

    def test_csv_header(self):
        r = compute_report(ConfusionMatrix.from_counts([[3, 1], [1, 3]]))
        header, row = r.to_csv().strip().split("\n")
        assert header == ",".join(REPORT_KEYS)
        assert len(row.split(",")) == len(REPORT_KEYS)


class TestRelativeChange:
    def test_reported_f1_improvement(self):
        assert relative_change(0.740, 0.923) == pytest.approx(24.7, abs=0.1)

    def test_no_change(self):
        assert relative_change(0.5, 0.5) == 0.0

    def test_resnet_precision_row(self):
        assert relative_change(0.831, 0.874) == pytest.approx(5.17, abs=0.01)

    def test_nonpositive_baseline(self):
        with pytest.raises(ValueError, match="baseline"):
            relative_change(0.0, 0.5)
