"""Classification metric and statistical test oracles."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctmdetect.errors import DataError
from ctmdetect.metrics import (
    MetricsReport,
    auc_ovr,
    binary_auc,
    compute_report,
    confusion_matrix,
    holm_bonferroni,
    macro_f1,
    mcc,
    precision_recall_f1,
    roc_curve,
    row_normalize,
    wilcoxon_signed_rank,
)

import oracles


def _from_cm(cm):
    """Expand a confusion matrix into (y_true, y_pred) arrays."""
    yt, yp = [], []
    for i, row in enumerate(cm):
        for j, count in enumerate(row):
            yt.extend([i] * count)
            yp.extend([j] * count)
    return np.array(yt), np.array(yp)


class TestConfusion:
    def test_rows_are_truth(self):
        yt = np.array([0, 0, 1, 2])
        yp = np.array([0, 1, 1, 0])
        cm = confusion_matrix(yt, yp, 3)
        assert np.array_equal(cm, [[1, 1, 0], [0, 1, 0], [1, 0, 0]])

    def test_total_preserved(self):
        rng = np.random.default_rng(0)
        yt = rng.integers(0, 3, 100)
        yp = rng.integers(0, 3, 100)
        assert confusion_matrix(yt, yp, 3).sum() == 100

    def test_row_normalize(self):
        cm = np.array([[2, 2, 0], [0, 0, 0], [1, 1, 2]])
        norm = row_normalize(cm)
        assert np.allclose(norm[0], [0.5, 0.5, 0.0])
        assert np.allclose(norm[1], 0.0)  # empty row stays zero
        assert abs(norm[2].sum() - 1.0) < 1e-12


class TestPrecisionRecallF1:
    def test_hand_worked_example(self):
        cm = np.array([[5, 1, 0], [2, 3, 1], [0, 0, 4]])
        prec, rec, f1 = precision_recall_f1(cm)
        # column sums 7, 4, 5; row sums 6, 6, 4
        assert np.allclose(prec, [5 / 7, 3 / 4, 4 / 5])
        assert np.allclose(rec, [5 / 6, 3 / 6, 4 / 4])
        expect_f1 = [
            2 * (5 / 7) * (5 / 6) / (5 / 7 + 5 / 6),
            2 * (3 / 4) * (3 / 6) / (3 / 4 + 3 / 6),
            2 * (4 / 5) * 1.0 / (4 / 5 + 1.0),
        ]
        assert np.allclose(f1, expect_f1, atol=1e-12)

    def test_perfect_predictions(self):
        yt = np.array([0, 1, 2, 0, 1, 2])
        cm = confusion_matrix(yt, yt, 3)
        prec, rec, f1 = precision_recall_f1(cm)
        assert np.allclose(prec, 1.0) and np.allclose(rec, 1.0) and np.allclose(f1, 1.0)
        assert np.all(cm - np.diag(np.diag(cm)) == 0)

    def test_empty_predicted_class_zero(self):
        # class 2 never predicted: precision defined as 0
        cm = np.array([[3, 0, 0], [0, 3, 0], [1, 2, 0]])
        prec, _, f1 = precision_recall_f1(cm)
        assert prec[2] == 0.0
        assert f1[2] == 0.0

    def test_macro_f1_is_unweighted_mean(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            yt = rng.integers(0, 3, 80)
            yp = rng.integers(0, 3, 80)
            _, _, f1 = precision_recall_f1(confusion_matrix(yt, yp, 3))
            assert abs(macro_f1(yt, yp, 3) - f1.mean()) < 1e-12


class TestMcc:
    def test_perfect_is_one(self):
        yt = np.array([0, 1, 2, 0, 1, 2])
        assert abs(mcc(yt, yt) - 1.0) < 1e-12

    def test_single_predicted_class_is_zero(self):
        yt = np.array([0, 1, 2, 0])
        yp = np.zeros(4, dtype=int)
        assert mcc(yt, yp) == 0.0

    def test_binary_closed_form(self):
        # generalized MCC must collapse to the textbook binary formula
        rng = np.random.default_rng(2)
        cases = [np.array([[40, 10], [5, 45]])]
        for _ in range(50):
            cases.append(rng.integers(0, 30, size=(2, 2)))
        for cm in cases:
            tn, fp = int(cm[0, 0]), int(cm[0, 1])
            fn, tp = int(cm[1, 0]), int(cm[1, 1])
            den = math.sqrt(
                float((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
            )
            expect = 0.0 if den == 0 else (tp * tn - fp * fn) / den
            yt, yp = _from_cm(cm)
            if yt.size == 0:
                continue
            assert abs(mcc(yt, yp, 2) - expect) < 1e-12

    def test_inverted_binary_is_minus_one(self):
        yt = np.array([0, 0, 1, 1])
        yp = 1 - yt
        assert abs(mcc(yt, yp) - (-1.0)) < 1e-12

    def test_range(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            yt = rng.integers(0, 3, 60)
            yp = rng.integers(0, 3, 60)
            assert -1.0 - 1e-12 <= mcc(yt, yp) <= 1.0 + 1e-12


class TestRoc:
    def test_perfect_ranking(self):
        y = np.array([0, 0, 0, 1, 1, 1])
        s = np.array([0.1, 0.2, 0.3, 0.7, 0.8, 0.9])
        assert abs(binary_auc(y, s) - 1.0) < 1e-12

    def test_constant_scores_half(self):
        y = np.array([0, 1, 0, 1])
        s = np.full(4, 0.5)
        fpr, tpr, thr = roc_curve(y, s)
        assert np.allclose(fpr, [0.0, 1.0])
        assert np.allclose(tpr, [0.0, 1.0])
        assert len(thr) == 1
        assert abs(binary_auc(y, s) - 0.5) < 1e-12

    def test_curve_shape(self):
        rng = np.random.default_rng(4)
        y = rng.integers(0, 2, 50)
        y[0], y[1] = 0, 1
        s = np.round(rng.normal(size=50), 1)  # force ties
        fpr, tpr, thr = roc_curve(y, s)
        assert fpr[0] == 0.0 and tpr[0] == 0.0
        assert fpr[-1] == 1.0 and tpr[-1] == 1.0
        assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)
        assert len(thr) == len(np.unique(s))
        assert np.all(np.diff(thr) < 0)

    def test_auc_matches_mann_whitney(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            y = rng.integers(0, 2, 20)
            y[0], y[1] = 0, 1
            s = np.round(rng.normal(size=20), 1)  # heavy ties
            got = binary_auc(y, s)
            ref = oracles.mann_whitney_auc(y, s)
            assert abs(got - ref) < 1e-12

    def test_validation(self):
        with pytest.raises(DataError):
            roc_curve(np.array([0, 2]), np.array([0.5, 0.5]))
        with pytest.raises(DataError):
            roc_curve(np.array([1, 1]), np.array([0.5, 0.6]))
        with pytest.raises(DataError):
            roc_curve(np.array([]), np.array([]))

    def test_ovr_per_class(self):
        y = np.array([0, 1, 2, 0, 1, 2])
        probs = np.eye(3)[y] * 0.8 + 0.1
        auc = auc_ovr(y, probs)
        assert np.allclose(auc, 1.0)

    def test_ovr_degenerate_class_nan(self):
        y = np.array([0, 1, 0, 1])
        probs = np.random.default_rng(6).random((4, 3))
        auc = auc_ovr(y, probs)
        assert np.isnan(auc[2])
        assert not np.isnan(auc[0]) and not np.isnan(auc[1])


class TestWilcoxon:
    def test_all_positive_n5(self):
        w, p = wilcoxon_signed_rank(np.array([1.0, 2.0, 3.0, 4.0, 5.0]))
        assert w == 0.0
        assert p == 0.0625

    def test_identical_pairs(self):
        a = np.array([1.0, 2.0, 3.0])
        w, p = wilcoxon_signed_rank(a, a)
        assert w == 0.0 and p == 1.0

    def test_swap_symmetry(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=12)
        b = rng.normal(size=12)
        _, p_ab = wilcoxon_signed_rank(a, b)
        _, p_ba = wilcoxon_signed_rank(b, a)
        assert abs(p_ab - p_ba) < 1e-12

    @given(st.integers(0, 2**31 - 1), st.integers(2, 11))
    @settings(max_examples=30, deadline=None)
    def test_exact_matches_enumeration(self, seed, n):
        rng = np.random.default_rng(seed)
        # quantized differences provoke ties and occasional zeros
        d = np.round(rng.normal(size=n) * 2.0) / 2.0
        if np.all(d == 0.0):
            d[0] = 1.0
        w_got, p_got = wilcoxon_signed_rank(d)
        w_ref, p_ref = oracles.wilcoxon_enumerate(d)
        assert w_got == w_ref
        assert abs(p_got - p_ref) < 1e-12

    def test_approximation_close_to_exact_dp(self):
        # just past the exact-enumeration cutoff the normal approximation
        # should sit near an exact subset-sum computation
        rng = np.random.default_rng(8)
        for _ in range(10):
            d = rng.normal(size=25)
            w, p_approx = wilcoxon_signed_rank(d)
            ranks = np.argsort(np.argsort(np.abs(d))) + 1.0
            total = int(ranks.sum())
            ways = np.zeros(total + 1)
            ways[0] = 1.0
            for r in ranks.astype(int):
                ways[r:] += ways[: total + 1 - r].copy()
            p_exact = min(1.0, 2.0 * ways[: int(w) + 1].sum() / 2.0 ** 25)
            assert abs(p_approx - p_exact) < 0.01

    def test_validation(self):
        with pytest.raises(DataError):
            wilcoxon_signed_rank(np.array([1.0, 2.0]), np.array([1.0]))
        with pytest.raises(DataError):
            wilcoxon_signed_rank(np.array([]))


class TestHolm:
    def test_worked_example(self):
        adj = holm_bonferroni([0.01, 0.04, 0.03])
        assert np.allclose(adj, [0.03, 0.06, 0.06], atol=1e-12)

    def test_single_p_unchanged(self):
        assert holm_bonferroni([0.2])[0] == 0.2

    def test_all_ones(self):
        assert np.allclose(holm_bonferroni([1.0, 1.0, 1.0]), 1.0)

    def test_clamped_at_one(self):
        adj = holm_bonferroni([0.5, 0.9, 0.8])
        assert np.all(adj <= 1.0)

    def test_monotone_in_sorted_order(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            p = rng.random(6)
            adj = holm_bonferroni(p)
            order = np.argsort(p, kind="stable")
            assert np.all(np.diff(adj[order]) >= -1e-15)
            assert np.all(adj >= p - 1e-15)

    def test_order_preserved(self):
        p = np.array([0.04, 0.01, 0.03])
        adj = holm_bonferroni(p)
        # same multiset as the sorted case, mapped back to input positions
        assert np.allclose(sorted(adj), [0.03, 0.06, 0.06])
        assert adj[1] == min(adj)

    def test_validation(self):
        with pytest.raises(DataError):
            holm_bonferroni([])
        with pytest.raises(DataError):
            holm_bonferroni([0.5, 1.5])


class TestReport:
    def test_fields_consistent(self):
        rng = np.random.default_rng(10)
        y = rng.integers(0, 3, 120)
        probs = rng.dirichlet(np.ones(3), size=120)
        pred = probs.argmax(axis=1)
        rep = compute_report(y, pred, probs, class_names=("calib", "no_tc", "tc"))
        assert rep.n == 120
        assert abs(rep.accuracy - np.mean(pred == y)) < 1e-12
        assert rep.confusion.sum() == 120
        assert abs(rep.macro_f1 - np.mean(rep.f1)) < 1e-12
        assert rep.auc is not None and rep.auc.shape == (3,)
        assert rep.macro_auc is not None

    def test_to_dict_json_serializable(self):
        rng = np.random.default_rng(11)
        y = rng.integers(0, 2, 30)
        probs = rng.dirichlet(np.ones(3), size=30)
        rep = compute_report(y, probs.argmax(axis=1), probs)
        d = rep.to_dict()
        json.dumps(d)  # must not raise
        assert d["auc"][2] is None  # absent class reported as null

    def test_report_without_probs(self):
        y = np.array([0, 1, 2, 1])
        rep = compute_report(y, y)
        assert rep.auc is None
        assert rep.macro_auc is None
        assert isinstance(rep, MetricsReport)
