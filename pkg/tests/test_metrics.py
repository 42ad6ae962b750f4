import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lrclass.classify import NaiveBayesClassifier, SoftmaxClassifier
from lrclass.errors import FoldTooSmall, ValidationError
from lrclass.metrics import (
    ConfusionMatrix,
    average_summaries,
    build_confusion,
    confusion_from_arrays,
    fold_assignment,
    kfold_evaluate,
    summarize,
)
from lrclass.simulate import indices_to_labels, simulate_individuals

matrices = st.integers(2, 6).flatmap(lambda k: arrays(np.int64, (k, k), elements=st.integers(0, 50)))


def recount(cm, c):
    """One-vs-rest counts for class c by walking every cell."""
    tp = fp = fn = tn = 0
    k = cm.shape[0]
    for pred in range(k):
        for true in range(k):
            n = cm[pred, true]
            if pred == c and true == c:
                tp += n
            elif pred == c:
                fp += n
            elif true == c:
                fn += n
            else:
                tn += n
    return tp, fp, fn, tn


class TestConfusion:
    def test_orientation(self):
        cm = build_confusion([(0, 1), (0, 1), (1, 1), (2, None)], 3)
        assert cm.counts[1, 0] == 2 and cm.counts[1, 1] == 1
        assert cm.excluded_count == 1 and cm.total == 3

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            build_confusion([(0, 4)], 3)

    def test_arrays_agree(self):
        rng = np.random.default_rng(0)
        y, p = rng.integers(0, 4, 500), rng.integers(0, 4, 500)
        excl = rng.random(500) < 0.1
        a = confusion_from_arrays(y, p, excl, 4)
        b = build_confusion([(t, None if e else q) for t, q, e in zip(y, p, excl)], 4)
        np.testing.assert_array_equal(a.counts, b.counts)
        assert a.excluded_count == b.excluded_count


class TestSummarize:
    def test_reference_matrices(self, reference_confusion):
        for name, m in reference_confusion["matrices"].items():
            s = summarize(ConfusionMatrix(np.array(m)))
            assert s.overall_accuracy == pytest.approx(reference_confusion["overall_accuracy"][name], abs=5e-4)
        nb = summarize(ConfusionMatrix(np.array(reference_confusion["matrices"]["nb"])))
        assert nb.per_class["recall"][1] == pytest.approx(239 / 304, abs=1e-12)

    def test_zero_denominators_flagged(self):
        s = summarize(ConfusionMatrix([[5, 0, 0], [0, 5, 0], [0, 0, 0]]))
        assert s.per_class["precision"][2] == 0.0
        assert "precision[2]" in s.flags and "recall[2]" in s.flags
        assert s.degenerate

    def test_empty(self):
        s = summarize(ConfusionMatrix(np.zeros((3, 3), dtype=int)))
        assert s.overall_accuracy == 0.0 and "overall" in s.flags

    @settings(max_examples=80, deadline=None)
    @given(matrices)
    def test_brute_force(self, cm):
        s = summarize(ConfusionMatrix(cm))
        total = cm.sum()
        for c in range(cm.shape[0]):
            tp, fp, fn, tn = recount(cm, c)
            assert s.per_class["precision"][c] == pytest.approx(tp / (tp + fp) if tp + fp else 0.0)
            assert s.per_class["recall"][c] == pytest.approx(tp / (tp + fn) if tp + fn else 0.0)
            assert s.per_class["specificity"][c] == pytest.approx(tn / (tn + fp) if tn + fp else 0.0)
            if total:
                assert s.per_class["accuracy"][c] == pytest.approx((tp + tn) / total)
                assert s.per_class["error"][c] == pytest.approx(1 - (tp + tn) / total)
        assert s.precision == pytest.approx(np.mean(s.per_class["precision"]))
        if total:
            assert s.overall_accuracy == pytest.approx(np.trace(cm) / total)

    @settings(max_examples=50, deadline=None)
    @given(matrices, st.data())
    def test_permutation_invariant(self, cm, data):
        perm = np.array(data.draw(st.permutations(range(cm.shape[0]))))
        a = summarize(ConfusionMatrix(cm))
        b = summarize(ConfusionMatrix(cm[np.ix_(perm, perm)]))
        assert a.macro() == pytest.approx(b.macro())
        assert a.overall_accuracy == pytest.approx(b.overall_accuracy)

    @settings(max_examples=50, deadline=None)
    @given(matrices, st.integers(2, 7))
    def test_scale_invariant(self, cm, factor):
        a = summarize(ConfusionMatrix(cm))
        b = summarize(ConfusionMatrix(cm * factor))
        assert a.macro() == pytest.approx(b.macro())

    def test_average(self):
        a = summarize(ConfusionMatrix([[4, 0], [0, 4]]))
        b = summarize(ConfusionMatrix([[2, 2], [2, 2]]))
        avg = average_summaries([a, b])
        assert avg.overall_accuracy == pytest.approx(0.75)
        assert avg.per_class["recall"] == pytest.approx([0.75, 0.75])


class TestFolds:
    def test_partition(self):
        folds = fold_assignment(103, 5, seed=1)
        assert [len(f) for f in folds] == [21, 21, 21, 20, 20]
        np.testing.assert_array_equal(np.sort(np.concatenate(folds)), np.arange(103))

    def test_deterministic(self):
        a = fold_assignment(50, 5, seed=3)
        b = fold_assignment(50, 5, seed=3)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_too_small(self):
        with pytest.raises(FoldTooSmall):
            fold_assignment(3, 5, seed=0)
        with pytest.raises(ValidationError):
            fold_assignment(10, 1, seed=0)


class TestKfold:
    def test_missing_class(self, substructured_table):
        labels = indices_to_labels(substructured_table, simulate_individuals(substructured_table, 3, seed=0)[0])
        clfs = [NaiveBayesClassifier(substructured_table), SoftmaxClassifier("A")]
        with pytest.raises(FoldTooSmall):
            kfold_evaluate(labels, [0, 1, 2], 2, clfs, seed=0, n_classes=4)

    def test_workers_do_not_change_results(self, small_table):
        geno, y = simulate_individuals(small_table, 600, seed=2)
        labels = indices_to_labels(small_table, geno)

        def run(workers):
            clfs = [NaiveBayesClassifier(small_table), SoftmaxClassifier("B")]
            return kfold_evaluate(labels, y, 3, clfs, seed=5, n_classes=3, workers=workers)

        serial, parallel = run(1), run(3)
        for name in serial:
            assert serial[name].to_json() == parallel[name].to_json()
        assert sum(m.total + m.excluded_count for m in serial["nb"].fold_matrices) == 600
