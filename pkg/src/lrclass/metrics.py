"""Confusion matrices, macro-averaged classification metrics and k-fold evaluation.

Matrices are oriented rows = predicted class, columns = true class. Every
metric is computed one-vs-rest per class and then averaged with equal class
weights. Accuracy and error are additionally reported the "overall" way,
trace over total.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import FoldTooSmall, ValidationError
from .simulate import DOMAIN_FOLDS, block_rng

logger = logging.getLogger(__name__)

METRICS = ("precision", "recall", "specificity", "accuracy", "error", "f1")


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    excluded_count: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValidationError("confusion matrix must be square")
        if np.any(self.counts < 0) or self.excluded_count < 0:
            raise ValidationError("confusion counts must be nonnegative")

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def true_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts, self.excluded_count + other.excluded_count)

    def to_json(self) -> dict:
        return {"counts": self.counts.tolist(), "excluded": int(self.excluded_count)}


def build_confusion(pairs: Iterable[tuple[int, int | None]], n_classes: int) -> ConfusionMatrix:
    """Tally ``(true, predicted)`` pairs; ``predicted=None`` marks an exclusion."""
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    excluded = 0
    for true, pred in pairs:
        if pred is None:
            excluded += 1
            continue
        if not (0 <= true < n_classes and 0 <= pred < n_classes):
            raise ValidationError(f"class index out of range: true={true}, predicted={pred}")
        counts[pred, true] += 1
    return ConfusionMatrix(counts, excluded)


def confusion_from_arrays(y_true, y_pred, excluded, n_classes: int) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    excluded = np.asarray(excluded, dtype=bool)
    keep = ~excluded
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (y_pred[keep], y_true[keep]), 1)
    return ConfusionMatrix(counts, int(excluded.sum()))


@dataclass
class MetricSummary:
    """Macro-averaged metrics plus the per-class values they came from.

    ``flags`` lists ``"<metric>[<class>]"`` for every per-class value whose
    denominator was zero (and was therefore set to 0).
    """

    precision: float
    recall: float
    specificity: float
    accuracy: float
    error: float
    f1: float
    overall_accuracy: float
    overall_error: float
    per_class: dict[str, list[float]] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    @property
    def degenerate(self) -> bool:
        return bool(self.flags)

    def macro(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRICS}

    def to_json(self) -> dict:
        return {
            "macro": self.macro(),
            "overall": {"accuracy": self.overall_accuracy, "error": self.overall_error},
            "per_class": self.per_class,
            "flags": self.flags,
        }


def _safe_div(num: np.ndarray, den: np.ndarray, name: str, flags: list[str]) -> np.ndarray:
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.zeros_like(num)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    flags.extend(f"{name}[{i}]" for i in np.flatnonzero(~ok))
    return out


def summarize(cm: ConfusionMatrix) -> MetricSummary:
    """One-vs-rest metrics per class, macro-averaged."""
    C = cm.counts.astype(float)
    total = C.sum()
    tp = np.diag(C)
    fp = C.sum(axis=1) - tp
    fn = C.sum(axis=0) - tp
    tn = total - tp - fp - fn
    flags: list[str] = []
    precision = _safe_div(tp, tp + fp, "precision", flags)
    recall = _safe_div(tp, tp + fn, "recall", flags)
    specificity = _safe_div(tn, tn + fp, "specificity", flags)
    n = np.full_like(tp, total)
    accuracy = _safe_div(tp + tn, n, "accuracy", flags)
    error = _safe_div(fp + fn, n, "error", flags)
    f1 = _safe_div(2 * precision * recall, precision + recall, "f1", flags)
    if total > 0:
        overall_acc = float(tp.sum() / total)
        overall_err = 1.0 - overall_acc
    else:
        overall_acc = overall_err = 0.0
        flags.append("overall")
    per_class = {
        "precision": precision.tolist(),
        "recall": recall.tolist(),
        "specificity": specificity.tolist(),
        "accuracy": accuracy.tolist(),
        "error": error.tolist(),
        "f1": f1.tolist(),
    }
    return MetricSummary(
        precision=float(precision.mean()),
        recall=float(recall.mean()),
        specificity=float(specificity.mean()),
        accuracy=float(accuracy.mean()),
        error=float(error.mean()),
        f1=float(f1.mean()),
        overall_accuracy=overall_acc,
        overall_error=overall_err,
        per_class=per_class,
        flags=flags,
    )


def average_summaries(summaries: Sequence[MetricSummary]) -> MetricSummary:
    """Element-wise mean of several summaries (flags are concatenated, deduplicated)."""
    if not summaries:
        raise ValidationError("nothing to average")
    mean = {name: float(np.mean([getattr(s, name) for s in summaries])) for name in METRICS}
    per_class = {
        name: np.mean([s.per_class[name] for s in summaries], axis=0).tolist()
        for name in summaries[0].per_class
    }
    flags = sorted({f"fold{k}:{f}" for k, s in enumerate(summaries) for f in s.flags})
    return MetricSummary(
        **mean,
        overall_accuracy=float(np.mean([s.overall_accuracy for s in summaries])),
        overall_error=float(np.mean([s.overall_error for s in summaries])),
        per_class=per_class,
        flags=flags,
    )


# ---------------------------------------------------------------------------
# k-fold protocol


def fold_assignment(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Seeded shuffle, then contiguous near-equal slices (remainder to leading folds)."""
    if k < 2:
        raise ValidationError("k must be at least 2")
    if n < k:
        raise FoldTooSmall(f"{n} samples cannot fill {k} folds")
    order = block_rng(seed, DOMAIN_FOLDS, 0).permutation(n)
    base, extra = divmod(n, k)
    folds, start = [], 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        folds.append(order[start : start + size])
        start += size
    return folds


@dataclass
class MethodEvaluation:
    name: str
    fold_matrices: list[ConfusionMatrix]
    fold_summaries: list[MetricSummary]
    summary: MetricSummary

    @property
    def excluded(self) -> int:
        return sum(m.excluded_count for m in self.fold_matrices)

    def to_json(self) -> dict:
        return {
            "folds": [
                {"confusion": m.to_json(), "summary": s.to_json()}
                for m, s in zip(self.fold_matrices, self.fold_summaries)
            ],
            "average": self.summary.to_json(),
            "excluded": self.excluded,
        }


def _run_fold(args):
    classifier, labels, y, train_idx, valid_idx, n_classes = args
    if classifier.trainable:
        classifier.fit(labels[train_idx], y[train_idx])
    pred, excluded = classifier.predict(labels[valid_idx])
    return confusion_from_arrays(y[valid_idx], pred, excluded, n_classes)


def kfold_evaluate(
    labels: np.ndarray,
    y: Sequence[int],
    k: int,
    classifiers: Sequence,
    seed: int,
    *,
    n_classes: int | None = None,
    workers: int = 1,
) -> dict[str, MethodEvaluation]:
    """Cross-validate each classifier on the same seeded folds.

    Trainable classifiers are refit on the other ``k - 1`` folds; Naive
    Bayes predicts each validation fold directly. Per-fold summaries are
    averaged with equal fold weight.

    Raises
    ------
    FoldTooSmall
        Fewer samples than folds, or a training split missing a class while a
        trainable classifier is requested.
    """
    labels = np.asarray(labels, dtype=object)
    y = np.asarray(y, dtype=np.int64)
    if n_classes is None:
        n_classes = int(y.max()) + 1 if len(y) else 0
    folds = fold_assignment(len(y), k, seed)
    splits = []
    for f in range(k):
        train_idx = np.concatenate([folds[g] for g in range(k) if g != f])
        splits.append((train_idx, folds[f]))
    if any(c.trainable for c in classifiers):
        for f, (train_idx, _) in enumerate(splits):
            missing = sorted(set(range(n_classes)) - set(y[train_idx].tolist()))
            if missing:
                raise FoldTooSmall(f"training split for fold {f} lacks classes {missing}")

    tasks = [
        (clf, labels, y, train_idx, valid_idx, n_classes)
        for clf in classifiers
        for train_idx, valid_idx in splits
    ]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            matrices = list(pool.map(_run_fold, tasks))
    else:
        matrices = [_run_fold(t) for t in tasks]

    results = {}
    for c, clf in enumerate(classifiers):
        mats = matrices[c * k : (c + 1) * k]
        sums = [summarize(m) for m in mats]
        results[clf.name] = MethodEvaluation(clf.name, mats, sums, average_summaries(sums))
        logger.info("%s: mean overall accuracy %.4f", clf.name, results[clf.name].summary.overall_accuracy)
    return results
