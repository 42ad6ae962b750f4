"""Subpopulation classifiers: Naive Bayes from allele frequencies and
multinomial logistic regression on one-hot allele/genotype features.

Two predictor encodings are supported for the softmax model:

``A``
    every allele slot is its own categorical feature (2m features), slots in
    canonical order, smaller allele first;
``B``
    every locus genotype is one categorical feature (m features) with level
    ``"a/b"``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.special import logsumexp

from .errors import LRClassError, UnseenFeatureLevel, ValidationError
from .freqdata import AlleleFrequencyTable, allele_sort_key
from .kinship import profile_likelihood
from .simulate import DnaProfile, known_allele_mask, labels_to_indices, profiles_to_labels

SCHEMES = ("A", "B")
MODEL_FORMAT = "lrclass-softmax"
MODEL_VERSION = 1


class NonConvergenceWarning(UserWarning):
    """Softmax training hit the iteration cap before the loss settled."""


def _normalise(log_scores: np.ndarray) -> np.ndarray:
    return np.exp(log_scores - logsumexp(log_scores, axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# Naive Bayes


def _log_likelihoods(x: DnaProfile, table: AlleleFrequencyTable) -> np.ndarray:
    if len(x) != table.n_loci:
        raise ValidationError(f"profile has {len(x)} loci, table has {table.n_loci}")
    return np.array(
        [profile_likelihood(x, table.distributions(i), table.locus_names) for i in range(table.n_subpops)]
    )


def naive_bayes_posterior_single(x: DnaProfile, table: AlleleFrequencyTable) -> np.ndarray:
    """Posterior over subpopulations for one profile under HWE and independent loci."""
    return _normalise(np.log(table.priors) + _log_likelihoods(x, table))


def naive_bayes_classify_pair(
    x1: DnaProfile, x2: DnaProfile, table: AlleleFrequencyTable
) -> tuple[int, np.ndarray]:
    """Classify two profiles jointly into one subpopulation.

    The pair likelihood is the product of the two single-profile
    likelihoods, whatever the pair's actual relationship.
    """
    scores = np.log(table.priors) + _log_likelihoods(x1, table) + _log_likelihoods(x2, table)
    return int(np.argmax(scores)), _normalise(scores)


def log_profile_likelihoods(table: AlleleFrequencyTable, geno: np.ndarray) -> np.ndarray:
    """``(n, R)`` log HWE likelihoods of index-encoded profiles."""
    freqs = np.moveaxis(table.padded_freqs, 0, -1)  # (m, A, R)
    with np.errstate(divide="ignore"):
        logf = np.log(freqs)
    loci = np.arange(table.n_loci)[None, :]
    la = logf[loci, geno[..., 0]]
    lb = logf[loci, geno[..., 1]]
    het = (geno[..., 0] != geno[..., 1])[..., None]
    return (la + lb + het * math.log(2.0)).sum(axis=1)


class NaiveBayesClassifier:
    """Batch Naive Bayes over label arrays; needs no training data."""

    trainable = False
    name = "nb"

    def __init__(self, table: AlleleFrequencyTable):
        self.table = table

    def fit(self, labels, y):
        return self

    def predict(self, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(pred, excluded)``; profiles with alleles outside the table are excluded."""
        labels = np.asarray(labels, dtype=object)
        ok = known_allele_mask(self.table, labels)
        pred = np.full(len(labels), -1, dtype=np.int64)
        if ok.any():
            geno = labels_to_indices(self.table, labels[ok])
            scores = np.log(self.table.priors) + log_profile_likelihoods(self.table, geno)
            pred[ok] = np.argmax(scores, axis=1)
        return pred, ~ok


# ---------------------------------------------------------------------------
# encodings


@dataclass(frozen=True)
class EncodedProfile:
    scheme: str
    features: tuple[str, ...]


def _check_scheme(scheme: str) -> str:
    scheme = str(scheme).upper().removeprefix("METHOD")
    if scheme not in SCHEMES:
        raise ValidationError(f"unknown encoding scheme {scheme!r}; expected A or B")
    return scheme


def encode_profile(x: DnaProfile, scheme: str) -> EncodedProfile:
    """Categorical features of one profile under scheme ``A`` or ``B``."""
    scheme = _check_scheme(scheme)
    if scheme == "A":
        feats = tuple(a for g in x for a in (g.allele_a, g.allele_b))
    else:
        feats = tuple(str(g) for g in x)
    return EncodedProfile(scheme, feats)


def feature_matrix(labels: np.ndarray, scheme: str) -> np.ndarray:
    """Object array ``(n, F)`` of feature levels for canonical label arrays."""
    labels = np.asarray(labels, dtype=object)
    n, m, _ = labels.shape
    if scheme == "A":
        return labels.reshape(n, 2 * m)
    out = np.empty((n, m), dtype=object)
    for j in range(m):
        out[:, j] = [f"{a}/{b}" for a, b in labels[:, j, :]]
    return out


def _level_key(level: str):
    return tuple(allele_sort_key(part) for part in level.split("/"))


# ---------------------------------------------------------------------------
# softmax regression


@dataclass
class SoftmaxModel:
    """Fitted multinomial logistic regression.

    ``weights`` has one row per one-hot column (positions in order, levels
    in ``vocabulary`` order) and one column per entry of ``classes``.
    """

    scheme: str
    vocabulary: list[list[str]]
    classes: list[int]
    weights: np.ndarray
    bias: np.ndarray
    l2: float = 1e-4
    max_iter: int = 10_000
    tol: float = 1e-8
    solver: str = "lbfgs"
    iterations: int = 0
    final_loss: float = float("nan")
    converged: bool = True
    _lookup: list[dict] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self._lookup = [{lvl: k for k, lvl in enumerate(levels)} for levels in self.vocabulary]
        self._offsets = np.concatenate([[0], np.cumsum([len(v) for v in self.vocabulary])])

    @property
    def n_features(self) -> int:
        return len(self.vocabulary)

    def design(self, feats: np.ndarray) -> tuple[sp.csr_matrix, np.ndarray]:
        """One-hot design for ``feats`` plus a mask of rows with unseen levels."""
        n, F = feats.shape
        if F != self.n_features:
            raise ValidationError(f"model expects {self.n_features} features, got {F}")
        cols = np.empty((n, F), dtype=np.int64)
        ok = np.ones(n, dtype=bool)
        for p in range(F):
            lookup = self._lookup[p]
            col = np.fromiter((lookup.get(v, -1) for v in feats[:, p]), dtype=np.int64, count=n)
            ok &= col >= 0
            cols[:, p] = col + self._offsets[p]
        cols = cols[ok]
        X = sp.csr_matrix(
            (np.ones(cols.size), cols.ravel(), np.arange(0, cols.size + 1, F)),
            shape=(len(cols), int(self._offsets[-1])),
        )
        return X, ~ok

    def log_proba_design(self, X) -> np.ndarray:
        z = X @ self.weights + self.bias
        return z - logsumexp(z, axis=1, keepdims=True)

    def to_json(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "scheme": self.scheme,
            "classes": list(self.classes),
            "vocabulary": self.vocabulary,
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "hyperparams": {"l2": self.l2, "max_iter": self.max_iter, "tol": self.tol, "solver": self.solver},
            "training": {
                "iterations": self.iterations,
                "final_loss": self.final_loss,
                "converged": self.converged,
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SoftmaxModel":
        if doc.get("format") != MODEL_FORMAT:
            raise ValidationError("not a softmax model document")
        if doc.get("version") != MODEL_VERSION:
            raise ValidationError(f"unsupported model version {doc.get('version')!r}")
        hp, tr = doc["hyperparams"], doc["training"]
        return cls(
            scheme=doc["scheme"],
            vocabulary=[list(v) for v in doc["vocabulary"]],
            classes=[int(c) for c in doc["classes"]],
            weights=np.array(doc["weights"], dtype=float).reshape(-1, len(doc["classes"])),
            bias=np.array(doc["bias"], dtype=float),
            l2=hp["l2"],
            max_iter=hp["max_iter"],
            tol=hp["tol"],
            solver=hp.get("solver", "lbfgs"),
            iterations=tr["iterations"],
            final_loss=tr["final_loss"],
            converged=tr["converged"],
        )


def save_model(model: SoftmaxModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_json()))


def load_model(path) -> SoftmaxModel:
    return SoftmaxModel.from_json(json.loads(Path(path).read_text()))


def _logsumexp_rows(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=1)
    return zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))


class _Objective:
    """Mean cross-entropy + ``l2 / 2 * ||W||^2`` (bias unpenalised) and its gradient."""

    def __init__(self, X, y_idx, K, l2):
        self.X, self.XT = X, X.T.tocsr()
        self.y, self.K, self.l2 = y_idx, K, l2
        self.n, self.D = X.shape
        self.rows = np.arange(self.n)

    def unpack(self, theta):
        return theta[: self.D * self.K].reshape(self.D, self.K), theta[self.D * self.K :]

    def loss(self, W, b):
        z = self.X @ W + b
        lse = _logsumexp_rows(z)
        return float((lse - z[self.rows, self.y]).mean() + 0.5 * self.l2 * np.sum(W * W)), z, lse

    def grad(self, W, z, lse):
        R = np.exp(z - lse[:, None])
        R[self.rows, self.y] -= 1.0
        R /= self.n
        return self.XT @ R + self.l2 * W, R.sum(axis=0)

    def __call__(self, theta):
        W, b = self.unpack(theta)
        f, z, lse = self.loss(W, b)
        gW, gb = self.grad(W, z, lse)
        return f, np.concatenate([gW.ravel(), gb])


def _fit_gd(obj: _Objective, max_iter, tol):
    """Full-batch gradient descent with Armijo backtracking.

    The trial step doubles after every accepted move and halves on every
    rejected one.
    """
    W, b = np.zeros((obj.D, obj.K)), np.zeros(obj.K)
    loss, z, lse = obj.loss(W, b)
    step, converged, it = 1.0, False, 0
    for it in range(1, max_iter + 1):
        gW, gb = obj.grad(W, z, lse)
        gnorm2 = float(np.sum(gW * gW) + np.sum(gb * gb))
        if gnorm2 == 0.0:
            converged = True
            break
        while True:
            W_new, b_new = W - step * gW, b - step * gb
            new_loss, z_new, lse_new = obj.loss(W_new, b_new)
            if new_loss <= loss - 0.5 * step * gnorm2 or step < 1e-12:
                break
            step *= 0.5
        prev = loss
        W, b, loss, z, lse = W_new, b_new, new_loss, z_new, lse_new
        step *= 2.0
        if abs(prev - loss) < tol * max(abs(prev), 1e-300):
            converged = True
            break
    return W, b, it, loss, converged


def _fit_lbfgs(obj: _Objective, max_iter, tol):
    res = minimize(
        obj,
        np.zeros(obj.D * obj.K + obj.K),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "ftol": tol, "gtol": 1e-10, "maxcor": 20},
    )
    W, b = obj.unpack(res.x)
    # status 1 is the iteration cap; other stops (ftol/gtol, line-search
    # stalls at machine precision) all mean the loss has settled.
    return W.copy(), b.copy(), int(res.nit), float(res.fun), res.status != 1


SOLVERS = {"lbfgs": _fit_lbfgs, "gd": _fit_gd}


def train_softmax(
    labels,
    y: Sequence[int],
    scheme: str,
    *,
    l2: float = 1e-4,
    max_iter: int = 10_000,
    tol: float = 1e-8,
    solver: str = "lbfgs",
) -> SoftmaxModel:
    """Fit a multinomial logistic regression on profiles.

    Parameters
    ----------
    labels
        Either a sequence of :class:`DnaProfile` or a canonical label array
        ``(n, m, 2)``.
    y
        Class index per profile.
    scheme
        ``"A"`` (allele slots) or ``"B"`` (genotypes).
    solver
        ``"lbfgs"`` (default) or ``"gd"`` for plain gradient descent with
        backtracking. Both stop when the relative loss decrease drops
        below ``tol``.

    Emits :class:`NonConvergenceWarning` (and sets ``converged=False``) if
    the iteration cap is hit; the model is returned either way.
    """
    scheme = _check_scheme(scheme)
    if len(labels) and isinstance(labels[0], DnaProfile):
        labels = profiles_to_labels(list(labels))
    labels = np.asarray(labels, dtype=object)
    y = np.asarray(y, dtype=np.int64)
    if len(labels) == 0:
        raise ValidationError("training set is empty")
    if len(y) != len(labels):
        raise ValidationError("labels and classes differ in length")
    feats = feature_matrix(labels, scheme)
    vocabulary = [sorted(set(feats[:, p]), key=_level_key) for p in range(feats.shape[1])]
    classes = sorted(set(y.tolist()))
    model = SoftmaxModel(
        scheme=scheme,
        vocabulary=vocabulary,
        classes=classes,
        weights=np.zeros((sum(map(len, vocabulary)), len(classes))),
        bias=np.zeros(len(classes)),
        l2=l2,
        max_iter=max_iter,
        tol=tol,
        solver=solver,
    )
    if len(classes) == 1:
        model.final_loss = 0.0
        return model
    X, _ = model.design(feats)
    y_idx = np.searchsorted(classes, y)
    if solver not in SOLVERS:
        raise ValidationError(f"unknown solver {solver!r}")
    obj = _Objective(X, y_idx, len(classes), l2)
    W, b, it, loss, converged = SOLVERS[solver](obj, max_iter, tol)
    model.weights, model.bias = W, b
    model.iterations, model.final_loss, model.converged = it, loss, converged
    if not converged:
        warnings.warn(
            f"softmax training stopped at {it} iterations (loss {loss:.6g})",
            NonConvergenceWarning,
            stacklevel=2,
        )
    return model


def predict_softmax(model: SoftmaxModel, x: DnaProfile) -> tuple[int, np.ndarray]:
    """Class and posterior over ``model.classes`` for one profile.

    Raises :class:`UnseenFeatureLevel` when a level never occurred in training.
    """
    enc = encode_profile(x, model.scheme)
    for p, level in enumerate(enc.features):
        if level not in model._lookup[p]:
            raise UnseenFeatureLevel(p, level)
    X, _ = model.design(np.array([enc.features], dtype=object))
    proba = np.exp(model.log_proba_design(X))[0]
    return model.classes[int(np.argmax(proba))], proba


class SoftmaxClassifier:
    """Batch wrapper that refits per fold and excludes unseen-level profiles."""

    trainable = True

    def __init__(
        self,
        scheme: str,
        *,
        l2: float = 1e-4,
        max_iter: int = 10_000,
        tol: float = 1e-8,
        solver: str = "lbfgs",
    ):
        self.scheme = _check_scheme(scheme)
        self.name = f"lr{self.scheme}"
        self.l2, self.max_iter, self.tol, self.solver = l2, max_iter, tol, solver
        self.model: SoftmaxModel | None = None

    def fit(self, labels, y):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonConvergenceWarning)
            self.model = train_softmax(
                labels, y, self.scheme, l2=self.l2, max_iter=self.max_iter, tol=self.tol, solver=self.solver
            )
        return self

    def predict(self, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.model is None:
            raise LRClassError("classifier used before fit")
        feats = feature_matrix(np.asarray(labels, dtype=object), self.scheme)
        X, excluded = self.model.design(feats)
        pred = np.full(len(feats), -1, dtype=np.int64)
        if X.shape[0]:
            idx = np.argmax(self.model.log_proba_design(X), axis=1)
            pred[~excluded] = np.asarray(self.model.classes)[idx]
        return pred, excluded


def make_classifier(name: str, table: AlleleFrequencyTable, **hyper):
    """``nb``, ``lrA`` or ``lrB``."""
    key = name.strip()
    if key.lower() in {"nb", "naive-bayes", "naive_bayes"}:
        return NaiveBayesClassifier(table)
    if key.lower() in {"lra", "lrb"}:
        return SoftmaxClassifier(key[-1].upper(), **hyper)
    raise ValidationError(f"unknown classifier {name!r}; expected nb, lrA or lrB")
