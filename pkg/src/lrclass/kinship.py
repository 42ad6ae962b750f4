"""Pairwise genotype likelihoods under IBD sharing and the five LR statistics.

Per locus, with HWE genotype probability ``P(G)``::

    P(G1, G2 | theta) = z0 * P(G1) P(G2) + z1 * P(G1) T(G2 | G1) + z2 * P(G1) [G1 == G2]

where ``T`` is the one-allele IBD transition: one of the two alleles of
``G1`` (each with probability 1/2) is passed on, the other allele of ``G2``
is a fresh population draw. Loci multiply; everything accumulates in log
space. The null hypothesis is always ``theta0 = (1, 0, 0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateRatio, UnknownAllele, ValidationError
from .freqdata import AlleleFrequencyTable, pooled_distribution
from .simulate import UNRELATED, DnaProfile, Genotype, RelationshipTheta

STATISTICS = ("lr_laf", "lr_avg", "lr_max", "lr_min", "lr_class")

LocusFreq = Mapping[str, float]


def _freq(freq: LocusFreq, allele: str, locus=None) -> float:
    try:
        return freq[allele]
    except KeyError:
        raise UnknownAllele(allele, locus) from None


def genotype_prob(g: Genotype, freq: LocusFreq, locus=None) -> float:
    """HWE probability: ``p**2`` for a homozygote, ``2pq`` otherwise."""
    pa = _freq(freq, g.allele_a, locus)
    if g.is_homozygous:
        return pa * pa
    return 2.0 * pa * _freq(freq, g.allele_b, locus)


def transition_prob(g2: Genotype, g1: Genotype, freq: LocusFreq, locus=None) -> float:
    """P(G2 | G1) when exactly one allele of G1 is IBD with G2."""
    c, d = g2.allele_a, g2.allele_b
    pc, pd = _freq(freq, c, locus), _freq(freq, d, locus)

    def given_passed(t):
        if c == d:
            return pc if t == c else 0.0
        return (pd if t == c else 0.0) + (pc if t == d else 0.0)

    return 0.5 * (given_passed(g1.allele_a) + given_passed(g1.allele_b))


def joint_genotype_prob(
    g1: Genotype, g2: Genotype, theta: RelationshipTheta, freq: LocusFreq, locus=None
) -> float:
    """Probability of the genotype pair ``(g1, g2)`` at one locus."""
    p1 = genotype_prob(g1, freq, locus)
    p2 = genotype_prob(g2, freq, locus)
    total = theta.z0 * p1 * p2
    if theta.z1:
        total += theta.z1 * p1 * transition_prob(g2, g1, freq, locus)
    if theta.z2 and g1 == g2:
        total += theta.z2 * p1
    return total


def pair_likelihood(
    x1: DnaProfile,
    x2: DnaProfile,
    theta: RelationshipTheta,
    freqs: Sequence[LocusFreq],
    locus_names: Sequence[str] | None = None,
) -> float:
    """Log-likelihood of a profile pair; ``-inf`` for impossible configurations."""
    if len(x1) != len(freqs) or len(x2) != len(freqs):
        raise ValidationError(
            f"profiles have {len(x1)}/{len(x2)} loci, frequencies cover {len(freqs)}"
        )
    total = 0.0
    for j, (g1, g2, freq) in enumerate(zip(x1, x2, freqs)):
        name = locus_names[j] if locus_names else j
        p = joint_genotype_prob(g1, g2, theta, freq, name)
        if p <= 0.0:
            return -math.inf
        total += math.log(p)
    return total


def profile_likelihood(x: DnaProfile, freqs: Sequence[LocusFreq], locus_names=None) -> float:
    """Log HWE probability of a single profile."""
    total = 0.0
    for j, (g, freq) in enumerate(zip(x, freqs)):
        total += math.log(genotype_prob(g, freq, locus_names[j] if locus_names else j))
    return total


@dataclass(frozen=True)
class LrResultSet:
    """The five statistics for one pair (linear scale) plus their ingredients."""

    lr_laf: float
    lr_avg: float
    lr_max: float
    lr_min: float
    lr_class: float
    class_index: int
    per_subpop_lr: tuple[float, ...]

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in STATISTICS}


PairClassifier = Callable[[DnaProfile, DnaProfile], tuple]


def _log_lr(x1, x2, theta1, freqs, names) -> float:
    l0 = pair_likelihood(x1, x2, UNRELATED, freqs, names)
    if l0 == -math.inf:
        raise DegenerateRatio("null-hypothesis likelihood is zero")
    return pair_likelihood(x1, x2, theta1, freqs, names) - l0


def compute_lr_set(
    x1: DnaProfile,
    x2: DnaProfile,
    theta1: RelationshipTheta,
    table: AlleleFrequencyTable,
    classifier: PairClassifier | None = None,
) -> LrResultSet:
    """All five statistics for one pair, evaluated directly from the formulas.

    ``classifier(x1, x2)`` must return ``(class_index, posterior)``; the
    default is the joint Naive Bayes rule over ``table``.
    """
    names = table.locus_names
    per_subpop = [
        math.exp(_log_lr(x1, x2, theta1, table.distributions(i), names))
        for i in range(table.n_subpops)
    ]
    pooled = pooled_distribution(table)
    lr_laf = math.exp(_log_lr(x1, x2, theta1, pooled.distributions(0), names))
    if classifier is None:
        from .classify import naive_bayes_classify_pair

        def classifier(a, b):
            return naive_bayes_classify_pair(a, b, table)

    class_index, _ = classifier(x1, x2)
    class_index = int(class_index)
    return LrResultSet(
        lr_laf=lr_laf,
        lr_avg=float(np.dot(table.priors, per_subpop)),
        lr_max=max(per_subpop),
        lr_min=min(per_subpop),
        lr_class=per_subpop[class_index],
        class_index=class_index,
        per_subpop_lr=tuple(per_subpop),
    )


# ---------------------------------------------------------------------------
# vectorised engine


class LrEngine:
    """Batch evaluator of the five statistics on index-encoded pairs.

    Frequencies for the R subpopulations and the pooled distribution are
    stacked into one ``(m, A_max, R + 1)`` array so a single gather serves
    every statistic. Results are natural-log LRs.
    """

    def __init__(self, table: AlleleFrequencyTable, theta1: RelationshipTheta):
        self.table = table
        self.theta1 = theta1
        pooled = pooled_distribution(table).padded_freqs  # (1, m, A)
        stacked = np.concatenate([table.padded_freqs, pooled], axis=0)  # (R+1, m, A)
        self._freqs = np.ascontiguousarray(np.moveaxis(stacked, 0, -1))  # (m, A, R+1)
        with np.errstate(divide="ignore"):
            self._logf = np.log(self._freqs[..., : table.n_subpops])
        self._log_priors = np.log(table.priors)
        self._loci = np.arange(table.n_loci)[None, :]

    def log_genotype_probs(self, g: np.ndarray) -> np.ndarray:
        """Per-subpopulation log HWE probability of each profile, ``(n, R)``."""
        la = self._logf[self._loci, g[..., 0]]
        lb = self._logf[self._loci, g[..., 1]]
        het = (g[..., 0] != g[..., 1])[..., None]
        return (la + lb + het * math.log(2.0)).sum(axis=1)

    def naive_bayes_pairs(self, g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
        """Joint Naive Bayes class for each pair (lowest index wins ties)."""
        score = self._log_priors + self.log_genotype_probs(g1) + self.log_genotype_probs(g2)
        return np.argmax(score, axis=1)

    def per_locus_ratio(self, g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
        """LR contribution of every locus under every distribution, ``(n, m, R+1)``.

        Equals ``z0 + z1 * T(G2|G1) / P(G2) + z2 * [G1 == G2] / P(G2)``.
        """
        z0, z1, z2 = self.theta1.as_tuple()
        a, b = g1[..., 0], g1[..., 1]
        c, d = g2[..., 0], g2[..., 1]
        pc = self._freqs[self._loci, c]
        pd = self._freqs[self._loci, d]
        hom2 = (c == d)[..., None]
        p_g2 = np.where(hom2, pc * pc, 2.0 * pc * pd)
        out = np.full(p_g2.shape, z0)
        if z1:
            half = np.where(hom2, 0.5, 1.0)
            h_a = ((a == c)[..., None] * pd + (a == d)[..., None] * pc) * half
            h_b = ((b == c)[..., None] * pd + (b == d)[..., None] * pc) * half
            out += z1 * 0.5 * (h_a + h_b) / p_g2
        if z2:
            same = ((a == c) & (b == d))[..., None]
            out += z2 * same / p_g2
        return out

    def log_lrs(self, g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
        """Summed log LR per pair, ``(n, R+1)``: subpopulations then pooled."""
        with np.errstate(divide="ignore"):
            return np.log(self.per_locus_ratio(g1, g2)).sum(axis=1)

    def statistics(
        self, g1: np.ndarray, g2: np.ndarray, class_index: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Log statistics ``(n, 5)`` in :data:`STATISTICS` order.

        Also returns the per-subpopulation log LRs ``(n, R)`` and the class
        indices used for the classification statistic.
        """
        R = self.table.n_subpops
        logs = self.log_lrs(g1, g2)
        per = logs[:, :R]
        if class_index is None:
            class_index = self.naive_bayes_pairs(g1, g2)
        out = np.empty((len(g1), len(STATISTICS)))
        out[:, 0] = logs[:, R]
        with np.errstate(divide="ignore", invalid="ignore"):
            out[:, 1] = logsumexp(per + self._log_priors, axis=1)
        out[:, 2] = per.max(axis=1)
        out[:, 3] = per.min(axis=1)
        out[:, 4] = per[np.arange(len(per)), class_index]
        # the weighted mean lies between the extremes; clip rounding noise
        np.clip(out[:, 1], out[:, 3], out[:, 2], out=out[:, 1])
        return out, per, class_index
