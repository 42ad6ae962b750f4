"""Kinship likelihood ratios under population substructure.

Simulates related and unrelated pairs from subpopulation allele frequencies,
computes five likelihood-ratio statistics that handle the unknown origin of
each profile differently, estimates thresholds and power by Monte Carlo, and
compares Naive Bayes with softmax classifiers for assigning a profile to its
subpopulation.
"""

__version__ = "0.1.0"

from .errors import (
    DegenerateRatio,
    FoldTooSmall,
    InsufficientSamples,
    LRClassError,
    ParseError,
    UnknownAllele,
    UnseenFeatureLevel,
    ValidationError,
)
from .freqdata import (
    AlleleFrequencyTable,
    LocusTable,
    load_frequency_table,
    pooled_distribution,
    synthetic_table,
    table_from_mapping,
)
from .kinship import STATISTICS, LrEngine, LrResultSet, compute_lr_set, joint_genotype_prob, pair_likelihood
from .simulate import (
    FULL_SIBLING,
    PARENT_CHILD,
    UNRELATED,
    DnaProfile,
    Genotype,
    RelationshipTheta,
    simulate_related_pair,
    simulate_unrelated_pair,
)
from .classify import (
    SoftmaxModel,
    naive_bayes_classify_pair,
    naive_bayes_posterior_single,
    predict_softmax,
    train_softmax,
)
from .metrics import ConfusionMatrix, MetricSummary, build_confusion, kfold_evaluate, summarize
from .power import SimulationPlan, clopper_pearson, estimate_power, estimate_threshold, run_null_distribution, run_power

__all__ = [name for name in dir() if not name.startswith("_")]
