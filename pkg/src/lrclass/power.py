"""Monte Carlo power comparison of the five LR statistics.

The pipeline simulates unrelated pairs (each member's subpopulation drawn
independently) to get null distributions, fixes an empirical threshold per
statistic at each false positive rate, then simulates related pairs (shared
subpopulation) and counts exceedances.

Thresholds use the upper-alpha rank ``ceil((1 - alpha) n)`` and reject on
``statistic > threshold``. When null samples tie at the threshold the rule
is completed as a randomised test: tied values are rejected with weight
``(floor(alpha n) - #above) / #tied``. Power is reported as the expected
rejection rate of that rule, so no extra randomness enters. With continuous
statistics there are no ties and this is the plain strict-exceedance rule.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import tempfile
from contextlib import nullcontext
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import beta

from .errors import InsufficientSamples, ValidationError
from .freqdata import AlleleFrequencyTable
from .kinship import STATISTICS, LrEngine
from .simulate import (
    BLOCK_SIZE,
    DOMAIN_ALT,
    DOMAIN_NULL,
    UNRELATED,
    RelationshipTheta,
    pair_block,
)

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = {"pc": 1.7e-5, "sb": 1.2e-5}
LOG10 = math.log(10.0)
# alpha * n products within this of an integer count as that integer
_RANK_EPS = 1e-9


@dataclass(frozen=True)
class SimulationPlan:
    table: AlleleFrequencyTable
    theta1: RelationshipTheta
    replicates_null: int
    replicates_alt: int
    alphas: tuple[float, ...]
    seed: int
    statistics: tuple[str, ...] = STATISTICS
    block_size: int = BLOCK_SIZE

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "statistics", tuple(self.statistics))
        if self.replicates_null < 1 or self.replicates_alt < 1:
            raise ValidationError("replicate counts must be at least 1")
        for a in self.alphas:
            if not 0 < a < 0.5:
                raise ValidationError(f"alpha {a} outside (0, 0.5)")
            if a * self.replicates_null < 1 - _RANK_EPS:
                raise InsufficientSamples(
                    f"alpha {a} needs at least {math.ceil(1 / a)} null replicates, "
                    f"plan has {self.replicates_null}"
                )
        unknown = set(self.statistics) - set(STATISTICS)
        if unknown:
            raise ValidationError(f"unknown statistics {sorted(unknown)}")

    def describe(self) -> dict:
        return {
            "subpopulations": list(self.table.subpop_names),
            "priors": self.table.priors.tolist(),
            "loci": list(self.table.locus_names),
            "theta1": list(self.theta1.as_tuple()),
            "replicates_null": self.replicates_null,
            "replicates_alt": self.replicates_alt,
            "alphas": list(self.alphas),
            "seed": self.seed,
            "statistics": list(self.statistics),
            "block_size": self.block_size,
        }


def scale_alpha(alpha: float, n: int) -> float:
    """``max(alpha, 1/n)``, warning when the requested rate is not estimable."""
    if alpha * n < 1 - _RANK_EPS:
        logger.warning("alpha %.3g too small for %d null replicates; using 1/%d", alpha, n, n)
        return 1.0 / n
    return alpha


# ---------------------------------------------------------------------------
# simulation of statistic samples

_WORKER_STATE: dict = {}


def _init_worker(table, theta1, plan_args):
    _WORKER_STATE["engine"] = LrEngine(table, theta1)
    _WORKER_STATE["table"] = table
    _WORKER_STATE["args"] = plan_args


def _blocks_stats(engine, table, sim_theta, seed, domain, shared, n, block_size, blocks):
    """Log statistics with the classification index appended as a sixth column."""
    out = []
    for b in blocks:
        g1, g2, _, _ = pair_block(table, sim_theta, seed, domain, b, n, shared, block_size)
        stats, _, cls = engine.statistics(g1, g2)
        out.append(np.column_stack([stats, cls]))
    return np.concatenate(out)


def _worker_task(blocks):
    sim_theta, seed, domain, shared, n, block_size = _WORKER_STATE["args"]
    return _blocks_stats(
        _WORKER_STATE["engine"], _WORKER_STATE["table"], sim_theta, seed, domain, shared, n, block_size, blocks
    )


def simulate_statistics(
    plan: SimulationPlan,
    hypothesis: str,
    *,
    workers: int = 1,
    spill_dir: str | os.PathLike | None = None,
    with_classes: bool = False,
):
    """Log statistics ``(n, 5)`` for the ``"null"`` or ``"alt"`` pair sample.

    Identical for any ``workers``: pair ``i`` always comes from the same
    block substream and blocks are reassembled in order. With
    ``with_classes`` the subpopulation chosen for the classification
    statistic is returned as well.
    """
    if hypothesis == "null":
        sim_theta, domain, shared, n = UNRELATED, DOMAIN_NULL, False, plan.replicates_null
    elif hypothesis == "alt":
        sim_theta, domain, shared, n = plan.theta1, DOMAIN_ALT, True, plan.replicates_alt
    else:
        raise ValueError(f"hypothesis must be 'null' or 'alt', got {hypothesis!r}")
    bs = plan.block_size
    n_blocks = -(-n // bs)
    if spill_dir is not None:
        path = os.path.join(spill_dir, f"{hypothesis}-{plan.seed}.npy")
        out = np.lib.format.open_memmap(path, mode="w+", dtype=float, shape=(n, len(STATISTICS) + 1))
    else:
        out = np.empty((n, len(STATISTICS) + 1))

    chunk = max(1, min(32, n_blocks // max(1, 4 * workers)))
    groups = [list(range(s, min(s + chunk, n_blocks))) for s in range(0, n_blocks, chunk)]
    if workers > 1 and len(groups) > 1:
        args = (sim_theta, plan.seed, domain, shared, n, bs)
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(plan.table, plan.theta1, args)
        ) as pool:
            results = pool.map(_worker_task, groups)
            for blocks, stats in zip(groups, results):
                start = blocks[0] * bs
                out[start : start + len(stats)] = stats
    else:
        engine = LrEngine(plan.table, plan.theta1)
        for blocks in groups:
            stats = _blocks_stats(engine, plan.table, sim_theta, plan.seed, domain, shared, n, bs, blocks)
            start = blocks[0] * bs
            out[start : start + len(stats)] = stats
    stats = out[:, : len(STATISTICS)]
    if with_classes:
        return stats, out[:, -1].astype(np.int64)
    return stats


def run_null_distribution(plan: SimulationPlan, *, workers: int = 1, spill_dir=None) -> dict[str, np.ndarray]:
    """Sorted null log-LR samples per statistic."""
    stats = simulate_statistics(plan, "null", workers=workers, spill_dir=spill_dir)
    return {name: np.sort(stats[:, k]) for k, name in enumerate(STATISTICS)}


# ---------------------------------------------------------------------------
# thresholds


@dataclass(frozen=True)
class RejectionRule:
    """Reject when ``stat > value``; ties at ``value`` count with ``tie_weight``."""

    value: float
    tie_weight: float = 0.0
    alpha: float = float("nan")
    n: int = 0
    above: int = 0
    tied: int = 0

    @property
    def realized_fpr(self) -> float:
        """Expected rejection rate of the rule on the samples it came from."""
        return (self.above + self.tie_weight * self.tied) / self.n if self.n else float("nan")

    def rejection_rate(self, samples: np.ndarray) -> tuple[float, int, int]:
        """``(expected rate, #strictly above, #tied)`` on ``samples``."""
        samples = np.asarray(samples)
        above = int(np.count_nonzero(samples > self.value))
        tied = int(np.count_nonzero(samples == self.value)) if self.tie_weight else 0
        return (above + self.tie_weight * tied) / len(samples), above, tied


def _exceedance_budget(alpha: float, n: int) -> int:
    k = math.floor(alpha * n + _RANK_EPS)
    if k < 1:
        raise InsufficientSamples(f"alpha {alpha} with {n} samples: need alpha * n >= 1")
    return k


def estimate_threshold(null_samples: np.ndarray, alpha: float) -> float:
    """Value at rank ``ceil((1 - alpha) n)`` (1-based) of the sorted samples."""
    n = len(null_samples)
    k = _exceedance_budget(alpha, n)
    return float(null_samples[n - k - 1])


def threshold_rule(null_samples: np.ndarray, alpha: float) -> RejectionRule:
    """Threshold plus the tie weight that brings the size to ``floor(alpha n) / n``."""
    n = len(null_samples)
    k = _exceedance_budget(alpha, n)
    value = float(null_samples[n - k - 1])
    lo = int(np.searchsorted(null_samples, value, side="left"))
    hi = int(np.searchsorted(null_samples, value, side="right"))
    above, tied = n - hi, hi - lo
    weight = (k - above) / tied if above < k else 0.0
    return RejectionRule(value, weight, alpha, n, above, tied)


def clopper_pearson(x: float, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Exact binomial interval for ``x`` successes in ``n`` trials."""
    if n <= 0:
        return (0.0, 1.0)
    a = 1.0 - confidence
    lo = 0.0 if x <= 0 else float(beta.ppf(a / 2, x, n - x + 1))
    hi = 1.0 if x >= n else float(beta.ppf(1 - a / 2, x + 1, n - x))
    return lo, hi


# ---------------------------------------------------------------------------
# power


@dataclass
class PowerEntry:
    statistic: str
    alpha: float
    threshold: float  # natural-log LR
    tie_weight: float
    power: float
    ci_lo: float
    ci_hi: float
    exceedances: int
    ties: int
    n_null: int
    n_alt: int

    @property
    def threshold_log10(self) -> float:
        return self.threshold / LOG10

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "threshold_log": self.threshold,
            "threshold_log10": self.threshold_log10,
            "threshold": _safe_exp(self.threshold),
            "tie_weight": self.tie_weight,
            "power": self.power,
            "ci95": [self.ci_lo, self.ci_hi],
            "exceedances": self.exceedances,
            "ties": self.ties,
            "n_null": self.n_null,
            "n_alt": self.n_alt,
        }


def _safe_exp(x: float):
    if x > 709:
        return "inf"
    if x == -math.inf:
        return 0.0
    return math.exp(x)


@dataclass
class PowerReport:
    plan: dict
    entries: list[PowerEntry]
    sweep: list[PowerEntry] = field(default_factory=list)
    sweep_errors: list[dict] = field(default_factory=list)

    def entry(self, statistic: str, alpha: float) -> PowerEntry:
        for e in self.entries:
            if e.statistic == statistic and math.isclose(e.alpha, alpha):
                return e
        raise KeyError((statistic, alpha))

    def to_json(self) -> dict:
        stats: dict[str, dict] = {}
        for e in self.entries:
            stats.setdefault(e.statistic, {})[repr(e.alpha)] = e.to_json()
        doc = {"plan": self.plan, "statistics": stats}
        if self.sweep or self.sweep_errors:
            doc["sweep"] = [dict(statistic=e.statistic, **e.to_json()) for e in self.sweep]
            doc["sweep_errors"] = self.sweep_errors
        return doc

    def curves_rows(self) -> list[tuple]:
        rows = self.sweep or self.entries
        return [
            (e.statistic, e.alpha, e.threshold_log10, e.power, e.ci_lo, e.ci_hi)
            for e in sorted(rows, key=lambda e: (STATISTICS.index(e.statistic), e.alpha))
        ]


def _entries(plan, null_sorted, alt_stats, alphas, errors=None):
    entries = []
    n_alt = len(alt_stats)
    for name in plan.statistics:
        k = STATISTICS.index(name)
        col = alt_stats[:, k]
        for a in alphas:
            try:
                rule = threshold_rule(null_sorted[name], a)
            except InsufficientSamples as exc:
                if errors is None:
                    raise
                errors.append({"statistic": name, "alpha": a, "error": str(exc)})
                continue
            rate, above, tied = rule.rejection_rate(col)
            lo, hi = clopper_pearson(rate * n_alt, n_alt)
            entries.append(
                PowerEntry(name, a, rule.value, rule.tie_weight, rate, lo, hi, above, tied, rule.n, n_alt)
            )
    return entries


def estimate_power(
    plan: SimulationPlan,
    null_sorted: dict[str, np.ndarray] | None = None,
    *,
    alt_stats: np.ndarray | None = None,
    workers: int = 1,
    spill_dir=None,
) -> PowerReport:
    """Thresholds at every plan alpha and the matching power estimates.

    Null and alternative samples are simulated unless supplied.
    """
    if null_sorted is None:
        null_sorted = run_null_distribution(plan, workers=workers, spill_dir=spill_dir)
    if alt_stats is None:
        alt_stats = simulate_statistics(plan, "alt", workers=workers, spill_dir=spill_dir)
    return PowerReport(plan.describe(), _entries(plan, null_sorted, alt_stats, plan.alphas))


def alpha_grid(lo: float, hi: float, steps: int) -> list[float]:
    """Evenly spaced FPR grid including both ends."""
    if steps < 1 or lo <= 0 or hi < lo:
        raise ValidationError(f"bad sweep {lo}:{hi}:{steps}")
    if steps == 1:
        return [lo]
    return [float(v) for v in np.linspace(lo, hi, steps)]


def sweep_fpr(
    plan: SimulationPlan,
    grid: Sequence[float],
    null_sorted: dict[str, np.ndarray] | None = None,
    *,
    alt_stats: np.ndarray | None = None,
    workers: int = 1,
    spill_dir=None,
) -> tuple[list[PowerEntry], list[dict]]:
    """Power along an FPR grid, reusing one null and one alternative sample.

    Grid points with too few null samples are reported in the error list
    rather than aborting the sweep.
    """
    if null_sorted is None:
        null_sorted = run_null_distribution(plan, workers=workers, spill_dir=spill_dir)
    if alt_stats is None:
        alt_stats = simulate_statistics(plan, "alt", workers=workers, spill_dir=spill_dir)
    errors: list[dict] = []
    return _entries(plan, null_sorted, alt_stats, list(grid), errors), errors


def run_power(
    plan: SimulationPlan,
    *,
    grid: Sequence[float] | None = None,
    workers: int = 1,
    spill: bool = False,
) -> PowerReport:
    """Full pipeline: one null sample and one alternative sample, then all
    alphas and the optional sweep grid."""
    with tempfile.TemporaryDirectory() if spill else nullcontext() as spill_dir:
        null_sorted = run_null_distribution(plan, workers=workers, spill_dir=spill_dir)
        alt_stats = simulate_statistics(plan, "alt", workers=workers, spill_dir=spill_dir)
        report = estimate_power(plan, null_sorted, alt_stats=alt_stats)
        if grid:
            report.sweep, report.sweep_errors = sweep_fpr(plan, grid, null_sorted, alt_stats=alt_stats)
        del alt_stats, null_sorted
    return report


def write_lr_csv(
    path,
    hypothesis: str,
    stats: np.ndarray,
    classes: np.ndarray,
    *,
    linear: bool = False,
    start: int = 0,
    append: bool = False,
    ids: Sequence | None = None,
) -> None:
    """Per-pair statistics: ``pair_id,hypothesis,lr_laf,...,lr_class,class_index``.

    Values are log10 LRs unless ``linear``. ``path`` may be an open text
    handle. Pair ids default to ``start, start + 1, ...``.
    """
    values = np.exp(stats) if linear else stats / LOG10
    if ids is None:
        ids = range(start, start + len(stats))
    ctx = nullcontext(path) if hasattr(path, "write") else open(path, "a" if append else "w", newline="")
    with ctx as handle:
        writer = csv.writer(handle, lineterminator="\n")
        if not append:
            writer.writerow(["pair_id", "hypothesis", *STATISTICS, "class_index"])
        for pid, row, c in zip(ids, values, classes):
            writer.writerow([pid, hypothesis, *(repr(float(v)) for v in row), int(c)])
