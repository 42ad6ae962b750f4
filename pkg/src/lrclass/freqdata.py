"""Per-subpopulation allele frequency tables.

A table holds, for every locus, one frequency vector per subpopulation over a
shared allele support, plus the subpopulation proportions used as priors.
Alleles are string labels and are never coerced to numbers: ``"34"``,
``"34.1"`` and ``"34.2"`` are three distinct alleles.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ParseError, ValidationError

logger = logging.getLogger(__name__)

LOCUS_SUM_TOL = 1e-6
PRIOR_SUM_TOL = 1e-9


def allele_sort_key(label: str):
    """Display/canonical ordering for allele labels.

    Numeric-looking labels sort by value (so ``"9" < "10"``), anything else
    after them lexically. Only ordering is affected; equality stays exact.
    """
    try:
        value = float(label)
    except ValueError:
        return (1, math.inf, label)
    if math.isnan(value):
        return (1, math.inf, label)
    return (0, value, label)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LocusTable:
    """Allele support and per-subpopulation frequencies at one locus.

    ``freqs[i, a]`` is the frequency of ``alleles[a]`` in subpopulation ``i``.
    Alleles are kept in canonical order (see :func:`allele_sort_key`).
    """

    name: str
    alleles: tuple[str, ...]
    freqs: np.ndarray

    def __post_init__(self):
        alleles = tuple(self.alleles)
        freqs = np.atleast_2d(np.asarray(self.freqs, dtype=float))
        if freqs.shape[1] != len(alleles):
            raise ValidationError(
                f"locus {self.name!r}: {len(alleles)} alleles but "
                f"{freqs.shape[1]} frequency columns"
            )
        if not alleles:
            raise ValidationError(f"locus {self.name!r}: empty allele support")
        if len(set(alleles)) != len(alleles):
            raise ValidationError(f"locus {self.name!r}: duplicate allele labels")
        for label in alleles:
            if not isinstance(label, str) or not label:
                raise ValidationError(f"locus {self.name!r}: invalid allele label {label!r}")
        order = sorted(range(len(alleles)), key=lambda a: allele_sort_key(alleles[a]))
        object.__setattr__(self, "alleles", tuple(alleles[a] for a in order))
        object.__setattr__(self, "freqs", _freeze(freqs[:, order]))

    @property
    def n_alleles(self) -> int:
        return len(self.alleles)

    @cached_property
    def index(self) -> dict[str, int]:
        return {label: a for a, label in enumerate(self.alleles)}

    def distribution(self, subpop: int) -> dict[str, float]:
        """Allele -> frequency mapping for one subpopulation."""
        return dict(zip(self.alleles, self.freqs[subpop].tolist()))

    def check(self, subpop_names: Sequence[str]) -> None:
        """Raise ValidationError unless every column is a proper distribution."""
        if self.freqs.shape[0] != len(subpop_names):
            raise ValidationError(
                f"locus {self.name!r}: {self.freqs.shape[0]} frequency rows for "
                f"{len(subpop_names)} subpopulations"
            )
        for i, sp in enumerate(subpop_names):
            for a, label in enumerate(self.alleles):
                f = self.freqs[i, a]
                if not (0.0 < f <= 1.0):
                    raise ValidationError(
                        f"locus {self.name!r}, subpopulation {sp!r}, allele {label!r}: "
                        f"frequency {f} outside (0, 1]"
                    )
            total = float(self.freqs[i].sum())
            if abs(total - 1.0) > LOCUS_SUM_TOL:
                raise ValidationError(
                    f"locus {self.name!r}, subpopulation {sp!r}: frequencies sum to "
                    f"{total:.6g}, not 1"
                )


@dataclass(frozen=True)
class AlleleFrequencyTable:
    """Frequencies for R subpopulations over m loci, with subpopulation priors.

    Immutable once built; the padded array views are computed lazily and
    shared by every simulation and likelihood batch.
    """

    subpop_names: tuple[str, ...]
    loci: tuple[LocusTable, ...]
    priors: np.ndarray = field(default=None)

    def __post_init__(self):
        names = tuple(self.subpop_names)
        object.__setattr__(self, "subpop_names", names)
        object.__setattr__(self, "loci", tuple(self.loci))
        if not names:
            raise ValidationError("at least one subpopulation is required")
        if len(set(names)) != len(names):
            raise ValidationError("duplicate subpopulation names")
        if not self.loci:
            raise ValidationError("at least one locus is required")
        seen = set()
        for locus in self.loci:
            if locus.name in seen:
                raise ValidationError(f"duplicate locus {locus.name!r}")
            seen.add(locus.name)
            locus.check(names)
        priors = self.priors
        if priors is None:
            priors = np.full(len(names), 1.0 / len(names))
        priors = np.asarray(priors, dtype=float).ravel()
        if priors.shape != (len(names),):
            raise ValidationError(
                f"{priors.size} priors given for {len(names)} subpopulations"
            )
        if np.any(~np.isfinite(priors)) or np.any(priors <= 0):
            raise ValidationError(f"priors must be positive, got {priors.tolist()}")
        if abs(priors.sum() - 1.0) > PRIOR_SUM_TOL:
            raise ValidationError(f"priors sum to {priors.sum():.12g}, not 1")
        object.__setattr__(self, "priors", _freeze(priors))

    @property
    def n_subpops(self) -> int:
        return len(self.subpop_names)

    @property
    def n_loci(self) -> int:
        return len(self.loci)

    @property
    def locus_names(self) -> tuple[str, ...]:
        return tuple(locus.name for locus in self.loci)

    @cached_property
    def max_alleles(self) -> int:
        return max(locus.n_alleles for locus in self.loci)

    @cached_property
    def padded_freqs(self) -> np.ndarray:
        """Array ``(R, m, A_max)`` of frequencies, zero beyond each locus support."""
        out = np.zeros((self.n_subpops, self.n_loci, self.max_alleles))
        for j, locus in enumerate(self.loci):
            out[:, j, : locus.n_alleles] = locus.freqs
        out.setflags(write=False)
        return out

    @cached_property
    def padded_cdf(self) -> np.ndarray:
        """Cumulative frequencies ``(R, m, A_max)`` with the last real entry pinned to 1."""
        cdf = np.cumsum(self.padded_freqs, axis=-1)
        for j, locus in enumerate(self.loci):
            cdf[:, j, locus.n_alleles - 1 :] = 1.0
        cdf.setflags(write=False)
        return cdf

    @cached_property
    def allele_labels(self) -> np.ndarray:
        """Object array ``(m, A_max)`` mapping allele indices back to labels."""
        out = np.full((self.n_loci, self.max_alleles), None, dtype=object)
        for j, locus in enumerate(self.loci):
            out[j, : locus.n_alleles] = locus.alleles
        return out

    def subpop_index(self, name) -> int:
        """Resolve a subpopulation given by name or by integer index."""
        if isinstance(name, (int, np.integer)):
            if 0 <= name < self.n_subpops:
                return int(name)
            raise ValidationError(f"subpopulation index {name} out of range")
        try:
            return self.subpop_names.index(name)
        except ValueError:
            pass
        try:
            idx = int(name)
        except (TypeError, ValueError):
            raise ValidationError(f"unknown subpopulation {name!r}") from None
        return self.subpop_index(idx)

    def distributions(self, subpop: int) -> list[dict[str, float]]:
        """Per-locus allele -> frequency mappings for one subpopulation."""
        return [locus.distribution(subpop) for locus in self.loci]

    def with_priors(self, priors) -> "AlleleFrequencyTable":
        return AlleleFrequencyTable(self.subpop_names, self.loci, priors)


def parse_priors(text: str) -> np.ndarray:
    """Parse ``"p1,p2,...,pR"`` into a float vector."""
    try:
        return np.array([float(tok) for tok in text.split(",") if tok.strip()])
    except ValueError as exc:
        raise ValidationError(f"cannot parse priors {text!r}: {exc}") from None


def _parse_freq(text: str, where: str) -> float | None:
    text = text.strip()
    if text == "" or text.upper() in {"NA", "NAN"}:
        return None
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{where}: frequency {text!r} is not a number") from None
    if not math.isfinite(value):
        raise ParseError(f"{where}: frequency {text!r} is not finite")
    return value


def load_frequency_table(
    path,
    priors=None,
    *,
    freq_floor: float | None = None,
    renormalize: bool = False,
) -> AlleleFrequencyTable:
    """Read a frequency CSV with header ``allele,locus,<subpop_1>,...``.

    Parameters
    ----------
    path
        CSV file, one row per (allele, locus).
    priors
        Subpopulation proportions in header order. Defaults to uniform.
    freq_floor
        If given, blank or zero entries are filled with this value instead
        of being rejected.
    renormalize
        Rescale every subpopulation column at every locus to sum to one,
        logging each adjustment.

    Raises
    ------
    ParseError
        Malformed header, row, or number.
    ValidationError
        Any table invariant fails (messages carry locus/subpopulation/allele).
    """
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 3 or header[0].lower() != "allele" or header[1].lower() != "locus":
            raise ParseError(f"{path}: header must start with 'allele,locus' then subpopulations")
        subpops = header[2:]
        rows: dict[str, dict[str, list[float | None]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            allele, locus = row[0].strip(), row[1].strip()
            if not allele or not locus:
                raise ParseError(f"{path}:{lineno}: empty allele or locus")
            where = f"{path}:{lineno} (locus {locus!r}, allele {allele!r})"
            values = [_parse_freq(c, where) for c in row[2:]]
            per_locus = rows.setdefault(locus, {})
            if allele in per_locus:
                raise ParseError(f"{where}: duplicate row")
            per_locus[allele] = values
    if not rows:
        raise ParseError(f"{path}: no data rows")

    loci = []
    for locus_name, per_allele in rows.items():
        alleles = list(per_allele)
        freqs = np.empty((len(subpops), len(alleles)))
        for a, allele in enumerate(alleles):
            for i, value in enumerate(per_allele[allele]):
                if value is None or value == 0.0:
                    if freq_floor is None:
                        raise ValidationError(
                            f"locus {locus_name!r}, subpopulation {subpops[i]!r}, "
                            f"allele {allele!r}: missing from this subpopulation "
                            "(use a frequency floor to fill)"
                        )
                    value = freq_floor
                freqs[i, a] = value
        if renormalize:
            sums = freqs.sum(axis=1, keepdims=True)
            for i, s in enumerate(sums.ravel()):
                if abs(s - 1.0) > 0:
                    logger.info(
                        "renormalized locus %s subpopulation %s (sum was %.6g)",
                        locus_name, subpops[i], s,
                    )
            freqs = freqs / sums
        loci.append(LocusTable(locus_name, tuple(alleles), freqs))
    return AlleleFrequencyTable(tuple(subpops), tuple(loci), priors)


def write_frequency_table(table: AlleleFrequencyTable, path) -> None:
    """Write ``table`` in the CSV layout read by :func:`load_frequency_table`."""
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["allele", "locus", *table.subpop_names])
        for locus in table.loci:
            for a, allele in enumerate(locus.alleles):
                writer.writerow([allele, locus.name, *(repr(float(f)) for f in locus.freqs[:, a])])


def pooled_distribution(table: AlleleFrequencyTable) -> AlleleFrequencyTable:
    """Collapse all subpopulations into their prior-weighted mixture.

    The result has a single subpopulation with prior 1. Pooling an already
    pooled table returns equal frequencies.
    """
    if table.n_subpops == 1:
        return table
    loci = []
    for locus in table.loci:
        pooled = table.priors @ locus.freqs
        loci.append(LocusTable(locus.name, locus.alleles, pooled[None, :]))
    return AlleleFrequencyTable(("pooled",), tuple(loci), np.ones(1))


def table_from_mapping(
    data: Mapping[str, Mapping[str, Sequence[float]]],
    subpop_names: Sequence[str],
    priors=None,
) -> AlleleFrequencyTable:
    """Build a table from ``{locus: {allele: [f_1, ..., f_R]}}``."""
    loci = []
    for locus_name, per_allele in data.items():
        alleles = tuple(per_allele)
        freqs = np.array([per_allele[a] for a in alleles], dtype=float).T
        loci.append(LocusTable(locus_name, alleles, freqs))
    return AlleleFrequencyTable(tuple(subpop_names), tuple(loci), priors)


def synthetic_table(
    n_subpops: int = 4,
    n_loci: int = 15,
    n_alleles: int | Iterable[int] = 10,
    *,
    divergence: float = 0.05,
    priors=None,
    seed: int = 0,
    subpop_names: Sequence[str] | None = None,
) -> AlleleFrequencyTable:
    """Random substructured table for tests and demonstrations.

    Each locus gets an ancestral frequency vector from a flat Dirichlet; each
    subpopulation then draws from a Dirichlet centred on it with concentration
    ``(1 - divergence) / divergence`` (Balding-Nichols style drift), so
    ``divergence`` plays the role of F_ST.
    """
    if not 0 < divergence < 1:
        raise ValidationError("divergence must be in (0, 1)")
    rng = np.random.default_rng(seed)
    if isinstance(n_alleles, int):
        counts = [n_alleles] * n_loci
    else:
        counts = list(n_alleles)
        n_loci = len(counts)
    names = tuple(subpop_names) if subpop_names else tuple(f"S{i + 1}" for i in range(n_subpops))
    conc = (1 - divergence) / divergence
    loci = []
    for j, k in enumerate(counts):
        ancestral = rng.dirichlet(np.full(k, 2.0))
        freqs = np.vstack([rng.dirichlet(conc * ancestral) for _ in range(n_subpops)])
        # Keep every entry strictly positive and columns normalised.
        freqs = np.maximum(freqs, 1e-4)
        freqs /= freqs.sum(axis=1, keepdims=True)
        alleles = tuple(str(8 + a) for a in range(k))
        loci.append(LocusTable(f"L{j + 1}", alleles, freqs))
    return AlleleFrequencyTable(names, tuple(loci), priors)
