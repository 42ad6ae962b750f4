"""Profile simulation under Hardy-Weinberg sampling and the IBD pair model.

Two layers live here. The object layer (:class:`Genotype`,
:class:`DnaProfile`, :func:`simulate_related_pair`, ...) is convenient for
single draws and tests. The array layer works on integer-encoded genotypes of
shape ``(n, m, 2)`` (allele indices into each locus support, sorted within a
genotype) and is what the Monte Carlo pipeline runs on.

Random streams for bulk runs are assigned per block of pairs: block ``b`` of
domain ``d`` always draws from ``SeedSequence(seed, spawn_key=(d, b))`` and
always simulates a full block, so pair ``i`` is identical no matter how many
pairs are requested or how blocks are spread over workers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ParseError, UnknownAllele, ValidationError
from .freqdata import AlleleFrequencyTable, allele_sort_key

BLOCK_SIZE = 2048

# Seed domains: disjoint substreams derived from one master seed.
DOMAIN_NULL = 0
DOMAIN_ALT = 1
DOMAIN_INDIVIDUALS = 2
DOMAIN_FOLDS = 3


@dataclass(frozen=True)
class Genotype:
    """Unordered allele pair, stored sorted so equality is structural."""

    allele_a: str
    allele_b: str

    def __post_init__(self):
        a, b = str(self.allele_a), str(self.allele_b)
        if not a or not b:
            raise ValidationError("allele labels must be non-empty")
        if allele_sort_key(b) < allele_sort_key(a):
            a, b = b, a
        object.__setattr__(self, "allele_a", a)
        object.__setattr__(self, "allele_b", b)

    @property
    def is_homozygous(self) -> bool:
        return self.allele_a == self.allele_b

    def __iter__(self):
        return iter((self.allele_a, self.allele_b))

    def __str__(self):
        return f"{self.allele_a}/{self.allele_b}"


@dataclass(frozen=True)
class DnaProfile:
    """Genotypes across loci, aligned with a frequency table's locus order."""

    genotypes: tuple[Genotype, ...]

    def __post_init__(self):
        object.__setattr__(
            self,
            "genotypes",
            tuple(g if isinstance(g, Genotype) else Genotype(*g) for g in self.genotypes),
        )

    @classmethod
    def of(cls, *pairs) -> "DnaProfile":
        """``DnaProfile.of(("10", "10"), ("15", "17"))``."""
        return cls(tuple(Genotype(str(a), str(b)) for a, b in pairs))

    def __len__(self):
        return len(self.genotypes)

    def __iter__(self):
        return iter(self.genotypes)

    def __getitem__(self, j):
        return self.genotypes[j]


@dataclass(frozen=True)
class RelationshipTheta:
    """IBD-sharing probabilities ``(z0, z1, z2)`` for a relationship."""

    z0: float
    z1: float
    z2: float

    def __post_init__(self):
        z = (float(self.z0), float(self.z1), float(self.z2))
        if any(not (0.0 <= v <= 1.0) for v in z):
            raise ValidationError(f"theta components must lie in [0, 1], got {z}")
        if abs(sum(z) - 1.0) > 1e-12:
            raise ValidationError(f"theta must sum to 1, got {sum(z)!r}")
        for name, v in zip(("z0", "z1", "z2"), z):
            object.__setattr__(self, name, v)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.z0, self.z1, self.z2)

    @classmethod
    def parse(cls, text: str) -> "RelationshipTheta":
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise ValidationError(f"theta needs three comma-separated values, got {text!r}")
        try:
            values = [_parse_fraction(p) for p in parts]
        except ValueError:
            raise ValidationError(f"cannot parse theta {text!r}") from None
        return cls(*values)


def _parse_fraction(text: str) -> float:
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


UNRELATED = RelationshipTheta(1.0, 0.0, 0.0)
PARENT_CHILD = RelationshipTheta(0.0, 1.0, 0.0)
FULL_SIBLING = RelationshipTheta(0.25, 0.5, 0.25)

RELATIONSHIPS = {"pc": PARENT_CHILD, "sb": FULL_SIBLING, "unrelated": UNRELATED}


@dataclass(frozen=True)
class SimulatedPair:
    profile_1: DnaProfile
    profile_2: DnaProfile
    true_subpop_1: int
    true_subpop_2: int


# ---------------------------------------------------------------------------
# array layer


def block_rng(seed: int, domain: int, block: int) -> np.random.Generator:
    """Generator for one block of one seed domain."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(domain, block)))


def sample_subpops(priors: np.ndarray, rng: np.random.Generator, n: int) -> np.ndarray:
    cdf = np.cumsum(priors)
    cdf[-1] = 1.0
    u = rng.random(n)
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(priors) - 1)


def sample_alleles(
    table: AlleleFrequencyTable, subpops: np.ndarray, rng: np.random.Generator, copies: int = 2
) -> np.ndarray:
    """I.i.d. allele draws ``(n, m, copies)`` from each row's subpopulation."""
    n = len(subpops)
    u = rng.random((n, table.n_loci, copies))
    cdf = table.padded_cdf[subpops]  # (n, m, A)
    return (u[..., None] >= cdf[:, :, None, :]).sum(axis=-1).astype(np.int16)


def simulate_pair_arrays(
    table: AlleleFrequencyTable,
    theta: RelationshipTheta,
    rng: np.random.Generator,
    n: int,
    *,
    shared_subpop: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Simulate ``n`` pairs as index arrays.

    Returns ``(g1, g2, s1, s2)``: genotypes ``(n, m, 2)`` sorted within each
    locus and the subpopulation index of each member. The number and order of
    random draws does not depend on ``theta``.
    """
    m = table.n_loci
    s1 = sample_subpops(table.priors, rng, n)
    s2_indep = sample_subpops(table.priors, rng, n)
    s2 = s1 if shared_subpop else s2_indep
    g1 = sample_alleles(table, s1, rng)
    fresh = sample_alleles(table, s2, rng)
    u_ibd = rng.random((n, m))
    slot = rng.integers(0, 2, size=(n, m))

    # u < 1 always, so a cut at 1.0 can never be crossed.
    cut2 = theta.z0 + theta.z1 if theta.z2 > 0 else 1.0
    ibd = (u_ibd >= theta.z0).astype(np.int8) + (u_ibd >= cut2)
    copied = np.take_along_axis(g1, slot[..., None], axis=-1)[..., 0]
    g2 = fresh.copy()
    one = ibd == 1
    g2[..., 0] = np.where(one, copied, g2[..., 0])
    two = ibd == 2
    g2[two] = g1[two]
    g1.sort(axis=-1)
    g2.sort(axis=-1)
    return g1, g2, s1, s2


def iter_pair_blocks(
    table: AlleleFrequencyTable,
    theta: RelationshipTheta,
    n: int,
    seed: int,
    domain: int,
    *,
    shared_subpop: bool,
    block_size: int = BLOCK_SIZE,
) -> Iterator[tuple[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """Yield ``(start, g1, g2, s1, s2)`` blocks covering pair indices ``[0, n)``."""
    n_blocks = -(-n // block_size)
    for b in range(n_blocks):
        yield (b * block_size, *pair_block(table, theta, seed, domain, b, n, shared_subpop, block_size))


def pair_block(table, theta, seed, domain, block, n, shared_subpop, block_size=BLOCK_SIZE):
    """Pairs ``[block * block_size, min(n, (block + 1) * block_size))``."""
    rng = block_rng(seed, domain, block)
    g1, g2, s1, s2 = simulate_pair_arrays(table, theta, rng, block_size, shared_subpop=shared_subpop)
    keep = min(block_size, n - block * block_size)
    return g1[:keep], g2[:keep], s1[:keep], s2[:keep]


def simulate_individuals(
    table: AlleleFrequencyTable, n: int, seed: int, *, block_size: int = BLOCK_SIZE
) -> tuple[np.ndarray, np.ndarray]:
    """``n`` unrelated profiles with their subpopulations, as index arrays."""
    genos, subs = [], []
    for b in range(-(-n // block_size)):
        rng = block_rng(seed, DOMAIN_INDIVIDUALS, b)
        s = sample_subpops(table.priors, rng, block_size)
        g = sample_alleles(table, s, rng)
        g.sort(axis=-1)
        keep = min(block_size, n - b * block_size)
        genos.append(g[:keep])
        subs.append(s[:keep])
    if not genos:
        return np.zeros((0, table.n_loci, 2), dtype=np.int16), np.zeros(0, dtype=np.int64)
    return np.concatenate(genos), np.concatenate(subs)


def indices_to_labels(table: AlleleFrequencyTable, geno: np.ndarray) -> np.ndarray:
    """Convert index genotypes ``(n, m, 2)`` to an object array of labels."""
    loci = np.arange(table.n_loci)[None, :, None]
    return table.allele_labels[loci, geno]


def labels_to_indices(table: AlleleFrequencyTable, labels: np.ndarray) -> np.ndarray:
    """Inverse of :func:`indices_to_labels`; raises UnknownAllele on misses."""
    labels = np.asarray(labels, dtype=object)
    out = np.empty(labels.shape, dtype=np.int16)
    for j, locus in enumerate(table.loci):
        index = locus.index
        col = labels[:, j, :]
        flat = col.ravel()
        try:
            out[:, j, :] = np.fromiter((index[a] for a in flat), dtype=np.int16, count=flat.size).reshape(col.shape)
        except KeyError as exc:
            raise UnknownAllele(exc.args[0], locus.name) from None
    out.sort(axis=-1)
    return out


def known_allele_mask(table: AlleleFrequencyTable, labels: np.ndarray) -> np.ndarray:
    """Boolean ``(n,)``: True where every allele of the profile is in the table."""
    labels = np.asarray(labels, dtype=object)
    ok = np.ones(labels.shape[0], dtype=bool)
    for j, locus in enumerate(table.loci):
        index = locus.index
        col = labels[:, j, :]
        hit = np.fromiter((a in index for a in col.ravel()), dtype=bool, count=col.size)
        ok &= hit.reshape(col.shape).all(axis=-1)
    return ok


def profile_from_indices(table: AlleleFrequencyTable, geno: np.ndarray) -> DnaProfile:
    return DnaProfile(
        tuple(
            Genotype(table.loci[j].alleles[a], table.loci[j].alleles[b])
            for j, (a, b) in enumerate(np.asarray(geno))
        )
    )


def profile_to_indices(table: AlleleFrequencyTable, profile: DnaProfile) -> np.ndarray:
    if len(profile) != table.n_loci:
        raise ValidationError(f"profile has {len(profile)} loci, table has {table.n_loci}")
    out = np.empty((table.n_loci, 2), dtype=np.int16)
    for j, (locus, g) in enumerate(zip(table.loci, profile)):
        for k, allele in enumerate(g):
            try:
                out[j, k] = locus.index[allele]
            except KeyError:
                raise UnknownAllele(allele, locus.name) from None
    out.sort(axis=-1)
    return out


def profiles_to_labels(profiles: Sequence[DnaProfile]) -> np.ndarray:
    """Object array ``(n, m, 2)`` of canonical labels."""
    if not profiles:
        return np.empty((0, 0, 2), dtype=object)
    out = np.empty((len(profiles), len(profiles[0]), 2), dtype=object)
    for i, p in enumerate(profiles):
        for j, g in enumerate(p):
            out[i, j, 0] = g.allele_a
            out[i, j, 1] = g.allele_b
    return out


# ---------------------------------------------------------------------------
# object layer


def draw_subpopulation(table: AlleleFrequencyTable, rng: np.random.Generator) -> int:
    """Subpopulation index drawn with probability ``table.priors[i]``."""
    return int(sample_subpops(table.priors, rng, 1)[0])


def simulate_profile(table: AlleleFrequencyTable, subpop: int, rng: np.random.Generator) -> DnaProfile:
    """One HWE profile: two independent allele draws per locus."""
    if not 0 <= subpop < table.n_subpops:
        raise ValidationError(f"subpopulation index {subpop} out of range")
    g = sample_alleles(table, np.array([subpop]), rng)[0]
    return profile_from_indices(table, g)


def simulate_related_pair(
    table: AlleleFrequencyTable, theta: RelationshipTheta, rng: np.random.Generator
) -> SimulatedPair:
    """A pair related by ``theta``; both members share one subpopulation."""
    g1, g2, s1, s2 = simulate_pair_arrays(table, theta, rng, 1, shared_subpop=True)
    return SimulatedPair(
        profile_from_indices(table, g1[0]), profile_from_indices(table, g2[0]), int(s1[0]), int(s2[0])
    )


def simulate_unrelated_pair(table: AlleleFrequencyTable, rng: np.random.Generator) -> SimulatedPair:
    """A null pair; each member's subpopulation is drawn independently."""
    g1, g2, s1, s2 = simulate_pair_arrays(table, UNRELATED, rng, 1, shared_subpop=False)
    return SimulatedPair(
        profile_from_indices(table, g1[0]), profile_from_indices(table, g2[0]), int(s1[0]), int(s2[0])
    )


# ---------------------------------------------------------------------------
# files


def _locus_columns(locus_names: Sequence[str]) -> list[str]:
    cols = []
    for name in locus_names:
        cols += [f"{name}_a", f"{name}_b"]
    return cols


def write_profiles(path, table: AlleleFrequencyTable, geno: np.ndarray, subpops: np.ndarray) -> None:
    """Labelled individuals: ``id,subpop,<locus>_a,<locus>_b,...``."""
    labels = indices_to_labels(table, geno)
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["id", "subpop", *_locus_columns(table.locus_names)])
        for i in range(len(labels)):
            writer.writerow([i, table.subpop_names[subpops[i]], *labels[i].ravel()])


def write_pair_dump(path, table: AlleleFrequencyTable, blocks) -> None:
    """Pairs, one row per member: ``pair_id,member,subpop,<locus>_a,<locus>_b,...``.

    ``blocks`` yields ``(start, g1, g2, s1, s2)`` as from :func:`iter_pair_blocks`.
    """
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["pair_id", "member", "subpop", *_locus_columns(table.locus_names)])
        for start, g1, g2, s1, s2 in blocks:
            l1, l2 = indices_to_labels(table, g1), indices_to_labels(table, g2)
            for k in range(len(l1)):
                writer.writerow([start + k, 1, table.subpop_names[s1[k]], *l1[k].ravel()])
                writer.writerow([start + k, 2, table.subpop_names[s2[k]], *l2[k].ravel()])


def read_profiles(path) -> tuple[list[str], list[str], list[str], np.ndarray]:
    """Read a labelled-profile CSV.

    Returns ``(ids, subpop_labels, locus_names, labels)`` with ``labels`` an
    object array ``(n, m, 2)`` of canonical (sorted) allele labels.
    """
    with Path(path).open(newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if len(header) < 4 or header[0] != "id" or header[1] != "subpop" or (len(header) - 2) % 2:
            raise ParseError(f"{path}: header must be id,subpop,<locus>_a,<locus>_b,...")
        locus_names = []
        for k in range(2, len(header), 2):
            a, b = header[k], header[k + 1]
            if not (a.endswith("_a") and b.endswith("_b") and a[:-2] == b[:-2]):
                raise ParseError(f"{path}: columns {a!r},{b!r} are not a locus pair")
            locus_names.append(a[:-2])
        ids, subs, rows = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            cells = [c.strip() for c in row]
            if any(not c for c in cells[2:]):
                raise ParseError(f"{path}:{lineno}: empty allele")
            ids.append(cells[0])
            subs.append(cells[1])
            pairs = []
            for k in range(2, len(cells), 2):
                a, b = cells[k], cells[k + 1]
                if allele_sort_key(b) < allele_sort_key(a):
                    a, b = b, a
                pairs.append((a, b))
            rows.append(pairs)
    labels = np.empty((len(rows), len(locus_names), 2), dtype=object)
    for i, pairs in enumerate(rows):
        for j, (a, b) in enumerate(pairs):
            labels[i, j, 0] = a
            labels[i, j, 1] = b
    return ids, subs, locus_names, labels
