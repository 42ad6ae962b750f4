"""Exception hierarchy shared by every module."""


class LRClassError(Exception):
    """Base class for all engine errors."""


class ParseError(LRClassError):
    """A malformed row or field in an input file."""


class ValidationError(LRClassError):
    """Input parsed but violates a data invariant."""


class UnknownAllele(LRClassError):
    """A genotype carries an allele absent from the frequency table."""

    def __init__(self, allele, locus, subpop=None):
        self.allele = allele
        self.locus = locus
        self.subpop = subpop
        where = f"locus {locus!r}"
        if subpop is not None:
            where += f", subpopulation {subpop!r}"
        super().__init__(f"allele {allele!r} not in table at {where}")


class DegenerateRatio(LRClassError):
    """The null-hypothesis likelihood is zero so the ratio is undefined."""


class InsufficientSamples(LRClassError):
    """Too few null samples to estimate a threshold at the requested rate."""


class UnseenFeatureLevel(LRClassError):
    """A feature level at prediction time never appeared during training."""

    def __init__(self, position, level):
        self.position = position
        self.level = level
        super().__init__(f"feature {position} level {level!r} unseen in training")


class FoldTooSmall(LRClassError):
    """A cross-validation training split lacks a class needed for fitting."""
