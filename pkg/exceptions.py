#!/usr/bin/env python3
"""
Error types shared by the hierarchical block-sparse recovery modules
"""


class HiblkError(Exception):
    """Base class for every domain error raised by this package"""


class StructureError(HiblkError):
    """Invalid hierarchical layout, block path or dimension mismatch"""


class FormatError(HiblkError):
    """Malformed matrix, vector, JSON or CSV input"""


class RankError(HiblkError):
    """A basis or least-squares system is not of full column rank"""

    def __init__(self, message, ratio=None):
        super().__init__(message)
        self.ratio = ratio


class PsiInfeasibleError(HiblkError):
    """Requested overlap counts exceed the available index pool"""

    def __init__(self, mode, category, requested, available):
        super().__init__(
            f"mode {mode}: requested {requested} '{category}' indices but only {available} available"
        )
        self.mode = mode
        self.category = category
        self.requested = requested
        self.available = available


class CoherenceError(HiblkError):
    """Coherence quantity cannot be evaluated with the requested strategy"""


class SampledCoherenceError(HiblkError):
    """A sampled (lower-bound) coherence was passed to a certificate"""


class BoundDomainError(HiblkError):
    """A closed-form bound was evaluated outside its premise"""

    def __init__(self, bound, premise):
        super().__init__(f"{bound}: premise violated ({premise})")
        self.bound = bound
        self.premise = premise
