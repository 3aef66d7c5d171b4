"""Exception hierarchy shared by every module.

Domain errors derive from :class:`QLangevinError` so the command line can map
them to exit code 1, while :class:`ConfigError` maps to exit code 2.
"""

from __future__ import annotations


class QLangevinError(Exception):
    """Base class for all domain errors raised by the package."""


class ConfigError(QLangevinError):
    """Malformed or inconsistent experiment configuration."""


class NonFiniteEnergy(QLangevinError):
    pass


class NonFiniteGradient(QLangevinError):
    pass


class InvalidBatch(QLangevinError):
    pass


class TooManyBatches(QLangevinError):
    pass


class AssumptionViolation(QLangevinError):
    """A claimed assumption constant fails on the probe set.

    Attributes:
        inequality: Short name of the violated inequality.
        witness: Probe point (or pair) where the violation was observed.
        value: The offending value of the defining expression.
    """

    def __init__(self, inequality: str, witness, value: float):
        self.inequality = inequality
        self.witness = witness
        self.value = float(value)
        super().__init__(f"{inequality} violated at {witness!r} (value {self.value:.6g})")


class UnsupportedDimension(QLangevinError):
    pass


class DegenerateDensity(QLangevinError):
    pass


class InvalidStep(QLangevinError):
    pass


class StationaryNotConverged(QLangevinError):
    pass


class TooLargeForExact(QLangevinError):
    pass


class TooLargeForFull(QLangevinError):
    pass


class ZeroPhaseGap(QLangevinError):
    pass


class ModeMismatch(QLangevinError):
    pass


class InvalidThreshold(QLangevinError):
    pass


class GrowthTooAggressive(QLangevinError):
    pass


class ScheduleTooLong(QLangevinError):
    pass


class NoOverlap(QLangevinError):
    pass


class AnnealingFailed(QLangevinError):
    def __init__(self, stage: int, overlap: float):
        self.stage = stage
        self.overlap = float(overlap)
        super().__init__(f"stage {stage} overlap {self.overlap:.4g} below abort threshold")


class DivergenceDetected(QLangevinError):
    pass


class IllConditionedSchedule(QLangevinError):
    pass
