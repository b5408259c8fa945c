"""Exception hierarchy for samplers, maps, explorations and estimators."""

from typing import Optional


class StableMapsError(RuntimeError):
    """Base class for every error raised by the package."""


class InvalidParameter(StableMapsError, ValueError):
    """A plain argument violates a documented precondition."""


class WeightError(StableMapsError):
    """Failure while analysing a weight sequence."""


class NoSolution(WeightError):
    """The partition fixed-point equation has no root above one."""

    def __init__(self, message: str, gap: float):
        """
        Args:
            message: Human readable description.
            gap: Minimal value of z -> 1 + sum(...) - z over the search range.
        """
        super().__init__(f"{message} (minimal gap {gap:.3e})")
        self.gap = gap


class NonCritical(WeightError):
    """The offspring law does not have mean one."""

    def __init__(self, mean: float):
        """
        Args:
            mean: Measured mean of the face-degree offspring law.
        """
        super().__init__(f"weight sequence is not critical: mean={mean!r}")
        self.mean = mean


class ConvergenceFailure(WeightError):
    """A numerical root finder did not converge."""


class NegativeMass(WeightError):
    """The harmonicity recursion produced a negative probability."""

    def __init__(self, k: int, value: float):
        """
        Args:
            k: Index of the offending negative step -k.
            value: The computed value of nu(-k).
        """
        super().__init__(f"nu(-{k}) = {value:.3e} < 0")
        self.k = k
        self.value = value


class TailTooHeavy(WeightError):
    """Mass left beyond the negative cutoff exceeds the tolerance."""


class SamplingError(StableMapsError):
    """Failure of a random sampler."""


class SamplerStall(SamplingError):
    """A sampler exceeded its node or attempt cap."""

    def __init__(self, message: str, cap: int, attempts: Optional[int] = None):
        """
        Args:
            message: What was being sampled.
            cap: The cap that was exceeded.
            attempts: Number of attempts or nodes generated before giving up.
        """
        super().__init__(f"{message} (cap={cap}, attempts={attempts})")
        self.cap = cap
        self.attempts = attempts


class MapError(StableMapsError):
    """Failure while building or querying a planar map."""


class MalformedForest(MapError):
    """A labelled forest violates the bridge conditions."""


class TruncationTooShallow(MapError):
    """A corner that must be resolved has no successor in the truncation."""


class TrustRadiusExceeded(MapError):
    """A query reaches beyond the certified region of a truncated map."""


class ThresholdTooSmall(MapError):
    """The spine was chopped before the requested exit event."""


class ExplorationError(StableMapsError):
    """Failure during a peeling exploration."""


class CertificateExceeded(ExplorationError):
    """The exploration left the certified region of the host map."""


class PerimeterZero(ExplorationError, ValueError):
    """A transition row was requested for a zero half-perimeter."""


class EstimationError(StableMapsError):
    """Failure of an estimator."""


class InsufficientData(EstimationError):
    """Not enough grid points or replicates to estimate a slope."""
