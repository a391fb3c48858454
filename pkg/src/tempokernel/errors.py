"""Exception types shared across the package.

Every error raised by library code derives from :class:`TempoKernelError`,
so callers (and the CLI) can distinguish validation problems from genuine
check failures.
"""


class TempoKernelError(Exception):
    """Base class for all package errors."""


# --- graph / schedule construction -------------------------------------------

class EmptyGraph(TempoKernelError):
    pass


class DisconnectedGraph(TempoKernelError):
    pass


class ParameterOutOfRange(TempoKernelError):
    pass


class NotMonotone(TempoKernelError):
    pass


class UnboundedPerturbation(TempoKernelError):
    pass


# --- kernels -----------------------------------------------------------------

class TimeOutOfRange(TempoKernelError):
    pass


class OdeNotConverged(TempoKernelError):
    pass


class StochasticityDrift(TempoKernelError):
    pass


class BoundaryTouched(TempoKernelError):
    pass


class DegenerateMeasure(TempoKernelError):
    pass


class UnsupportedExponentPair(TempoKernelError):
    pass


class WeightOverflow(TempoKernelError):
    pass


# --- geometry ----------------------------------------------------------------

class RadiusExceedsGuard(TempoKernelError):
    pass


class SingularEnergyForm(TempoKernelError):
    pass


# --- profiles ----------------------------------------------------------------

class ExactModeTooLarge(TempoKernelError):
    pass


# --- nash bounds -------------------------------------------------------------

class IntegrandNotFinite(TempoKernelError):
    pass


class TargetUnreachable(TempoKernelError):
    pass


class RegularityFailed(TempoKernelError):
    pass


class GammaConditionFailed(TempoKernelError):
    pass


class HypothesisViolated(TempoKernelError):
    pass


# --- heat checks -------------------------------------------------------------

class NegativeBoundaryData(TempoKernelError):
    pass


class CylinderExceedsGraph(TempoKernelError):
    pass


class EmptyFamily(TempoKernelError):
    pass


class NotASubsolution(TempoKernelError):
    pass


class SeriesTruncationFailed(TempoKernelError):
    pass


class InfeasibleLowerEnvelope(TempoKernelError):
    """Raised when no finite constant makes the Gaussian lower envelope hold.

    This is the designed failure signal for schedules on which the two-sided
    Gaussian bound genuinely breaks down.
    """


# --- experiments -------------------------------------------------------------

class TruncationGuard(TempoKernelError):
    pass


class MonotonizationFailed(TempoKernelError):
    pass


class ConfigError(TempoKernelError):
    pass
