"""Exception hierarchy.

Every error raised by the library derives from :class:`PeriodLatticeError` so
callers (and the CLI) can catch library failures without masking bugs.
"""


class PeriodLatticeError(Exception):
    """Base class for all library errors."""


# systems / flow
class UnknownSystem(PeriodLatticeError, KeyError):
    pass


class InvalidParameters(PeriodLatticeError, ValueError):
    pass


class StepFailure(PeriodLatticeError):
    """Adaptive step size underflowed or the step budget ran out."""


class LeftRegularDomain(PeriodLatticeError):
    pass


class NewtonDiverged(PeriodLatticeError):
    pass


class NearCriticalValue(PeriodLatticeError):
    pass


# lattice
class NoReturnFound(PeriodLatticeError):
    pass


class DegenerateCandidates(PeriodLatticeError):
    pass


class StepBisectionExhausted(PeriodLatticeError):
    pass


class NonIntegerMonodromy(PeriodLatticeError):
    pass


class NonUnimodular(PeriodLatticeError):
    pass


# maslov
class NotLagrangian(PeriodLatticeError):
    pass


class DependentGenerators(PeriodLatticeError):
    pass


class PhaseStepTooLarge(PeriodLatticeError):
    pass


class CycleNotClosed(PeriodLatticeError):
    pass


# latalg
class RankDeficientRho(PeriodLatticeError):
    pass


class ZeroSection(PeriodLatticeError, ValueError):
    pass


class NotPrimitive(PeriodLatticeError, ValueError):
    pass


class ClosureFailed(PeriodLatticeError):
    pass


class NotFree(PeriodLatticeError):
    pass


class IdentificationMismatch(PeriodLatticeError):
    pass


# cli
class ConfigInvalid(PeriodLatticeError, ValueError):
    pass


class IoFailure(PeriodLatticeError, OSError):
    pass
