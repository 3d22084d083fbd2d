"""Exception types shared across the package.

Every error this package raises deliberately derives from
:class:`TransportError`, so callers (and the bootstrap, which drops failed
replicates) can distinguish analysis failures from programming bugs.
"""


class TransportError(Exception):
    """Base class for all errors raised by transport_meta."""


# --- dataset ingestion ---------------------------------------------------

class MissingColumn(TransportError):
    pass


class NonNumericValue(TransportError):
    pass


class TargetRowHasOutcome(TransportError):
    pass


class TrialRowMissingOutcome(TransportError):
    pass


class EmptyStratum(TransportError):
    pass


class UnknownStratum(TransportError):
    pass


# --- working models ------------------------------------------------------

class Singular(TransportError):
    """Design matrix is rank deficient; message names the offending columns."""


class Separation(TransportError):
    """A logistic fit is diverging (fitted probabilities collapsing to 0/1)."""


class NotConverged(TransportError):
    pass


class InsufficientRows(TransportError):
    pass


class DimensionMismatch(TransportError):
    pass


class UnknownCategory(TransportError):
    pass


# --- estimators ----------------------------------------------------------

class ArmMissing(TransportError):
    pass


class TrialLacksArm(TransportError):
    pass


class ProbabilityOutOfRange(TransportError):
    pass


class EmptyAdherenceCell(TransportError):
    pass


class TrialMismatch(TransportError):
    pass


class InsufficientTrials(TransportError):
    pass


# --- inference -----------------------------------------------------------

class SingularBread(TransportError):
    pass


class UnsolvedStack(TransportError):
    """Stacked estimating equations do not sum to ~0 at the fitted values."""


class TooManyFailures(TransportError):
    pass


# --- oracle / simulation -------------------------------------------------

class EmptyCell(TransportError):
    pass


class InvalidWorld(TransportError):
    pass


# --- command line --------------------------------------------------------

class ConfigError(TransportError):
    pass


class EmptyResults(TransportError):
    pass
