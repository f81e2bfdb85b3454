"""
Exception hierarchy for the IFM lab.

Every error raised on purpose by the library derives from IFMLabError, so that
management commands and the sweep runner can catch one base class. Errors that
signal bad input also derive from ValueError.
"""


class IFMLabError(Exception):
    """Base class for all lab errors"""


class InvalidParameter(IFMLabError, ValueError):
    """A scalar parameter is outside its allowed range"""


class DimensionMismatch(IFMLabError, ValueError):
    """Array shapes do not agree with the model dimensions"""


class NotSPD(IFMLabError, ValueError):
    """Matrix is not symmetric positive (semi-)definite"""


class NotSymmetric(IFMLabError, ValueError):
    """Matrix is not symmetric"""


class RankDeficient(IFMLabError, ValueError):
    """The invariant block of the mixing matrix has rank below r"""


class BoundViolation(IFMLabError, ValueError):
    """Spurious covariance bias exceeds the norm bound D"""


class AlreadyFlipped(IFMLabError, ValueError):
    """Environment already is a flipped test environment"""


class CorruptedEnvironment(IFMLabError):
    """Realized covariance lost positive definiteness"""


class EmptyDataset(IFMLabError, ValueError):
    pass


class MissingClass(IFMLabError, ValueError):
    """Dataset lacks samples of one label"""


class TooFewEnvironments(IFMLabError, ValueError):
    pass


class InfeasibleFloor(IFMLabError):
    """No projection of the floor dimension matches within tolerance"""


class EnvironmentsExhausted(IFMLabError):
    """Partition groups ran out before IFM reached the invariant dimension"""


class Divergence(IFMLabError):
    """Training loss kept increasing for a whole patience window"""


class IncompatibleWidths(IFMLabError, ValueError):
    pass


class DegenerateDifference(IFMLabError):
    """Covariance difference has rank below the spurious dimension"""


class DegeneratePredictor(IFMLabError):
    """Learner produced a zero vector that cannot be unit-normalized"""


class TheoremNotApplicable(IFMLabError):
    """Inputs violate the hypotheses of the theorem being checked"""


class NoChecksSelected(IFMLabError, ValueError):
    pass


class EmptyResults(IFMLabError, ValueError):
    pass
