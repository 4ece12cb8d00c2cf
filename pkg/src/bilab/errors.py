"""Exception hierarchy shared by all bilab modules."""


class BilabError(Exception):
    """Base class for every error raised on purpose by bilab."""


class GridError(BilabError, ValueError):
    """Invalid grid or field shape."""


class FieldFormatError(BilabError, ValueError):
    """A field file could not be parsed or does not fit the requested grid."""


class NonlinearityError(BilabError, ValueError):
    """Unknown kind, bad parameters or a non-finite evaluation of Q."""


class SingularOperatorError(BilabError, RuntimeError):
    """The assembled Navier system cannot be factorized."""


class ContractionError(BilabError, RuntimeError):
    """A fixed-point iteration left its ball or ran out of iterations."""


class NewtonError(BilabError, RuntimeError):
    """Newton iteration failed to converge."""


class PreconditionError(BilabError, ValueError):
    """An operation was called outside of its admissible inputs."""


class ProjectionError(BilabError, RuntimeError):
    """The least-squares system of the projection onto Z is rank deficient."""


class NotInRangeError(PreconditionError):
    """A field handed to the inverse on Z is not in Z."""


class RankDeficientError(BilabError, RuntimeError):
    """A constraint or design matrix does not have full rank."""


class ConfigError(BilabError, ValueError):
    """Invalid experiment configuration."""


class SolveError(BilabError, RuntimeError):
    """A direct solve returned a solution with a residual above tolerance."""
