"""Exception and warning classes used across the package."""


class InvalidInputError(ValueError):
    """Input arrays or parameters violate an operation's preconditions."""


class DegenerateOutputError(ValueError):
    """An operation would produce an empty or otherwise unusable result."""


class DegenerateComponentError(RuntimeError):
    """A mixture component lost (almost) all of its responsibility mass."""


class EstimationFailedError(RuntimeError):
    """Every attempt of an estimator failed.

    Parameters
    ----------
    message : str
        Human readable summary.
    diagnostics : list of str, optional
        One entry per failed attempt.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])


class DegenerateCurveWarning(UserWarning):
    """The likelihood curve has no detectable elbow."""


class ConvergenceWarning(UserWarning):
    """An iterative solver stopped before meeting its tolerance."""
