"""Exception hierarchy shared by all rodlab modules."""


class RodlabError(Exception):
    """Base class for all rodlab errors."""


class InvalidParameterError(RodlabError, ValueError):
    """A model parameter violates its documented range."""


class UnsupportedDimensionError(RodlabError, ValueError):
    """Operation requires a spatial dimension it was not given (usually d = 2)."""


class InvalidStateError(RodlabError, ValueError):
    """A tensor or coordinate state violates a structural invariant."""


class RegimeError(RodlabError, ValueError):
    """Parameters fall outside the cycle regime an operation requires."""


class InvalidSlackError(RodlabError, ValueError):
    """Annulus slack parameters out of their admissible open intervals."""


class SingularityError(RodlabError, ValueError):
    """Evaluation at a singular point of the polar vector field (r = 0)."""


class DegenerateEnsembleError(RodlabError, ValueError):
    """Ensemble collapsed to a state where mean-field terms are undefined."""


class NumericalStateError(RodlabError, RuntimeError):
    """A numerical routine produced or received an unusable state
    (factorization failure, loss of positive definiteness, ...)."""


class IntegrationFailureError(RodlabError, RuntimeError):
    """Time integration could not proceed; carries the last good state."""

    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state


class NoReturnError(RodlabError, RuntimeError):
    """Trajectory failed to return to the Poincare section within budget."""


class ConvergenceError(RodlabError, RuntimeError):
    """Iterative search failed to converge; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class FitError(RodlabError, ValueError):
    """Not enough valid data points for a requested fit."""


class ScenarioError(RodlabError, ValueError):
    """Scenario document failed to parse or validate; message carries location."""
