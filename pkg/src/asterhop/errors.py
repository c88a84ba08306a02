"""Exception hierarchy shared across the package."""


class AsterhopError(Exception):
    """Base class for all package errors."""


class ConfigError(AsterhopError, ValueError):
    """Scenario or configuration is invalid."""


class MeshError(AsterhopError, ValueError):
    """Shape model could not be loaded or failed validation."""


class SingularEvaluation(AsterhopError, ArithmeticError):
    """Field point lies on (or too close to) a mesh edge or vertex."""


class SingularSTM(AsterhopError, ArithmeticError):
    """Position/velocity sensitivity matrix is numerically singular."""


class NonConvergence(AsterhopError):
    """An iterative solver hit its iteration cap.

    The best iterate found so far is available as ``result``.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class DegenerateGeometry(AsterhopError, ValueError):
    """Point sets are collinear or coincident."""


class GoalUnreached(AsterhopError):
    """The random tree never came within one hop of the goal."""


class CoincidentRovers(AsterhopError, ValueError):
    """Two rovers occupy (numerically) the same position."""
