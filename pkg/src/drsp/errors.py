"""Exception hierarchy shared by every drsp module."""


class DrspError(Exception):
    """Base class for all errors raised by drsp."""


class GeometryError(DrspError):
    pass


class FeasibilityError(GeometryError):
    """A point does not lie on its manifold to the working tolerance."""


class ShapeError(GeometryError):
    pass


class DegenerateRetractionError(GeometryError):
    pass


class ProjectionUndefinedError(GeometryError):
    """The metric projection onto the manifold is undefined (e.g. zero mean on a sphere).

    Raised when iterates have left the tube around the manifold in which the
    projection, and hence the induced arithmetic mean, is unique.
    """


class UnsupportedManifoldError(GeometryError):
    pass


class InvalidManifoldError(GeometryError, ValueError):
    """Manifold parameters violate their invariants (e.g. indefinite B)."""


class TopologyError(DrspError):
    pass


class InvariantViolation(DrspError):
    pass


class ParameterError(DrspError):
    pass


class NonconvergenceError(DrspError):
    pass


class ConfigError(DrspError):
    """Invalid run configuration; ``path`` names the offending field."""

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class AgentStepError(DrspError):
    """Wraps a failure inside one agent's update with its location."""

    def __init__(self, agent, iteration, cause):
        self.agent = agent
        self.iteration = iteration
        self.cause = cause
        super().__init__(f"agent {agent}, iteration {iteration}: {cause!r}")
