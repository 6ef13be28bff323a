"""Exception hierarchy shared across subpackages."""


class PartforgeError(Exception):
    """Base class for all package errors."""


class DegenerateGeometry(PartforgeError):
    pass


class GenerationFailed(PartforgeError):
    pass


class TooManyConnections(PartforgeError):
    pass


class SchemaVersionMismatch(PartforgeError):
    pass


class PlacementFailed(PartforgeError):
    pass


class InvalidQuery(PartforgeError):
    """Planner start or goal violates the validity predicate."""


class CapExceeded(PartforgeError):
    pass


class CapMismatch(PartforgeError):
    pass


class NoValidAction(PartforgeError):
    pass


class Diverged(PartforgeError):
    """Training loss became non-finite."""


class ConfigError(PartforgeError):
    pass
