"""Exception taxonomy for the simulation package.

Every error raised on purpose by this package derives from RouteGridError so
callers can catch the whole family at once. The CLI maps subfamilies to exit
codes: usage/validation problems exit 1, data corruption exits 2.
"""


class RouteGridError(Exception):
    """Base class for all package errors."""


class InvalidCoordinate(RouteGridError):
    """Non-finite or otherwise unusable world coordinate."""


class NotOnRoute(RouteGridError):
    """Route exists but has no segment at the requested place."""


class NoSuchPoint(RouteGridError):
    """No registered point at the given grid coordinate."""


class AmbiguousPoint(RouteGridError):
    """Point is shared by several routes and no route id was given."""


class IllegalOverlap(RouteGridError):
    """Two routes share a longer run of consecutive points than allowed."""


class DuplicateRoute(RouteGridError):
    """Route id registered twice in one world."""


class InvalidKinematics(RouteGridError):
    """Negative speed, distance, or horizon fed to the car-following rule."""


class CorruptState(RouteGridError):
    """Engine occupancy bookkeeping no longer matches vehicle state."""


class NoSuchRoute(RouteGridError):
    """Spawn or lookup against a route id that is not in the world."""


class NoSuchVehicle(RouteGridError):
    """Vehicle id unknown to the engine or frame."""


class ParseError(RouteGridError):
    """Scenario file is not valid JSON. Carries line/column when known."""

    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class SchemaError(RouteGridError):
    """Scenario JSON has a missing, unknown, or wrongly-typed field."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ValidationError(RouteGridError):
    """Scenario is well-formed JSON but semantically invalid."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class RecordError(RouteGridError):
    """Trace recording I/O failed; the simulation itself may continue."""


class CorruptTrace(RouteGridError):
    """Trace file failed checksum, framing, or footer validation."""


class RenderError(RouteGridError):
    """Rendering was asked for something the trace or world cannot supply."""
