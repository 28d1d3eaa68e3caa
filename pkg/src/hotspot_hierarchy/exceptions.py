"""Exception types raised across the package.

Each exception carries the CLI exit code used when it escapes a subcommand.
"""


class HotspotError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class InputError(HotspotError, ValueError):
    """Malformed or invalid user input (files, coordinates, parameters)."""

    exit_code = 2


class InvalidCoordinateError(InputError):
    pass


class PreconditionError(HotspotError, ValueError):
    """An operation was called on inputs violating its contract."""

    exit_code = 3


class InsufficientTargetsError(PreconditionError):
    pass


class NoElbowError(PreconditionError):
    pass


class InconsistentInputError(PreconditionError):
    pass


class UndefinedRatioError(PreconditionError):
    pass


class InsufficientRoadCellsError(PreconditionError):
    pass


class ManifestMismatchError(PreconditionError):
    pass


class SimulationError(HotspotError, RuntimeError):
    """A cascade could not complete."""

    exit_code = 4


class ExhaustionError(SimulationError):
    def __init__(self, message, shortfall=0, picked=None):
        super().__init__(message)
        self.shortfall = shortfall
        self.picked = picked


class ZeroAttractionError(SimulationError):
    def __init__(self, message, picked=None):
        super().__init__(message)
        self.picked = picked
