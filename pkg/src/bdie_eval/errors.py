"""Exception hierarchy shared across the package."""

from __future__ import annotations


class BdieError(Exception):
    """Base class for all errors raised by bdie_eval."""


class InputError(BdieError, ValueError):
    """Bad user-supplied data. The CLI maps these to exit code 2."""


class MalformedInput(InputError):
    pass


class GeometryError(InputError):
    pass


class DuplicateReadingOrder(InputError):
    pass


class EmptyCell(InputError):
    pass


class MissingValue(BdieError):
    pass


class MissingBBox(BdieError):
    pass


class InvalidBeta(InputError):
    pass


class InvalidBand(InputError):
    pass


class EmptyTable(InputError):
    pass


class EmptyImage(InputError):
    pass


class LengthMismatch(InputError):
    pass


class EmptyIndex(InputError):
    pass


class MalformedSchema(InputError):
    pass


class NameCollision(InputError):
    pass
