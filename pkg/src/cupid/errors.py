"""Exception hierarchy shared by all cupid modules.

Each class carries a short machine-readable ``category`` used by the CLI
when emitting single-line error reports.
"""


class CupidError(Exception):
    category = "error"


class FormatError(CupidError):
    """Malformed container bytes: bad magic, bad version, truncated record."""

    category = "format"


class SchemaError(CupidError):
    """Structurally valid data that violates a declared schema (e.g. dim mismatch)."""

    category = "schema"


class DataError(CupidError):
    """Well-formed record whose values violate an invariant (empty video, NaN)."""

    category = "data"


class NotFoundError(CupidError):
    category = "not-found"


class ArgumentError(CupidError):
    """Caller passed an argument outside the documented domain."""

    category = "argument"


class CapacityError(CupidError):
    """Request exceeds a configured size or memory budget."""

    category = "capacity"


class UsageError(CupidError):
    """CLI-level validation failure; maps to a distinct exit code."""

    category = "usage"
