"""Package-wide exception hierarchy.

Every contract violation raised by this package derives from StforgeError so
callers (notably the CLI) can distinguish validation failures from I/O
failures with a single except clause.
"""


class StforgeError(Exception):
    """Base class for all validation and contract errors in this package."""
