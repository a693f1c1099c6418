"""Exception types shared across the package.

Contract violations (bad shapes, broken preconditions) raise plain
``ValueError`` with a message naming the offending quantities.  The two
classes below exist so the CLI can map failures to distinct exit codes.
"""


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


class NumericalError(RuntimeError):
    """A computation produced non-finite values or failed a numerical check."""
