"""Exception taxonomy shared across the toolkit.

Exit codes are part of the CLI contract: 2 config, 3 data, 4 solver.
"""


class PolicybootError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(PolicybootError):
    """Invalid configuration: bad flag values, malformed specs, missing seed."""

    exit_code = 2


class DataError(PolicybootError):
    """Invalid or unreadable data: missing files, bad cells, broken invariants."""

    exit_code = 3


class SolverError(PolicybootError):
    """Optimization failure: unsupported class, infeasible request."""

    exit_code = 4
