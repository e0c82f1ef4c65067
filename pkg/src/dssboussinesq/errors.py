"""Exception hierarchy shared by all modules.

Each error class carries the CLI exit code it maps to.
"""


class DSSError(Exception):
    exit_code = 1


class DomainError(DSSError, ValueError):
    """Evaluation requested outside the domain of a field (e.g. the origin)."""

    exit_code = 2


class LookupFieldError(DSSError, KeyError):
    exit_code = 2

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown field"


class ParameterError(DSSError, ValueError):
    exit_code = 2


class ConfigError(DSSError, ValueError):
    """Schema violation in a run configuration; ``path`` names the offending key."""

    exit_code = 2

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class GeometryError(DSSError, ValueError):
    exit_code = 2


class UsageError(DSSError, ValueError):
    exit_code = 2


class ConvergenceError(DSSError, RuntimeError):
    """Iteration budget exhausted; ``achieved`` holds the best value reached."""

    exit_code = 3

    def __init__(self, message, achieved=None, best=None, history=None):
        super().__init__(message)
        self.achieved = achieved
        self.best = best
        self.history = history or []


class DivergenceError(DSSError, FloatingPointError):
    """Non-finite state during time integration; ``ledger`` is attached."""

    exit_code = 3

    def __init__(self, message, ledger=None):
        super().__init__(message)
        self.ledger = ledger


class InvariantError(DSSError, AssertionError):
    exit_code = 4


class IntegrityError(DSSError):
    exit_code = 5


class BoxMismatchError(DSSError, ValueError):
    exit_code = 2
