"""Exception types raised across the package."""


class VerifierError(Exception):
    pass


class GraphParseError(VerifierError, ValueError):
    """A graph file could not be parsed; the message carries the line number."""


class GraphIntegrityError(VerifierError, ValueError):
    """Graph data is inconsistent (dangling edge, self-loop, dimension mismatch)."""


class NumericError(VerifierError, FloatingPointError):
    pass


class StrategyError(VerifierError):
    pass


class RegistryError(VerifierError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class SnapshotMismatchError(VerifierError):
    """Two snapshots being compared were not produced by the same run."""


class PlanError(VerifierError, ValueError):
    pass
