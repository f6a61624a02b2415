"""Exception hierarchy shared by the library and the CLI."""


class PhiError(Exception):
    """Base class for every error raised by causalphi."""


class InvalidArgumentError(PhiError, ValueError):
    pass


class SpaceMismatchError(InvalidArgumentError):
    pass


class DistributionFormatError(InvalidArgumentError):
    """Malformed or non-normalized distribution text."""


class GraphError(InvalidArgumentError):
    """Graph violates the chain (mixed) graph conditions."""


class ZeroMarginalError(PhiError, ZeroDivisionError):
    pass


class ConfigError(PhiError):
    """Invalid experiment configuration (CLI exit code 2)."""


class NonConvergenceError(PhiError):
    """Raised by the CLI in strict mode when a solver did not converge (exit code 3)."""

    def __init__(self, measure: str, detail: str = ""):
        self.measure = measure
        super().__init__(f"{measure} did not converge" + (f": {detail}" if detail else ""))
