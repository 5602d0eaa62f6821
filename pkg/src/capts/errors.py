"""Exception classes shared across the pipeline.

The CLI maps these onto distinct exit codes: config errors -> 2,
I/O and format errors -> 3, numerical failures -> 4.
"""


class CaptsError(Exception):
    """Base class for all package errors."""


class ConfigError(CaptsError):
    """Invalid or inconsistent configuration."""


class DataFormatError(CaptsError):
    """A data file does not match its declared format."""


class ReplayUnavailableError(CaptsError):
    """No index snapshot satisfies the rollback rule for a request time."""

    def __init__(self, channel: str, tau0: float, delta: float):
        self.channel = channel
        self.tau0 = tau0
        self.delta = delta
        super().__init__(
            f"no {channel} snapshot with as_of <= {tau0 - delta:.0f} "
            f"(tau0={tau0:.0f}, delta={delta:.0f})"
        )


class NumericalError(CaptsError):
    """Training or evaluation produced non-finite values."""
