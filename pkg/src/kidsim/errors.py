"""Exception types raised by the component models."""


class KidSimError(Exception):
    """Base class for simulator errors."""


class FrequencyRangeError(KidSimError, ValueError):
    """A tone or cutoff lies outside the representable band."""


class NyquistError(KidSimError, ValueError):
    """A stage would alias content for the given sample rate."""


class ClippingError(KidSimError):
    """A code fell outside the converter input range.

    Carries the first offending sample so callers (and the CLI) can
    report it.
    """

    def __init__(self, index, value, limit, stage="dac"):
        self.index = int(index)
        self.value = float(value)
        self.limit = int(limit)
        self.stage = stage
        super().__init__(
            f"{stage}: code {self.value:g} at sample {self.index} exceeds "
            f"the input range +/-{self.limit}"
        )

    def as_dict(self):
        return {"index": self.index, "value": self.value, "limit": self.limit}


class FitError(KidSimError, ValueError):
    """Parameter fitting failed (missing line, infeasible or ambiguous table)."""


class ConfigError(KidSimError, ValueError):
    """Configuration document violates the schema."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")
