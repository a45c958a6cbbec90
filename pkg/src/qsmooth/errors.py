"""Exception types shared across the toolkit.

Plain ``ValueError`` is used for ordinary invalid arguments; the classes here
mark failure modes that callers may want to catch individually (and that the
CLI maps to distinct exit codes).
"""


class ConfigError(ValueError):
    """Configuration file is malformed; ``key_path`` names the offending key."""

    def __init__(self, key_path, message):
        self.key_path = key_path
        super().__init__(f"config error at {key_path}: {message}")


class InvalidGridError(ValueError):
    """Classical grid cannot represent the requested distribution."""


class UnsupportedScenarioError(ValueError):
    """Scenario falls outside the structure an algorithm requires."""


class TooLargeError(ValueError):
    """Discrete-oracle instance exceeds its enumeration size bounds."""


class ScenarioMismatchError(ValueError):
    """Record and scenario carry different fingerprints."""


class NumericalOverflowError(FloatingPointError):
    """A state component became non-finite; ``where`` names the component."""

    def __init__(self, where, message=""):
        self.where = where
        super().__init__(f"non-finite value in {where}" + (f": {message}" if message else ""))


class DegenerateRecordError(RuntimeError):
    """Conditional state trace underflowed during simulation (dt too large)."""


class DegenerateUpdateError(RuntimeError):
    """Measurement update drove the total field trace to zero."""


class DegenerateSmoothingError(RuntimeError):
    """Forward/backward overlap vanished (grid or truncation failure)."""


class NumericalInstabilityError(RuntimeError):
    """Covariance lost positive-definiteness beyond tolerance; reduce dt."""
