"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad value, unknown key, or missing section."""


class ContractError(ValueError):
    """A call violated an operation's input contract."""


class DegenerateInputError(ValueError):
    """Input is structurally valid but degenerate (too short, zero-width, ...)."""


class CorpusFormatError(ValueError):
    """A corpus or mel file could not be parsed; message names the offender."""


class StatsError(ValueError):
    """A statistic is undefined for the given data (empty set, zero spread)."""


class TrainingError(RuntimeError):
    """Training failed; message carries the step index and first bad value."""


class CheckpointMismatchError(RuntimeError):
    """Checkpoint refused: config hash differs from the running config."""
