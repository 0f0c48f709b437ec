"""
Exception hierarchy for the enhancement toolkit.

Every error carries the process exit code the command line reports for it,
so library code can raise precise errors and only the entry point has to
translate them.
"""


class RgtError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def one_line(self) -> str:
        """Machine-parsable single-line rendering for stderr."""
        text = self.message.replace("\n", " ").replace('"', "'")
        return f'error code={self.exit_code} kind={type(self).__name__} message="{text}"'


class ConfigError(RgtError):
    """Invalid, unknown or inconsistent configuration."""

    exit_code = 2


class StrategyMismatchError(ConfigError, ValueError):
    """Weights or components used with a decomposition strategy they were not built for."""


class DataError(RgtError):
    """Problems with input images or datasets."""

    exit_code = 3


class ImageRangeError(DataError, ValueError):
    """Pixel values that are non-finite or outside [0, 1]."""


class ShapeMismatchError(DataError, ValueError):
    """Tensors that should be aligned but are not."""


class NumericalError(RgtError):
    """Non-finite activations, logits or losses."""

    exit_code = 4


class NumericalAbort(NumericalError):
    """Training stopped because the loss became non-finite."""

    def __init__(self, step: int, terms: dict):
        self.step = step
        self.terms = dict(terms)
        breakdown = ", ".join(f"{name}={value}" for name, value in self.terms.items())
        super().__init__(f"non-finite loss at step {step} ({breakdown})")


class FreezeViolation(NumericalError):
    """Weights that were declared frozen changed."""


class ArtifactError(RgtError):
    """Missing, unreadable or unwritable files and checkpoints."""

    exit_code = 5
