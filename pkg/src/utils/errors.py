"""
errors.py
Exception hierarchy shared by every stage of the pipeline.
"""
from typing import Optional


class FisherEmbedError(Exception):
    """Base class for all errors raised by this project"""


class ShapeError(FisherEmbedError, ValueError):
    """A tensor or vector had the wrong extent along some dimension"""

    def __init__(self, op: str, dim: str, expected, actual):
        self.op = op
        self.dim = dim
        self.expected = expected
        self.actual = actual
        super().__init__(f"{op}: dimension '{dim}' expected {expected}, got {actual}")


class NonFiniteError(FisherEmbedError, FloatingPointError):
    """NaN or Inf produced by an operation or found in a parameter block"""

    def __init__(self, where: str):
        self.where = where
        super().__init__(f"non-finite values produced by {where}")


class TapeError(FisherEmbedError, RuntimeError):
    """Misuse of a computation tape (double backward, non-scalar loss, ...)"""


class TrainingDivergedError(FisherEmbedError, RuntimeError):
    """Training loss became non-finite"""

    def __init__(self, what: str, epoch: int, step: int, last_loss: Optional[float]):
        self.epoch = epoch
        self.step = step
        self.last_loss = last_loss
        super().__init__(
            f"{what} diverged at epoch {epoch}, step {step} "
            f"(last finite loss: {last_loss}). Try a lower learning rate."
        )


class FormatError(FisherEmbedError, ValueError):
    """A binary file did not match its declared format"""

    def __init__(self, path, offset: int, reason: str):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{path}: {reason} (at byte offset {offset})")


class ConfigHashMismatchError(FisherEmbedError):
    """An artifact was produced by a different configuration than the current one"""

    def __init__(self, artifact, expected: str, found: str):
        self.artifact = str(artifact)
        self.expected = expected
        self.found = found
        super().__init__(
            f"{artifact} was produced with config hash {found[:12]}, "
            f"but the current configuration hashes to {expected[:12]}. "
            "Re-run the producing stage or restore the matching config."
        )


class MissingArtifactError(FisherEmbedError, FileNotFoundError):
    """A stage needs an upstream artifact that does not exist yet"""

    def __init__(self, artifact, command: str):
        self.artifact = str(artifact)
        self.command = command
        super().__init__(f"{artifact} not found. Run `fseb {command}` first to create it.")


class ConfigError(FisherEmbedError, ValueError):
    """Unknown key or unparsable value in an experiment configuration"""
