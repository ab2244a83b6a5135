"""Exception types raised across foolhd."""

from typing import Optional


class FoolHDError(Exception):
    """Base class for every error raised by foolhd."""


class ContractViolation(FoolHDError, ValueError):
    """A precondition of an operation does not hold."""


class DomainError(ContractViolation):
    """Input lies outside the mathematical domain of an operation."""


class ConfigError(ContractViolation):
    """The experiment configuration is invalid."""


class WavFormatError(FoolHDError, OSError):
    """A WAV file is malformed or uses an unsupported encoding."""


class StageError(FoolHDError, RuntimeError):
    """Failure inside one stage of an experiment run."""

    def __init__(self, stage: str, message: str, *, clip_id: Optional[str] = None):
        self.stage = stage
        self.clip_id = clip_id
        prefix = f"[{stage}]" if clip_id is None else f"[{stage}:{clip_id}]"
        super().__init__(f"{prefix} {message}")
