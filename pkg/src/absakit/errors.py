"""Exception types shared across the toolkit."""

from __future__ import annotations


class AbsaKitError(Exception):
    """Base class for all toolkit errors."""


class ArgumentError(AbsaKitError, ValueError):
    """A caller-supplied argument violates a documented precondition."""


class FormatError(AbsaKitError):
    """An input file failed to parse. Carries a locator (file:line or element id)."""

    def __init__(self, message: str, locator: str | None = None):
        super().__init__(message if locator is None else f"{locator}: {message}")
        self.locator = locator


class ConfigError(AbsaKitError):
    """Invalid or inconsistent configuration (unknown keys, bad backend spec, ...)."""


class TokenizationError(AbsaKitError):
    """The tokenizer cannot segment a word."""

    def __init__(self, word: str, reason: str):
        super().__init__(f"cannot tokenize {word!r}: {reason}")
        self.word = word


class TruncationError(AbsaKitError):
    """Length budget would cut the aspect (or its markers) out of the input."""


class UnscoreableError(AbsaKitError):
    """A gold opinion span was truncated away; the instance cannot be scored."""


class EncodingError(AbsaKitError):
    """The encoder received ids outside its vocabulary or produced non-finite values."""


class ContractViolation(AbsaKitError):
    """An internal shape/index contract between components was violated."""


class TrainingDiverged(AbsaKitError):
    """Loss became non-finite during optimization."""

    def __init__(self, epoch: int, batch_index: int, loss_value: float):
        super().__init__(
            f"non-finite loss {loss_value!r} at epoch {epoch}, batch {batch_index}"
        )
        self.epoch = epoch
        self.batch_index = batch_index


class UnsupportedOperationError(AbsaKitError):
    """The selected backend cannot perform the requested operation."""


class StrategySkip(AbsaKitError):
    """An adversarial generation strategy does not apply to this instance."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason
