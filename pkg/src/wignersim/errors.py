"""Exception hierarchy shared by every wignersim module."""

from __future__ import annotations

from dataclasses import dataclass


class WignerSimError(Exception):
    """Base class for all errors raised by this package."""


# -- state-vector engine -----------------------------------------------------


class LayoutError(WignerSimError, ValueError):
    """A register layout violates its naming or dimension rules."""


class UnknownRegister(WignerSimError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class MissingRegister(WignerSimError, ValueError):
    pass


class ValueOutOfRange(WignerSimError, ValueError):
    pass


class DimensionMismatch(WignerSimError, ValueError):
    pass


class NonUnitaryMatrix(WignerSimError, ValueError):
    pass


class SystemTooLarge(WignerSimError, ValueError):
    pass


class SystemTooLargeForOracle(SystemTooLarge):
    pass


class SystemTooLargeForTrace(SystemTooLarge):
    pass


class DegenerateState(WignerSimError, ArithmeticError):
    pass


class LayoutMismatch(WignerSimError, ValueError):
    pass


class InvalidPartition(WignerSimError, ValueError):
    pass


# -- protocol IR ---------------------------------------------------------------


class ValidationError(WignerSimError, ValueError):
    """A protocol failed validation.

    ``code`` is a stable machine-readable reason (``"UnknownRegister"``,
    ``"NonPermutation"``, ...). ``step`` is the 1-based step index, or None
    when the problem is in the header, layout or init line.
    """

    def __init__(self, code: str, message: str, step: int | None = None, span=None):
        self.code = code
        self.message = message
        self.step = step
        self.span = span
        where = f"step {step}: " if step is not None else ""
        super().__init__(f"{where}{code}: {message}")


class NotInvertible(WignerSimError, ValueError):
    pass


class UnknownBuiltin(WignerSimError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


# -- engine ------------------------------------------------------------------------


class EngineError(WignerSimError, RuntimeError):
    """Raised when a run violates a runtime assertion."""

    def __init__(self, message: str, step: int | None = None, trial: int | None = None):
        self.message = message
        self.step = step
        self.trial = trial
        super().__init__(self._render())

    def _render(self) -> str:
        parts = []
        if self.trial is not None:
            parts.append(f"trial {self.trial}")
        if self.step is not None:
            parts.append(f"step {self.step}")
        prefix = ", ".join(parts)
        return f"{prefix}: {self.message}" if prefix else self.message

    def with_trial(self, trial: int) -> "EngineError":
        err = type(self)(self.message, step=self.step, trial=trial)
        return err


class FactorizationAssertFailed(EngineError):
    pass


class EngineAssert(EngineError):
    pass


# -- text format -------------------------------------------------------------


@dataclass(frozen=True)
class SourceSpan:
    line: int
    column: int
    offset: int

    def __str__(self) -> str:
        return f"{self.line}:{self.column}"


class ParseError(WignerSimError, ValueError):
    def __init__(self, message: str, span: SourceSpan):
        self.message = message
        self.span = span
        super().__init__(f"{span}: {message}")


# -- statistics --------------------------------------------------------------


class InvalidCounts(WignerSimError, ValueError):
    pass


class InvalidThreshold(WignerSimError, ValueError):
    pass
