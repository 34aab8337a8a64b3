"""Exception hierarchy shared by the simulator modules."""


class QkdNcsError(Exception):
    """Base class for all simulator errors."""


class EmptyInputError(QkdNcsError, ValueError):
    pass


class QberAbortError(QkdNcsError):
    """Estimated QBER is above the abort threshold; the batch must be discarded."""

    def __init__(self, qber: float, threshold: float):
        super().__init__(f"estimated QBER {qber:.4f} exceeds abort threshold {threshold:.4f}")
        self.qber = qber
        self.threshold = threshold


class ReconciliationError(QkdNcsError):
    """Residual mismatch after the pass budget; keys are discarded."""

    def __init__(self, residual_errors: int, passes: int):
        super().__init__(f"{residual_errors} residual errors after {passes} passes")
        self.residual_errors = residual_errors
        self.passes = passes


class InsufficientKeyMaterial(QkdNcsError, ValueError):
    pass


class KeyUnderrunError(QkdNcsError):
    """Strict OTP policy: the pool ran dry."""

    def __init__(self, requested: int, available: int, clock: float | None = None):
        where = "" if clock is None else f" at t={clock:.4f}s"
        super().__init__(
            f"key pool underrun{where}: requested {requested} keys, {available} available"
        )
        self.requested = requested
        self.available = available
        self.clock = clock


class InvalidReuseError(QkdNcsError, ValueError):
    pass


class NoSecurityError(QkdNcsError, ValueError):
    pass


class FrameRangeError(QkdNcsError, ValueError):
    pass


class SingularInnovationError(QkdNcsError, ArithmeticError):
    pass


class ConfigError(QkdNcsError, ValueError):
    """Config text could not be parsed; carries 1-based line and column."""

    def __init__(self, message: str, line: int = 0, column: int = 0, source: str = "<config>"):
        self.line = line
        self.column = column
        self.source = source
        loc = f"{source}:{line}:{column}: " if line else f"{source}: "
        super().__init__(loc + message)
