from typing import Any, Dict, Optional

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_ESTIMATION = 3


class MitaDMLError(Exception):
    """Base exception for all library errors."""

    exit_status: int = EXIT_ESTIMATION

    def __init__(
        self,
        message: str,
        details: Optional[Dict[str, Any]] = None,
        exit_status: Optional[int] = None,
    ):
        self.message = message
        self.details = details or {}
        if exit_status is not None:
            self.exit_status = exit_status
        super().__init__(self.message)

    @property
    def name(self) -> str:
        """Machine-readable error name."""
        return type(self).__name__

    def __str__(self) -> str:
        if self.details:
            detail = ", ".join(f"{k}={v}" for k, v in self.details.items())
            return f"{self.message} ({detail})"
        return self.message


class InputError(MitaDMLError):
    """Raised when input data or configuration cannot be used."""

    exit_status = EXIT_INPUT


class MissingColumn(InputError):
    """Raised when a required column is absent from the input header."""

    def __init__(self, column: str, header: Optional[str] = None, **kwargs: Any):
        self.column = column
        self.header = header or column
        super().__init__(
            f"Missing required column: {column}", {"header": self.header}, **kwargs
        )


class ParseError(InputError):
    """Raised when a cell cannot be parsed into its schema type."""

    def __init__(self, message: str, row: int, column: int, **kwargs: Any):
        self.row = row
        self.column = column
        super().__init__(message, {"row": row, "column": column}, **kwargs)


class EmptyInput(InputError):
    """Raised when the input has no data rows."""

    def __init__(self, message: str = "Input contains no data rows", **kwargs: Any):
        super().__init__(message, **kwargs)


class NotEnoughRows(InputError):
    """Raised when a statistic needs more rows than are available."""

    pass


class ConfigError(InputError):
    """Raised when a configuration document fails validation."""

    pass


class EstimationError(MitaDMLError):
    """Base class for failures while fitting or estimating."""

    exit_status = EXIT_ESTIMATION


class SingularDesign(EstimationError):
    """Raised when a design matrix is rank-deficient."""

    pass


class ConstantTreatment(EstimationError):
    """Raised when the treatment vector has no contrast."""

    def __init__(self, message: str = "Treatment is constant", **kwargs: Any):
        super().__init__(message, **kwargs)


class EmptyDesign(EstimationError):
    """Raised when no rows remain after band restriction."""

    pass


class SeparationDetected(EstimationError):
    """Raised when an unpenalized logistic fit diverges under perfect separation."""

    pass


class NonFiniteLoss(EstimationError):
    """Raised when network training diverges."""

    def __init__(self, epoch: int, **kwargs: Any):
        self.epoch = epoch
        super().__init__(f"Loss became non-finite at epoch {epoch}", {"epoch": epoch}, **kwargs)


class DimensionMismatch(EstimationError):
    """Raised when prediction input does not match the fitted feature dimension."""

    pass


class TooFewClusters(EstimationError):
    """Raised when cluster-robust inference has fewer than two clusters."""

    pass


class BadFoldCount(EstimationError):
    """Raised when the fold count is outside [2, n]."""

    pass


class DegenerateResiduals(EstimationError):
    """Raised when the residualized treatment has no variation."""

    pass


class FoldImbalance(EstimationError):
    """Raised when a training fold lacks one of the treatment states."""

    pass


class OverlapFailure(EstimationError):
    """Raised when too many propensities had to be clipped."""

    pass


class ZeroJacobian(EstimationError):
    """Raised when the score Jacobian is zero."""

    pass


class CalibrationFailure(EstimationError):
    """Raised when the treatment intercept cannot be bracketed."""

    pass


class McUnstable(EstimationError):
    """Raised when too many Monte Carlo replications fail."""

    def __init__(self, message: str, failures: Optional[Dict[int, str]] = None, **kwargs: Any):
        self.failures = failures or {}
        super().__init__(message, {"failed_reps": len(self.failures)}, **kwargs)


class BatchError(MitaDMLError):
    """Raised when one or more tasks of a batch fail."""

    def __init__(
        self,
        message: str,
        batch_results: Optional[Dict[str, Any]] = None,
        **kwargs: Any,
    ):
        self.batch_results = batch_results
        super().__init__(message, **kwargs)


def exit_status_for(exc: BaseException) -> int:
    """
    Map an exception to the command-line exit status contract.

    Args:
        exc: The exception raised by a command

    Returns:
        2 for input and configuration errors, 3 for estimation failures

    Raises:
        BaseException: The original exception when it is not a library error
    """
    if isinstance(exc, BatchError) and exc.batch_results:
        for value in exc.batch_results.values():
            if isinstance(value, BaseException):
                return exit_status_for(value)
    if isinstance(exc, MitaDMLError):
        return exc.exit_status
    raise exc
