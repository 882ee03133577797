"""
🎓 Centralized Error Handling

Every failure the pipeline can report derives from `AppException` and
carries a stable machine-readable `error_code`. The CLI turns exceptions
into error records (written to metrics.json) and exit codes; the pipeline
uses the same records for keyframes it had to skip.
"""

from typing import Any, Dict, Optional, Tuple, Type

import numpy as np
import pydantic
import sentry_sdk

from msfusion.core.logging_config import get_logger

logger = get_logger(__name__)


# ============================================================================
# EXIT CODES
# ============================================================================

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INPUT_INVALID = 2
EXIT_NUMERICAL = 3
EXIT_NOT_FOUND = 4


# ============================================================================
# 🎓 CUSTOM EXCEPTION BASE CLASSES
# ============================================================================


class AppException(Exception):
    """
    🎓 Base exception class for all application-specific errors.

    Attributes:
        message: human-readable description
        error_code: machine-readable identifier, stable across releases
        exit_code: process exit code when the error ends a CLI command
        details: extra JSON-serialisable context
    """

    def __init__(
        self,
        message: str,
        error_code: str = "APP_ERROR",
        exit_code: int = EXIT_UNEXPECTED,
        details: Optional[Dict[str, Any]] = None,
    ):
        self.message = message
        self.error_code = error_code
        self.exit_code = exit_code
        self.details = details or {}
        super().__init__(self.message)


class InputValidationError(AppException):
    """
    Base class for malformed or inconsistent inputs: bad files, bad configs,
    arguments violating an operation's preconditions.
    """

    def __init__(
        self, message: str, error_code: str = "INPUT_VALIDATION_ERROR", **kwargs
    ):
        super().__init__(
            message=message,
            error_code=error_code,
            exit_code=EXIT_INPUT_INVALID,
            **kwargs,
        )


class NumericalError(AppException):
    """
    Base class for failures of a numerical procedure on valid input
    (rank deficiency, divergence, insufficient overlap).
    """

    def __init__(self, message: str, error_code: str = "NUMERICAL_ERROR", **kwargs):
        super().__init__(
            message=message,
            error_code=error_code,
            exit_code=EXIT_NUMERICAL,
            **kwargs,
        )


class NotFoundError(AppException):
    """Base class for missing files or resources."""

    def __init__(self, message: str, error_code: str = "RESOURCE_NOT_FOUND", **kwargs):
        super().__init__(
            message=message,
            error_code=error_code,
            exit_code=EXIT_NOT_FOUND,
            **kwargs,
        )


# ============================================================================
# 🎓 FOREIGN EXCEPTION MAPPING
# ============================================================================

# Exceptions raised by libraries, mapped onto the hierarchy
FOREIGN_EXCEPTION_MAP: Dict[Type[BaseException], Tuple[Type[AppException], str]] = {
    np.linalg.LinAlgError: (NumericalError, "LINALG_ERROR"),
    pydantic.ValidationError: (InputValidationError, "CONFIG_VALIDATION_ERROR"),
    FileNotFoundError: (NotFoundError, "FILE_NOT_FOUND"),
    ValueError: (InputValidationError, "VALUE_ERROR"),
}


def map_exception(exc: BaseException) -> AppException:
    """
    🎓 Map any exception to an AppException.

    AppExceptions are returned unchanged; known library exceptions are
    wrapped with their mapped code; anything else becomes an unexpected
    error.
    """
    if isinstance(exc, AppException):
        return exc

    for exc_type, (exception_class, error_code) in FOREIGN_EXCEPTION_MAP.items():
        if isinstance(exc, exc_type):
            return exception_class(message=str(exc), error_code=error_code)

    return AppException(
        message=str(exc) or exc.__class__.__name__,
        error_code="UNEXPECTED_ERROR",
        details={"exception_type": exc.__class__.__name__},
    )


# ============================================================================
# 🎓 STANDARDIZED ERROR RECORD
# ============================================================================


def create_error_record(
    exc: BaseException, keyframe_id: Optional[int] = None
) -> Dict[str, Any]:
    """
    Create the machine-readable error record stored in metrics.json.

    Returns:
        {"code": ..., "message": ..., "details": {...}, "keyframe_id": ...}
    """
    app_exc = map_exception(exc)
    return {
        "code": app_exc.error_code,
        "message": app_exc.message,
        "details": app_exc.details,
        "keyframe_id": keyframe_id,
    }


# ============================================================================
# ERROR REPORTING
# ============================================================================


def report_exception(
    exc: BaseException,
    keyframe_id: Optional[int] = None,
    stage: Optional[str] = None,
    expected: bool = True,
) -> AppException:
    """
    Log an exception and forward it to Sentry (a no-op when Sentry has not
    been initialised). Returns the mapped AppException.

    Args:
        exc: the exception
        keyframe_id: keyframe being processed, if any
        stage: pipeline stage that failed
        expected: True for domain failures (logged as warnings), False for
            crashes (logged as errors with the traceback)
    """
    app_exc = map_exception(exc)

    log_fields = {
        "error_code": app_exc.error_code,
        "error_message": app_exc.message,
        "keyframe_id": keyframe_id,
        "stage": stage,
        "details": app_exc.details,
    }
    if expected:
        logger.warning("Pipeline error occurred", **log_fields)
    else:
        logger.error("Unexpected exception occurred", exc_info=exc, **log_fields)

    with sentry_sdk.new_scope() as scope:
        scope.set_tag("error.code", app_exc.error_code)
        scope.set_tag("error.level", "warning" if expected else "critical")
        if keyframe_id is not None:
            scope.set_tag("pipeline.keyframe_id", str(keyframe_id))
        if stage:
            scope.set_tag("pipeline.stage", stage)
        scope.set_context(
            "app_error",
            {
                "error_code": app_exc.error_code,
                "message": app_exc.message,
                "details": app_exc.details,
                "exception_type": exc.__class__.__name__,
            },
        )
        sentry_sdk.capture_exception(exc)

    return app_exc
