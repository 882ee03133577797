"""
🎓 Structured Logging Configuration

Sets up stdlib logging and structlog for the reconstruction pipeline.
Development runs get a colored console renderer; production runs emit one
JSON object per line so that per-keyframe records can be aggregated.

Every record emitted while a keyframe is being processed carries the run id
and the keyframe id, taken from context variables. Worker threads set their
own context through `keyframe_context`.
"""

import logging
import logging.config
import sys
import time
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Any, Dict, Iterator, MutableMapping, Optional
from uuid import uuid4

import structlog
from pythonjsonlogger.json import JsonFormatter

# ============================================================================
# 🎓 CONTEXT VARIABLES FOR RUN TRACKING
# ============================================================================

run_id_var: ContextVar[Optional[str]] = ContextVar("run_id", default=None)
keyframe_id_var: ContextVar[Optional[int]] = ContextVar("keyframe_id", default=None)
stage_var: ContextVar[Optional[str]] = ContextVar("stage", default=None)


# ============================================================================
# JSON FORMATTER
# ============================================================================


class PipelineJSONFormatter(JsonFormatter):
    """
    JSON formatter that enriches every entry with the pipeline context.

    The base formatter from python-json-logger handles serialisation and
    `extra=` fields; this subclass adds the service name, location fields
    and whatever run / keyframe / stage is active.
    """

    def add_fields(
        self,
        log_record: Dict[str, Any],
        record: logging.LogRecord,
        message_dict: Dict[str, Any],
    ) -> None:
        super().add_fields(log_record, record, message_dict)
        log_record["timestamp"] = time.strftime(
            "%Y-%m-%dT%H:%M:%SZ", time.gmtime(record.created)
        )
        log_record["level"] = record.levelname
        log_record["logger"] = record.name
        log_record["module"] = record.module
        log_record["function"] = record.funcName
        log_record["line"] = record.lineno
        log_record["service"] = "msfusion"

        run_id = run_id_var.get()
        if run_id:
            log_record["run_id"] = run_id

        keyframe_id = keyframe_id_var.get()
        if keyframe_id is not None:
            log_record["keyframe_id"] = keyframe_id

        stage = stage_var.get()
        if stage:
            log_record["stage"] = stage


def _add_pipeline_context(
    logger: Any, method_name: str, event_dict: MutableMapping[str, Any]
) -> MutableMapping[str, Any]:
    """structlog processor mirroring the JSON formatter's context fields."""
    run_id = run_id_var.get()
    if run_id and "run_id" not in event_dict:
        event_dict["run_id"] = run_id
    keyframe_id = keyframe_id_var.get()
    if keyframe_id is not None and "keyframe_id" not in event_dict:
        event_dict["keyframe_id"] = keyframe_id
    return event_dict


# ============================================================================
# LOGGING CONFIGURATION
# ============================================================================


def setup_logging(
    environment: str = "development",
    log_level: str = "INFO",
    log_format: Optional[str] = None,
) -> None:
    """
    Configure structured logging for the process.

    Args:
        environment: development / production
        log_level: minimum level captured
        log_format: "console" or "json"; defaults to json in production
    """
    if log_format is None:
        log_format = "json" if environment == "production" else "console"
    use_json = log_format == "json"

    logging_config = {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "json": {
                "()": PipelineJSONFormatter,
            },
            "standard": {"format": "%(message)s"},
        },
        "handlers": {
            "console": {
                "class": "logging.StreamHandler",
                "formatter": "json" if use_json else "standard",
                "stream": sys.stderr,
                "level": log_level.upper(),
            },
        },
        "root": {"level": log_level.upper(), "handlers": ["console"]},
        "loggers": {
            "PIL": {"level": "WARNING", "propagate": True},
            "matplotlib": {"level": "WARNING", "propagate": True},
            "msfusion": {"level": log_level.upper(), "propagate": True},
        },
    }

    logging.config.dictConfig(logging_config)

    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            _add_pipeline_context,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            (
                structlog.processors.JSONRenderer(sort_keys=True)
                if use_json
                else structlog.dev.ConsoleRenderer(colors=sys.stderr.isatty())
            ),
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )


# ============================================================================
# CONTEXT MANAGEMENT UTILITIES
# ============================================================================


def set_run_context(run_id: Optional[str] = None) -> str:
    """Start a pipeline run context; returns the run id that was set."""
    if run_id is None:
        run_id = uuid4().hex[:12]
    run_id_var.set(run_id)
    return run_id


def clear_run_context() -> None:
    """Clear run context after the run completes"""
    run_id_var.set(None)
    keyframe_id_var.set(None)
    stage_var.set(None)


def get_run_id() -> Optional[str]:
    return run_id_var.get()


@contextmanager
def keyframe_context(keyframe_id: int, run_id: Optional[str] = None) -> Iterator[None]:
    """
    🎓 Attach a keyframe id (and optionally the run id) to every record
    logged inside the block.

    Educational Note:
    ThreadPoolExecutor workers start with an empty context, so a ContextVar
    set by the submitting thread is not visible inside `submit`ted work.
    Each worker enters this block itself and passes the run id along.
    """
    keyframe_token = keyframe_id_var.set(keyframe_id)
    run_token = run_id_var.set(run_id) if run_id is not None else None
    try:
        yield
    finally:
        keyframe_id_var.reset(keyframe_token)
        if run_token is not None:
            run_id_var.reset(run_token)


# ============================================================================
# STRUCTURED LOGGER FACTORY
# ============================================================================


def get_logger(name: str) -> structlog.stdlib.BoundLogger:
    """
    Get a structured logger instance.

    Usage:
        logger = get_logger(__name__)
        logger.info("Mixing estimated", segments=2, worst_condition=12.4)
    """
    return structlog.get_logger(name)


# ============================================================================
# 🎓 STAGE TIMING
# ============================================================================


class StageTimer:
    """
    🎓 Context manager timing one pipeline stage.

    The duration is logged and, when a `timings` dict is given, stored
    under the stage name so it can go into the metrics report.

    Usage:
        timings: Dict[str, float] = {}
        with StageTimer("estimate_mixing", timings, keyframe_id=3):
            model = estimate_mixing(...)
    """

    def __init__(
        self,
        stage: str,
        timings: Optional[Dict[str, float]] = None,
        slow_threshold_ms: float = 1000.0,
        enable_performance_logging: bool = False,
        **context: Any,
    ):
        self.stage = stage
        self.timings = timings
        self.slow_threshold_ms = slow_threshold_ms
        self.enable_performance_logging = enable_performance_logging
        self.context = context
        self.start_time: Optional[float] = None
        self.duration_ms: float = 0.0
        self.logger = get_logger("msfusion.performance")
        self._token = None

    def __enter__(self) -> "StageTimer":
        self.start_time = time.perf_counter()
        self._token = stage_var.set(self.stage)
        self.logger.debug(f"Starting {self.stage}", stage=self.stage, **self.context)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        if self.start_time is not None:
            self.duration_ms = round((time.perf_counter() - self.start_time) * 1000, 3)
        if self.timings is not None:
            self.timings[self.stage] = self.duration_ms
        if self._token is not None:
            stage_var.reset(self._token)

        if exc_type:
            self.logger.error(
                f"Failed {self.stage}",
                stage=self.stage,
                duration_ms=self.duration_ms,
                error_type=exc_type.__name__,
                **self.context,
            )
            return

        slow = (
            self.enable_performance_logging
            and self.duration_ms > self.slow_threshold_ms
        )
        getattr(self.logger, "warning" if slow else "debug")(
            f"Completed {self.stage}",
            stage=self.stage,
            duration_ms=self.duration_ms,
            **self.context,
        )


# ============================================================================
# PIPELINE EVENT LOGGING
# ============================================================================


def log_pipeline_event(
    event_name: str,
    keyframe_id: Optional[int] = None,
    level: str = "info",
    **additional_context: Any,
) -> None:
    """
    Log a notable pipeline event with structured data.

    Usage:
        log_pipeline_event(
            "keyframe_skipped",
            keyframe_id=4,
            level="warning",
            error_code="DEGENERATE_PRIORS",
        )
    """
    logger = get_logger("msfusion.pipeline.events")
    getattr(logger, level)(
        f"Pipeline event: {event_name}",
        event_name=event_name,
        keyframe_id=keyframe_id,
        **additional_context,
    )
