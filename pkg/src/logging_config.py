"""
Structured logging configuration for the calibration toolkit.

Every handler writes to standard error: standard output is reserved for
the machine-readable JSON the command-line surface prints.
"""

import json
import logging
import logging.config
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from typing import Any, Iterator, Optional


SERVICE_NAME = "incical"


# ─── JSON Formatter ──────────────────────────────────────


class JSONFormatter(logging.Formatter):
    """Formats log records as one JSON object per line."""

    def __init__(self, service_name: str = SERVICE_NAME):
        super().__init__()
        self.service_name = service_name

    def format(self, record: logging.LogRecord) -> str:
        log_entry = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "service": self.service_name,
            "function": record.funcName,
            "line": record.lineno,
        }

        if hasattr(record, "extra_data") and record.extra_data:
            log_entry["data"] = record.extra_data

        if record.exc_info and record.exc_info[0]:
            log_entry["exception"] = {
                "type": record.exc_info[0].__name__,
                "message": str(record.exc_info[1]),
                "traceback": self.formatException(record.exc_info),
            }

        if hasattr(record, "duration_ms"):
            log_entry["performance"] = {"duration_ms": round(record.duration_ms, 3)}

        return json.dumps(log_entry, default=str)


# ─── Context Logger ──────────────────────────────────────


class ContextLogger:
    """Logger wrapper that automatically includes bound context in log records."""

    def __init__(self, logger: logging.Logger):
        self._logger = logger
        self._context: dict[str, Any] = {}

    @property
    def name(self) -> str:
        return self._logger.name

    def bind(self, **kwargs: Any) -> "ContextLogger":
        """Return a logger that adds these fields to every subsequent record."""
        new_logger = ContextLogger(self._logger)
        new_logger._context = {**self._context, **kwargs}
        return new_logger

    def _log(self, level: int, msg: str, *args, **kwargs):
        if not self._logger.isEnabledFor(level):
            return
        extra = kwargs.pop("extra", {})
        extra["extra_data"] = {**self._context, **extra.get("extra_data", {})}
        kwargs["extra"] = extra
        kwargs.setdefault("stacklevel", 3)
        self._logger.log(level, msg, *args, **kwargs)

    def debug(self, msg: str, *args, **kwargs):
        self._log(logging.DEBUG, msg, *args, **kwargs)

    def info(self, msg: str, *args, **kwargs):
        self._log(logging.INFO, msg, *args, **kwargs)

    def warning(self, msg: str, *args, **kwargs):
        self._log(logging.WARNING, msg, *args, **kwargs)

    def error(self, msg: str, *args, **kwargs):
        self._log(logging.ERROR, msg, *args, **kwargs)

    def exception(self, msg: str, *args, **kwargs):
        kwargs["exc_info"] = kwargs.get("exc_info", True)
        self._log(logging.ERROR, msg, *args, **kwargs)


# ─── Performance Tracking ────────────────────────────────


@contextmanager
def log_performance(logger: ContextLogger, operation: str, **extra) -> Iterator[dict]:
    """Context manager to log operation duration.

    Yields a dict that receives ``duration_ms`` once the block exits, so
    callers can report timing without measuring twice.

    Usage:
        with log_performance(logger, "ransac_calibrate", width=640) as perf:
            estimate = ransac_calibrate(incident_map, cfg)
        runtime = perf["duration_ms"]
    """
    start = time.perf_counter()
    timing: dict[str, float] = {}
    logger.debug(f"Starting {operation}", extra={"extra_data": extra})

    try:
        yield timing
    except Exception as e:
        timing["duration_ms"] = (time.perf_counter() - start) * 1000
        logger.warning(
            f"Failed {operation}: {e}",
            extra={
                "duration_ms": timing["duration_ms"],
                "extra_data": {**extra, "status": "error", "error": str(e)},
            },
        )
        raise
    timing["duration_ms"] = (time.perf_counter() - start) * 1000
    logger.debug(
        f"Completed {operation}",
        extra={
            "duration_ms": timing["duration_ms"],
            "extra_data": {**extra, "status": "success"},
        },
    )


# ─── Setup Functions ──────────────────────────────────────


LOGGING_CONFIG: dict[str, Any] = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "json": {
            "()": JSONFormatter,
            "service_name": SERVICE_NAME,
        },
        "console": {
            "format": "%(asctime)s [%(levelname)s] %(name)s: %(message)s",
            "datefmt": "%Y-%m-%d %H:%M:%S",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "stream": "ext://sys.stderr",
            "formatter": "console",
        },
    },
    "loggers": {
        "src.solver": {"level": "NOTSET"},
        "src.diffusion": {"level": "NOTSET"},
        "src.batch": {"level": "NOTSET"},
        "src.raster_io": {"level": "NOTSET"},
    },
    "root": {
        "level": "WARNING",
        "handlers": ["console"],
    },
}


def setup_logging(
    log_level: Optional[str] = None,
    json_output: Optional[bool] = None,
) -> None:
    """Initialize logging configuration.

    Args:
        log_level: Override log level (DEBUG, INFO, WARNING, ERROR).
            Defaults to the configured level.
        json_output: If True, use the JSON formatter on stderr.
            Defaults to the configured ``json_logs`` flag.
    """
    from src.config import get_settings

    settings = get_settings()
    level = (log_level or settings.log_level.value).upper()
    use_json = settings.json_logs if json_output is None else json_output

    config = {
        **LOGGING_CONFIG,
        "formatters": {
            **LOGGING_CONFIG["formatters"],
            "json": {**LOGGING_CONFIG["formatters"]["json"], "service_name": settings.app_name},
        },
        "handlers": {
            "console": {
                **LOGGING_CONFIG["handlers"]["console"],
                "formatter": "json" if use_json else "console",
            },
        },
        "root": {**LOGGING_CONFIG["root"], "level": level},
    }
    logging.config.dictConfig(config)

    get_logger(__name__).debug(
        "Logging initialized",
        extra={"extra_data": {"log_level": level, "json_output": use_json}},
    )


def get_logger(name: str) -> ContextLogger:
    """Get a context-aware logger for a module.

    Usage:
        logger = get_logger(__name__)
        logger = logger.bind(fixture="scannet", seed=7)
        logger.info("Calibrating")
    """
    return ContextLogger(logging.getLogger(name))
