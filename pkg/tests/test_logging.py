"""
Tests for structured logging helpers and CLI error rendering.
"""

import io
import json
import logging
import sys

import pytest

from src.error_handler import (
    ErrorCode,
    GeometryError,
    NoConsensus,
    UsageError,
    handle_cli_error,
)
from src.config import get_settings
from src.logging_config import JSONFormatter, get_logger, log_performance, setup_logging


pytestmark = pytest.mark.unit


def make_record(**extra) -> logging.LogRecord:
    record = logging.LogRecord("src.solver", logging.INFO, __file__, 10, "calibrated %s", ("scannet",), None)
    for key, value in extra.items():
        setattr(record, key, value)
    return record


class TestJSONFormatter:

    def test_basic_fields(self):
        entry = json.loads(JSONFormatter().format(make_record()))
        assert entry["level"] == "INFO"
        assert entry["logger"] == "src.solver"
        assert entry["message"] == "calibrated scannet"
        assert entry["service"] == "incical"

    def test_extra_data_and_duration(self):
        entry = json.loads(JSONFormatter().format(make_record(extra_data={"seed": 4}, duration_ms=12.34567)))
        assert entry["data"] == {"seed": 4}
        assert entry["performance"] == {"duration_ms": 12.346}

    def test_exception_info(self):
        try:
            raise NoConsensus("no model")
        except NoConsensus:
            record = make_record()
            record.exc_info = sys.exc_info()
        entry = json.loads(JSONFormatter().format(record))
        assert entry["exception"]["type"] == "NoConsensus"

    def test_service_name_follows_settings(self, monkeypatch):
        monkeypatch.setenv("INCICAL_APP_NAME", "calib-bench")
        get_settings.cache_clear()
        root = logging.getLogger()
        try:
            setup_logging("INFO", json_output=True)
            formatter = next(h.formatter for h in root.handlers if isinstance(h.formatter, JSONFormatter))
            assert json.loads(formatter.format(make_record()))["service"] == "calib-bench"
        finally:
            root.handlers.clear()


class TestContextLogger:

    def test_bind_adds_context(self, caplog):
        caplog.set_level(logging.INFO, logger="src.batch")
        log = get_logger("src.batch").bind(fixture="kitti", trial=2)
        log.info("running")
        record = caplog.records[-1]
        assert record.extra_data == {"fixture": "kitti", "trial": 2}

    def test_bind_does_not_mutate_parent(self):
        parent = get_logger("src.batch")
        parent.bind(seed=1)
        assert parent._context == {}

    def test_log_performance_reports_duration(self, caplog):
        caplog.set_level(logging.DEBUG, logger="src.solver")
        log = get_logger("src.solver")
        with log_performance(log, "ransac_calibrate", width=64) as perf:
            pass
        assert perf["duration_ms"] >= 0.0
        assert "Completed ransac_calibrate" in caplog.text

    def test_log_performance_reraises(self, caplog):
        caplog.set_level(logging.DEBUG, logger="src.solver")
        with pytest.raises(ValueError):
            with log_performance(get_logger("src.solver"), "enumerate_focal"):
                raise ValueError("empty")
        assert "Failed enumerate_focal" in caplog.text


class TestHandleCliError:

    def test_application_error(self):
        out = io.StringIO()
        status = handle_cli_error(GeometryError("bad crop", {"x": 3}), out)
        doc = json.loads(out.getvalue())
        assert status == 1
        assert doc["error"] is True
        assert doc["code"] == ErrorCode.INVALID_GEOMETRY.value
        assert doc["kind"] == "GeometryError"
        assert doc["context"] == {"x": 3}

    def test_usage_error_exit_status(self):
        out = io.StringIO()
        assert handle_cli_error(UsageError("missing --seed"), out) == 2
        assert "context" not in json.loads(out.getvalue())

    def test_unexpected_exception(self):
        out = io.StringIO()
        status = handle_cli_error(KeyError("boom"), out)
        doc = json.loads(out.getvalue())
        assert status == 1
        assert doc["code"] == ErrorCode.INTERNAL_ERROR.value
        assert doc["kind"] == "KeyError"

    def test_codes_are_unique(self):
        values = [code.value for code in ErrorCode]
        assert len(values) == len(set(values))
