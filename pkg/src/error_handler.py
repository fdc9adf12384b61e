"""
Centralized error handling for the calibration toolkit.

Provides structured error codes, the exception hierarchy raised by the
library modules, and the JSON error rendering used by the command line.
"""

import logging
import sys
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Optional, TextIO

from pydantic import BaseModel


logger = logging.getLogger(__name__)


# ---------- Error Codes ----------


class ErrorCode(str, Enum):
    """Application-specific error codes for script handling."""

    # Geometry
    INVALID_INTRINSICS = "GEO_001"
    INVALID_GEOMETRY = "GEO_002"

    # Solver
    DEGENERATE_SAMPLE = "SOL_001"
    INVALID_SOLUTION = "SOL_002"
    NO_CONSENSUS = "SOL_003"
    RANK_DEFICIENT = "SOL_004"
    EMPTY_GRID = "SOL_005"

    # Diffusion
    SHAPE_MISMATCH = "DIF_001"
    SCHEDULE_ERROR = "DIF_002"
    ZERO_NOISE_SCALE = "DIF_003"

    # Metrics / reconstruction
    EMPTY_INPUT = "MET_001"
    NON_POSITIVE_DEPTH = "MET_002"

    # Serialization
    BAD_MAGIC = "IO_001"
    VERSION_MISMATCH = "IO_002"
    TRUNCATED_PAYLOAD = "IO_003"
    CORRUPT_HEADER = "IO_004"
    MISSING_KEY = "IO_005"
    UNKNOWN_FIXTURE = "IO_006"
    MALFORMED_FILE = "IO_007"

    # Command line
    USAGE_ERROR = "CLI_001"
    GEOMETRY_MISMATCH = "CLI_002"

    # General
    INTERNAL_ERROR = "GEN_001"


# ---------- Error Response Model ----------


class ErrorResponse(BaseModel):
    """Standardized error document printed on standard output."""

    error: bool = True
    code: str
    kind: str
    message: str
    context: Optional[dict[str, Any]] = None
    timestamp: str


# ---------- Custom Exceptions ----------


class AppException(Exception):
    """Base application exception with structured error info."""

    code: ErrorCode = ErrorCode.INTERNAL_ERROR
    exit_status: int = 1

    def __init__(self, message: str, context: Optional[dict[str, Any]] = None):
        self.message = message
        self.context = context or {}
        super().__init__(message)

    def to_response(self) -> ErrorResponse:
        return ErrorResponse(
            code=self.code.value,
            kind=type(self).__name__,
            message=self.message,
            context=self.context or None,
            timestamp=datetime.now(timezone.utc).isoformat(),
        )


class GeometryError(AppException):
    """Raised when camera parameters or geometric data violate their invariants."""
    code = ErrorCode.INVALID_GEOMETRY


class InvalidIntrinsics(GeometryError):
    """Raised when intrinsic parameters are not positive finite numbers."""
    code = ErrorCode.INVALID_INTRINSICS


class DegenerateSample(AppException):
    """Raised when two correspondences cannot determine the intrinsics."""
    code = ErrorCode.DEGENERATE_SAMPLE


class InvalidSolution(AppException):
    """Raised when a minimal solve yields a non-positive focal length."""
    code = ErrorCode.INVALID_SOLUTION


class NoConsensus(AppException):
    """Raised when no RANSAC trial reaches the minimum inlier ratio."""
    code = ErrorCode.NO_CONSENSUS


class RankDeficient(AppException):
    """Raised when a least-squares system has no unique solution."""
    code = ErrorCode.RANK_DEFICIENT


class EmptyGrid(AppException):
    code = ErrorCode.EMPTY_GRID


class ShapeMismatch(AppException):
    """Raised when two fields or maps that must align do not."""
    code = ErrorCode.SHAPE_MISMATCH


class ScheduleError(AppException):
    """Raised for invalid noise schedules or timesteps."""
    code = ErrorCode.SCHEDULE_ERROR


class ZeroNoiseScale(AppException):
    code = ErrorCode.ZERO_NOISE_SCALE


class EmptyInput(AppException):
    """Raised when a metric or reconstruction has nothing to work on."""
    code = ErrorCode.EMPTY_INPUT


class NonPositiveDepth(AppException):
    code = ErrorCode.NON_POSITIVE_DEPTH


class BadMagic(AppException):
    code = ErrorCode.BAD_MAGIC


class VersionMismatch(AppException):
    code = ErrorCode.VERSION_MISMATCH


class TruncatedPayload(AppException):
    """Raised when the payload length disagrees with the header."""
    code = ErrorCode.TRUNCATED_PAYLOAD


class CorruptHeader(AppException):
    code = ErrorCode.CORRUPT_HEADER


class MissingKey(AppException):
    code = ErrorCode.MISSING_KEY


class UnknownFixture(AppException):
    code = ErrorCode.UNKNOWN_FIXTURE


class MalformedFile(AppException):
    code = ErrorCode.MALFORMED_FILE


class UsageError(AppException):
    code = ErrorCode.USAGE_ERROR
    exit_status = 2


class GeometryMismatch(AppException):
    code = ErrorCode.GEOMETRY_MISMATCH


# ---------- Rendering ----------


def handle_cli_error(exc: Exception, stdout: Optional[TextIO] = None) -> int:
    """Print a JSON error document and return the process exit status.

    Known application errors are logged at ERROR without a traceback;
    anything else is treated as an internal error and logged in full.
    """
    if isinstance(exc, AppException):
        logger.error("%s [%s]: %s", type(exc).__name__, exc.code.value, exc.message)
        response = exc.to_response()
        status = exc.exit_status
    else:
        logger.critical("Unhandled exception", exc_info=exc)
        response = ErrorResponse(
            code=ErrorCode.INTERNAL_ERROR.value,
            kind=type(exc).__name__,
            message=str(exc) or "An unexpected error occurred.",
            timestamp=datetime.now(timezone.utc).isoformat(),
        )
        status = 1

    (stdout or sys.stdout).write(response.model_dump_json(exclude_none=True) + "\n")
    return status
