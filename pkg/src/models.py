"""
Value types shared across the calibration toolkit.

Scalar records are frozen pydantic models; dense rasters and point sets
are frozen dataclasses over read-only numpy arrays. Rasters are stored
row-major with channels last: ``data[y, x, c]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Literal, Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.error_handler import GeometryError, NonPositiveDepth, ShapeMismatch


# ---------------------------------------------------------------------------
# Camera records
# ---------------------------------------------------------------------------


class Intrinsics(BaseModel):
    """4-DoF pinhole intrinsics in pixels."""

    model_config = ConfigDict(frozen=True)

    fx: float
    fy: float
    bx: float
    by: float

    @field_validator("fx", "fy", "bx", "by")
    @classmethod
    def must_be_finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("intrinsics must be finite")
        return v

    @field_validator("fx", "fy")
    @classmethod
    def focal_must_be_positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError(f"focal length must be positive, got {v}")
        return v

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "Intrinsics":
        """Build from ``[fx, fy, bx, by]``."""
        if len(values) != 4:
            raise GeometryError(f"expected 4 intrinsic values, got {len(values)}")
        fx, fy, bx, by = (float(v) for v in values)
        return cls(fx=fx, fy=fy, bx=bx, by=by)

    @classmethod
    def from_matrix(cls, matrix: NDArray[np.floating]) -> "Intrinsics":
        """Build from a 3x3 upper-triangular K with zero skew."""
        k = np.asarray(matrix, dtype=np.float64)
        if k.shape != (3, 3):
            raise GeometryError(f"K must be 3x3, got {k.shape}")
        if k[0, 1] != 0 or k[1, 0] != 0 or k[2, 0] != 0 or k[2, 1] != 0 or k[2, 2] != 1:
            raise GeometryError("K must be a zero-skew pinhole matrix with K[2,2] == 1")
        return cls(fx=k[0, 0], fy=k[1, 1], bx=k[0, 2], by=k[1, 2])

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.fx, self.fy, self.bx, self.by)

    def matrix(self) -> NDArray[np.float64]:
        """The 3x3 intrinsic matrix K."""
        return np.array(
            [[self.fx, 0.0, self.bx], [0.0, self.fy, self.by], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )


class ImageGeometry(BaseModel):
    """Raster size in pixels."""

    model_config = ConfigDict(frozen=True)

    width: int = Field(..., ge=2)
    height: int = Field(..., ge=2)

    @property
    def shape(self) -> tuple[int, int]:
        """Row-major array shape ``(height, width)``."""
        return (self.height, self.width)

    @property
    def pixel_count(self) -> int:
        return self.width * self.height

    @classmethod
    def from_shape(cls, shape: Sequence[int]) -> "ImageGeometry":
        try:
            return cls(width=int(shape[1]), height=int(shape[0]))
        except ValueError as e:
            raise GeometryError(f"raster shape {tuple(shape)} is smaller than 2x2") from e

    def __str__(self) -> str:
        return f"{self.width}x{self.height}"


class PixelCoord(BaseModel):
    """Continuous pixel position; integers address pixel centers."""

    model_config = ConfigDict(frozen=True)

    x: float
    y: float

    @field_validator("x", "y")
    @classmethod
    def must_be_finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("pixel coordinates must be finite")
        return v


# ---------------------------------------------------------------------------
# Solver records
# ---------------------------------------------------------------------------


class SolverConfig(BaseModel):
    """RANSAC / enumeration parameters for one calibration run."""

    model_config = ConfigDict(frozen=True)

    iterations: int = Field(default=2048, ge=1)
    inlier_threshold: float = Field(default=0.008727, gt=0.0, lt=math.pi / 2, description="Radians")
    seed: int = Field(default=0, ge=0, lt=2**64)
    assume_centered: bool = False
    min_inlier_ratio: float = Field(default=0.2, gt=0.0, le=1.0)
    confidence: float = Field(default=1.0, gt=0.0, le=1.0)
    min_trials: int = Field(default=64, ge=1)
    chunk_size: int = Field(default=32, ge=1)
    refine_iterations: int = Field(default=3, ge=1)
    max_scored_pixels: int = Field(default=65536, ge=16)

    @classmethod
    def from_settings(cls, **overrides) -> "SolverConfig":
        """Defaults from the active settings, with explicit overrides applied."""
        from src.config import get_settings

        solver = get_settings().solver
        values = {
            "iterations": solver.iterations,
            "inlier_threshold": solver.inlier_threshold,
            "min_inlier_ratio": solver.min_inlier_ratio,
            "confidence": solver.confidence,
            "min_trials": solver.min_trials,
            "chunk_size": solver.chunk_size,
            "refine_iterations": solver.refine_iterations,
            "max_scored_pixels": solver.max_scored_pixels,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


class CalibrationEstimate(BaseModel):
    """Recovered intrinsics with consensus statistics."""

    model_config = ConfigDict(frozen=True)

    intrinsics: Intrinsics
    inlier_ratio: float = Field(..., ge=0.0, le=1.0)
    median_residual: float = Field(..., ge=0.0, description="Radians")
    method: Literal["ransac", "enumerate"] = "ransac"
    trials: int = Field(default=0, ge=0)


class FocalGrid(BaseModel):
    """Ordered candidate focal lengths for 1-DoF enumeration."""

    model_config = ConfigDict(frozen=True)

    candidates: tuple[float, ...]

    @field_validator("candidates")
    @classmethod
    def strictly_increasing_positive(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if any(not math.isfinite(c) or c <= 0 for c in v):
            raise ValueError("focal candidates must be finite and positive")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("focal candidates must be strictly increasing")
        return v

    @classmethod
    def log_spaced(cls, low: float, high: float, count: int) -> "FocalGrid":
        if not (0 < low < high) or count < 2:
            raise ValueError("log grid needs 0 < low < high and at least 2 points")
        return cls(candidates=tuple(float(c) for c in np.geomspace(low, high, count)))

    def local_spacing(self, focal: float) -> float:
        """Width of the grid interval containing ``focal`` (edge intervals at the ends)."""
        grid = np.asarray(self.candidates)
        i = int(np.clip(np.searchsorted(grid, focal), 1, len(grid) - 1))
        return float(grid[i] - grid[i - 1])

    def __len__(self) -> int:
        return len(self.candidates)


# ---------------------------------------------------------------------------
# Evaluation and fixture records
# ---------------------------------------------------------------------------


class CalibrationError(BaseModel):
    """Relative focal error e_f and normalized principal-point offset e_b."""

    model_config = ConfigDict(frozen=True)

    e_f: float = Field(..., ge=0.0)
    e_b: float = Field(..., ge=0.0)


class FixtureEntry(BaseModel):
    """Published dataset intrinsics with the native image size."""

    model_config = ConfigDict(frozen=True)

    name: str
    intrinsics: Intrinsics
    geometry: ImageGeometry
    source: str


class MapFileHeader(BaseModel):
    """Fixed 24-byte header of IMAP / DMAP raster files."""

    model_config = ConfigDict(frozen=True)

    magic: Literal["IMAP", "DMAP"]
    version: int = Field(..., ge=0, lt=2**32)
    width: int = Field(..., ge=2, lt=2**32)
    height: int = Field(..., ge=2, lt=2**32)
    channels: int = Field(..., ge=1, lt=2**32)

    @model_validator(mode="after")
    def channels_match_kind(self) -> "MapFileHeader":
        expected = 2 if self.magic == "IMAP" else 1
        if self.channels != expected:
            raise ValueError(f"{self.magic} requires {expected} channel(s), got {self.channels}")
        return self

    @property
    def payload_bytes(self) -> int:
        return self.width * self.height * self.channels * 4


# ---------------------------------------------------------------------------
# Dense rasters and point sets
# ---------------------------------------------------------------------------


def _frozen(array: NDArray, dtype=None) -> NDArray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class IncidentMap:
    """Per-pixel incidence vectors in canonical form (v_x, v_y) with v_z = 1 implied."""

    geometry: ImageGeometry
    data: NDArray[np.floating]

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.shape != (*self.geometry.shape, 2):
            raise ShapeMismatch(
                f"incident map data must have shape {(*self.geometry.shape, 2)}, got {data.shape}"
            )
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.isfinite(data).all():
            raise GeometryError("incident map contains non-finite components")
        object.__setattr__(self, "data", _frozen(data))

    @classmethod
    def from_array(cls, data: NDArray[np.floating]) -> "IncidentMap":
        data = np.asarray(data)
        if data.ndim != 3:
            raise ShapeMismatch(f"incident map array must be HxWx2, got {data.shape}")
        return cls(geometry=ImageGeometry.from_shape(data.shape), data=data)

    @property
    def vx(self) -> NDArray[np.floating]:
        return self.data[..., 0]

    @property
    def vy(self) -> NDArray[np.floating]:
        return self.data[..., 1]

    def rays(self) -> NDArray[np.float64]:
        """Canonical 3-vectors ``(v_x, v_y, 1)`` of shape HxWx3."""
        ones = np.ones((*self.geometry.shape, 1), dtype=np.float64)
        return np.concatenate([self.data.astype(np.float64), ones], axis=-1)

    def unit_vectors(self) -> NDArray[np.float64]:
        """Unit-normalized rays, shape HxWx3 (export-only form)."""
        rays = self.rays()
        return rays / np.linalg.norm(rays, axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel depth with a validity mask; invalid pixels hold NaN."""

    geometry: ImageGeometry
    values: NDArray[np.floating]
    mask: NDArray[np.bool_]

    def __post_init__(self):
        values = np.asarray(self.values)
        if not np.issubdtype(values.dtype, np.floating):
            values = values.astype(np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if values.shape != self.geometry.shape or mask.shape != self.geometry.shape:
            raise ShapeMismatch(
                f"depth values and mask must have shape {self.geometry.shape}, "
                f"got {values.shape} and {mask.shape}"
            )
        with np.errstate(invalid="ignore"):
            bad = mask & ~(np.isfinite(values) & (values > 0))
        if bad.any():
            raise NonPositiveDepth(
                f"{int(bad.sum())} pixel(s) marked valid are non-finite or not positive"
            )
        values = np.where(mask, values, np.nan).astype(values.dtype)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "mask", _frozen(mask))

    @classmethod
    def from_array(
        cls, values: NDArray[np.floating], mask: Optional[NDArray[np.bool_]] = None
    ) -> "DepthMap":
        """Wrap a depth raster; non-finite or non-positive pixels become invalid."""
        values = np.asarray(values)
        if not np.issubdtype(values.dtype, np.floating):
            values = values.astype(np.float64)
        if values.ndim != 2:
            raise ShapeMismatch(f"depth array must be HxW, got {values.shape}")
        with np.errstate(invalid="ignore"):
            valid = np.isfinite(values) & (values > 0)
        if mask is not None:
            valid &= np.asarray(mask, dtype=bool)
        return cls(geometry=ImageGeometry.from_shape(values.shape), values=values, mask=valid)

    @property
    def valid_count(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True, eq=False)
class LatentField:
    """Multi-channel real field; raster-space stand-in for a latent code."""

    geometry: ImageGeometry
    data: NDArray[np.float64]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[:2] != self.geometry.shape or data.shape[2] < 1:
            raise ShapeMismatch(
                f"field data must have shape {(*self.geometry.shape, 'C')}, got {data.shape}"
            )
        if not np.isfinite(data).all():
            raise GeometryError("field contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))

    @classmethod
    def from_array(cls, data: NDArray[np.floating]) -> "LatentField":
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 2:
            data = data[..., None]
        if data.ndim != 3:
            raise ShapeMismatch(f"field array must be HxWxC, got {data.shape}")
        return cls(geometry=ImageGeometry.from_shape(data.shape), data=data)

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    """Per-pixel aggregate of K generations."""

    mean: LatentField
    stddev: LatentField
    size: int

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("ensemble size must be at least 1")
        if (self.stddev.data < 0).any():
            raise ValueError("ensemble stddev must be non-negative")


@dataclass(frozen=True, eq=False)
class PointCloud:
    """3D points in meters, shape Nx3."""

    points: NDArray[np.float64]

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ShapeMismatch(f"point cloud must be Nx3, got {points.shape}")
        if not np.isfinite(points).all():
            raise GeometryError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", _frozen(points))

    @classmethod
    def from_points(cls, points: Iterable[Sequence[float]]) -> "PointCloud":
        return cls(points=np.asarray(list(points), dtype=np.float64).reshape(-1, 3))

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class ReprojectionResult:
    """Pixel position and depth for every point of a cloud."""

    pixels: NDArray[np.float64] = field(repr=False)
    depth: NDArray[np.float64] = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "pixels", _frozen(self.pixels, np.float64))
        object.__setattr__(self, "depth", _frozen(self.depth, np.float64))
