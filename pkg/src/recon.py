"""
Point clouds from depth and intrinsics, and the inverse projection.
"""

from __future__ import annotations

import io
from pathlib import Path
from typing import NamedTuple, Optional, Union

import numpy as np
from numpy.typing import NDArray

from src.error_handler import EmptyInput, MalformedFile, NonPositiveDepth
from src.logging_config import get_logger
from src.metrics import Alignment, align_affine, align_scale, apply_alignment
from src.models import DepthMap, Intrinsics, PointCloud, ReprojectionResult

logger = get_logger(__name__)

PLY_FLOAT_FORMAT = "%.17g"


class PlaneFit(NamedTuple):
    centroid: NDArray[np.float64]
    normal: NDArray[np.float64]
    rms: float


def unproject(d: DepthMap, k: Intrinsics) -> PointCloud:
    """One point ``d * [(x - bx)/fx, (y - by)/fy, 1]`` per valid pixel, row-major order."""
    if d.valid_count == 0:
        raise EmptyInput("depth map has no valid pixels")
    ys, xs = np.nonzero(d.mask)
    depth = d.values[d.mask].astype(np.float64)
    points = np.stack(
        [depth * ((xs - k.bx) / k.fx), depth * ((ys - k.by) / k.fy), depth], axis=1
    )
    return PointCloud(points=points)


def reproject(c: PointCloud, k: Intrinsics) -> ReprojectionResult:
    """Pixel position and depth of every point; all points must lie in front of the camera."""
    z = c.points[:, 2]
    if (z <= 0).any():
        raise NonPositiveDepth(f"{int((z <= 0).sum())} point(s) have non-positive Z")
    x = k.fx * (c.points[:, 0] / z) + k.bx
    y = k.fy * (c.points[:, 1] / z) + k.by
    return ReprojectionResult(pixels=np.stack([x, y], axis=1), depth=z.copy())


def fit_plane(c: PointCloud) -> PlaneFit:
    """Total least-squares plane; the normal is oriented toward +Z."""
    if len(c) < 3:
        raise EmptyInput("a plane fit needs at least three points")
    centroid = c.points.mean(axis=0)
    centered = c.points - centroid
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    normal = vt[-1]
    if normal[2] < 0:
        normal = -normal
    rms = float(np.sqrt(np.mean((centered @ normal) ** 2)))
    return PlaneFit(centroid=centroid, normal=normal, rms=rms)


def align_to_reference(
    d: DepthMap, reference: Optional[DepthMap], scale_only: bool = False
) -> tuple[DepthMap, Optional[Alignment]]:
    """Bring affine-invariant depth into the reference's metric frame.

    Without a reference the depth is returned untouched (shift 0) and the
    alignment is ``None``.
    """
    if reference is None:
        logger.warning("No reference depth: shift is assumed to be zero")
        return d, None
    alignment = align_scale(d, reference) if scale_only else align_affine(d, reference)
    logger.info(
        "Aligned depth to reference",
        extra={"extra_data": {"scale": alignment.scale, "shift": alignment.shift}},
    )
    return apply_alignment(d, alignment), alignment


# ── ASCII PLY ──────────────────────────────────────────────────────────────


def ply_text(c: PointCloud) -> str:
    buf = io.StringIO()
    buf.write("ply\nformat ascii 1.0\n")
    buf.write(f"element vertex {len(c)}\n")
    for axis in "xyz":
        buf.write(f"property double {axis}\n")
    buf.write("end_header\n")
    np.savetxt(buf, c.points, fmt=PLY_FLOAT_FORMAT, delimiter=" ")
    return buf.getvalue()


def write_ply(path: Union[str, Path], c: PointCloud) -> None:
    """Write an ASCII PLY with x, y, z vertex properties; values round-trip exactly."""
    Path(path).write_text(ply_text(c), encoding="ascii")


def read_ply(path: Union[str, Path]) -> PointCloud:
    """Read the ASCII PLY layout produced by :func:`write_ply`."""
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != "ply":
        raise MalformedFile(f"{path} is not a PLY file")
    try:
        end = lines.index("end_header")
    except ValueError as e:
        raise MalformedFile(f"{path}: missing end_header") from e

    header = lines[1:end]
    if "format ascii 1.0" not in header:
        raise MalformedFile(f"{path}: only ASCII PLY is supported")
    counts = [line.split()[2] for line in header if line.startswith("element vertex")]
    if len(counts) != 1:
        raise MalformedFile(f"{path}: expected exactly one vertex element")
    count = int(counts[0])

    body = [line for line in lines[end + 1 :] if line.strip()]
    if len(body) != count:
        raise MalformedFile(f"{path}: header declares {count} vertices, found {len(body)}")
    if count == 0:
        return PointCloud(points=np.empty((0, 3)))
    points = np.loadtxt(body, dtype=np.float64, ndmin=2)
    if points.shape[1] != 3:
        raise MalformedFile(f"{path}: vertices must have 3 coordinates")
    return PointCloud(points=points)
