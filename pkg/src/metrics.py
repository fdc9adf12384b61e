"""
Evaluation metrics: calibration error, affine-invariant depth accuracy and
point-cloud distances.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from src.error_handler import EmptyInput, RankDeficient, ShapeMismatch
from src.models import CalibrationError, DepthMap, ImageGeometry, Intrinsics, PointCloud

# Brute-force distance matrices are built in row blocks of this many points.
_BRUTE_BLOCK = 256


class DepthErrors(NamedTuple):
    abs_rel: float
    delta1: float


class Alignment(NamedTuple):
    scale: float
    shift: float


# ── Calibration ────────────────────────────────────────────────────────────


def calib_error(gt: Intrinsics, pred: Intrinsics, g: ImageGeometry) -> CalibrationError:
    """Relative focal error and principal-point offset normalized by half the image size."""
    e_f = max(abs(pred.fx - gt.fx) / gt.fx, abs(pred.fy - gt.fy) / gt.fy)
    e_b = max(2 * abs(pred.bx - gt.bx) / g.width, 2 * abs(pred.by - gt.by) / g.height)
    return CalibrationError(e_f=e_f, e_b=e_b)


# ── Depth ──────────────────────────────────────────────────────────────────


def _joint_valid(pred: DepthMap, gt: DepthMap) -> NDArray[np.bool_]:
    if pred.geometry != gt.geometry:
        raise ShapeMismatch(f"prediction {pred.geometry} and ground truth {gt.geometry} differ")
    return pred.mask & gt.mask


def align_affine(pred: DepthMap, gt: DepthMap) -> Alignment:
    """Least-squares ``(scale, shift)`` mapping ``pred`` onto ``gt`` over jointly valid pixels."""
    mask = _joint_valid(pred, gt)
    if np.count_nonzero(mask) < 2:
        raise EmptyInput("affine alignment needs at least two jointly valid pixels")
    p = pred.values[mask].astype(np.float64)
    t = gt.values[mask].astype(np.float64)
    if np.all(p == p[0]):
        raise RankDeficient("prediction is constant over the valid pixels")

    design = np.stack([p, np.ones_like(p)], axis=1)
    (scale, shift), *_ = np.linalg.lstsq(design, t, rcond=None)
    return Alignment(float(scale), float(shift))


def align_scale(pred: DepthMap, gt: DepthMap) -> Alignment:
    """Least-squares scale with zero shift."""
    mask = _joint_valid(pred, gt)
    if not mask.any():
        raise EmptyInput("scale alignment needs jointly valid pixels")
    p = pred.values[mask].astype(np.float64)
    t = gt.values[mask].astype(np.float64)
    return Alignment(float(np.dot(p, t) / np.dot(p, p)), 0.0)


def apply_alignment(pred: DepthMap, alignment: Alignment) -> DepthMap:
    """``scale * pred + shift``; pixels pushed to non-positive depth become invalid."""
    values = alignment.scale * np.where(pred.mask, pred.values, 0.0) + alignment.shift
    return DepthMap.from_array(values, mask=pred.mask)


def depth_errors(
    pred_aligned: DepthMap, gt: DepthMap, delta1_threshold: Optional[float] = None
) -> DepthErrors:
    """AbsRel and δ1 accuracy over jointly valid pixels."""
    if delta1_threshold is None:
        from src.config import get_settings

        delta1_threshold = get_settings().evaluation.delta1_threshold

    mask = _joint_valid(pred_aligned, gt)
    if not mask.any():
        raise EmptyInput("no jointly valid pixels to evaluate")
    p = pred_aligned.values[mask].astype(np.float64)
    t = gt.values[mask].astype(np.float64)
    abs_rel = float(np.mean(np.abs(p - t) / t))
    delta1 = float(np.mean(np.maximum(p / t, t / p) < delta1_threshold))
    return DepthErrors(abs_rel, delta1)


def rms_error(a: NDArray[np.floating], b: NDArray[np.floating]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes {a.shape} and {b.shape} differ")
    if a.size == 0:
        raise EmptyInput("rms of an empty array")
    return float(np.sqrt(np.mean((a - b) ** 2)))


# ── Point clouds ───────────────────────────────────────────────────────────


def _check_clouds(a: PointCloud, b: PointCloud) -> None:
    if len(a) == 0 or len(b) == 0:
        raise EmptyInput("point cloud metrics need non-empty clouds")


def nearest_distances(a: PointCloud, b: PointCloud) -> NDArray[np.float64]:
    """Distance from each point of ``a`` to its nearest neighbor in ``b`` (k-d tree)."""
    _check_clouds(a, b)
    _, idx = cKDTree(b.points).query(a.points, k=1)
    return np.linalg.norm(a.points - b.points[idx], axis=1)


def nearest_distances_bruteforce(a: PointCloud, b: PointCloud) -> NDArray[np.float64]:
    """O(N·M) reference for :func:`nearest_distances`."""
    _check_clouds(a, b)
    idx = np.empty(len(a), dtype=np.intp)
    for start in range(0, len(a), _BRUTE_BLOCK):
        block = a.points[start : start + _BRUTE_BLOCK]
        dist = np.linalg.norm(block[:, None, :] - b.points[None, :, :], axis=2)
        idx[start : start + _BRUTE_BLOCK] = np.argmin(dist, axis=1)
    return np.linalg.norm(a.points - b.points[idx], axis=1)


def chamfer_l1(a: PointCloud, b: PointCloud, bruteforce: bool = False) -> float:
    """Symmetric mean nearest-neighbor Euclidean distance, in the clouds' units."""
    nearest = nearest_distances_bruteforce if bruteforce else nearest_distances
    return float(0.5 * (nearest(a, b).mean() + nearest(b, a).mean()))


def fscore(
    a: PointCloud, b: PointCloud, tau: Optional[float] = None, bruteforce: bool = False
) -> float:
    """Harmonic mean of precision (a near b) and recall (b near a) at distance ``tau``."""
    if tau is None:
        from src.config import get_settings

        tau = get_settings().evaluation.fscore_tau
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")

    nearest = nearest_distances_bruteforce if bruteforce else nearest_distances
    precision = float(np.mean(nearest(a, b) < tau))
    recall = float(np.mean(nearest(b, a) < tau))
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)
