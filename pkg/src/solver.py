"""
Intrinsics recovery from incident maps.

Two-point minimal solver, RANSAC with angular inlier scoring and
least-squares polishing, and the 1-DoF focal enumeration used when the
principal point is assumed to sit at the image center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from src.error_handler import (
    DegenerateSample,
    EmptyGrid,
    GeometryError,
    InvalidSolution,
    NoConsensus,
    RankDeficient,
    ShapeMismatch,
)
from src.geometry import centered_intrinsics, focal_from_fov
from src.logging_config import get_logger, log_performance
from src.models import (
    CalibrationEstimate,
    FocalGrid,
    ImageGeometry,
    IncidentMap,
    Intrinsics,
    PixelCoord,
    SolverConfig,
)

logger = get_logger(__name__)

# Attempts per trial to draw a non-degenerate pixel pair.
MAX_RESAMPLES = 16


# ── Minimal solver ─────────────────────────────────────────────────────────


def minimal_solve(
    p1: PixelCoord, v1: NDArray[np.floating], p2: PixelCoord, v2: NDArray[np.floating]
) -> Intrinsics:
    """Closed-form intrinsics from two pixel/ray correspondences.

    Raises:
        DegenerateSample: equal pixel coordinates or equal ray components on an axis.
        InvalidSolution: the pair implies a non-positive focal length.
    """
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if v1.shape != (3,) or v2.shape != (3,):
        raise ShapeMismatch("rays must be 3-vectors")
    if v1[2] != 1.0 or v2[2] != 1.0:
        raise GeometryError("rays must be in canonical z=1 form")

    dx, dy = p1.x - p2.x, p1.y - p2.y
    dvx, dvy = v1[0] - v2[0], v1[1] - v2[1]
    if dx == 0 or dy == 0 or dvx == 0 or dvy == 0:
        raise DegenerateSample(
            "pixel pair shares a coordinate or a ray component",
            {"p1": [p1.x, p1.y], "p2": [p2.x, p2.y]},
        )

    fx = dx / dvx
    fy = dy / dvy
    if not (fx > 0 and fy > 0 and math.isfinite(fx) and math.isfinite(fy)):
        raise InvalidSolution(f"non-positive focal from pair: fx={fx}, fy={fy}")

    bx = 0.5 * ((p1.x - v1[0] * fx) + (p2.x - v2[0] * fx))
    by = 0.5 * ((p1.y - v1[1] * fy) + (p2.y - v2[1] * fy))
    return Intrinsics(fx=fx, fy=fy, bx=bx, by=by)


# ── Residuals ──────────────────────────────────────────────────────────────


def angular_residual(v_obs: NDArray[np.floating], v_model: NDArray[np.floating]) -> float:
    """Angle in radians between two rays with positive z."""
    a = np.asarray(v_obs, dtype=np.float64)
    b = np.asarray(v_model, dtype=np.float64)
    if a.shape != (3,) or b.shape != (3,):
        raise ShapeMismatch("rays must be 3-vectors")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise GeometryError("rays must be finite")
    if not np.any(a) or not np.any(b):
        raise GeometryError("zero-length ray")
    if a[2] <= 0 or b[2] <= 0:
        raise GeometryError("rays must point forward (z > 0)")
    return float(np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b)))


def _ray_angles(
    vx: NDArray, vy: NDArray, mx: NDArray, my: NDArray
) -> NDArray[np.float64]:
    """Broadcast angle between (vx, vy, 1) and (mx, my, 1)."""
    cross, dot = _cross_dot(vx, vy, mx, my)
    return np.arctan2(cross, dot)


def _cross_dot(vx, vy, mx, my):
    c0 = vy - my
    c1 = mx - vx
    c2 = vx * my - vy * mx
    cross = np.sqrt(c0 * c0 + c1 * c1 + c2 * c2)
    dot = vx * mx + vy * my + 1.0
    return cross, dot


def model_residuals(m: IncidentMap, k: Intrinsics) -> NDArray[np.float64]:
    """Per-pixel angle between the map and the rays ``k`` predicts, HxW."""
    g = m.geometry
    mx = ((np.arange(g.width, dtype=np.float64) - k.bx) / k.fx)[None, :]
    my = ((np.arange(g.height, dtype=np.float64) - k.by) / k.fy)[:, None]
    vx = m.vx.astype(np.float64)
    vy = m.vy.astype(np.float64)
    return _ray_angles(vx, vy, mx, my)


# ── Scoring set ────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class _Samples:
    """Flat pixel coordinates and observed rays used for scoring."""

    x: NDArray[np.float64]
    y: NDArray[np.float64]
    vx: NDArray[np.float64]
    vy: NDArray[np.float64]
    stride: int

    @property
    def count(self) -> int:
        return self.x.shape[0]


def _scoring_samples(m: IncidentMap, max_pixels: int) -> _Samples:
    """Stride-subsample the map so at most ``max_pixels`` pixels are scored."""
    g = m.geometry
    stride = 1
    if g.pixel_count > max_pixels:
        stride = max(1, math.ceil(math.sqrt(g.pixel_count / max_pixels)))
        while math.ceil(g.width / stride) * math.ceil(g.height / stride) > max_pixels:
            stride += 1
    ys = np.arange(0, g.height, stride)
    xs = np.arange(0, g.width, stride)
    sub = m.data[::stride, ::stride].astype(np.float64)
    gx, gy = np.meshgrid(xs.astype(np.float64), ys.astype(np.float64))
    return _Samples(
        x=gx.ravel(), y=gy.ravel(), vx=sub[..., 0].ravel(), vy=sub[..., 1].ravel(), stride=stride
    )


def _count_inliers(samples: _Samples, models: NDArray[np.float64], tan_threshold: float) -> NDArray:
    """Inlier counts for a batch of models, rows ``[fx, fy, bx, by]``."""
    fx, fy, bx, by = (models[:, i : i + 1] for i in range(4))
    mx = (samples.x[None, :] - bx) / fx
    my = (samples.y[None, :] - by) / fy
    cross, dot = _cross_dot(samples.vx[None, :], samples.vy[None, :], mx, my)
    return np.count_nonzero((dot > 0) & (cross < dot * tan_threshold), axis=1)


def _required_trials(inlier_ratio: float, confidence: float) -> float:
    """Trials needed to draw one all-inlier pair with the given confidence."""
    if confidence >= 1.0:
        return math.inf
    p_pair = inlier_ratio * inlier_ratio
    if p_pair >= 1.0:
        return 1.0
    if p_pair <= 0.0:
        return math.inf
    return math.log(1.0 - confidence) / math.log(1.0 - p_pair)


def _trial_model(samples: _Samples, seed: int, trial: int) -> Optional[Intrinsics]:
    """One RANSAC hypothesis; the pair depends only on ``(seed, trial)``."""
    rng = np.random.default_rng([seed, trial])
    for _ in range(MAX_RESAMPLES):
        i, j = rng.integers(0, samples.count, size=2)
        try:
            return minimal_solve(
                PixelCoord(x=float(samples.x[i]), y=float(samples.y[i])),
                np.array([samples.vx[i], samples.vy[i], 1.0]),
                PixelCoord(x=float(samples.x[j]), y=float(samples.y[j])),
                np.array([samples.vx[j], samples.vy[j], 1.0]),
            )
        except DegenerateSample:
            continue
        except InvalidSolution:
            return None
    return None


# ── Least-squares refinement ───────────────────────────────────────────────


def _fit_axis(coord: NDArray[np.float64], ray: NDArray[np.float64], axis: str) -> tuple[float, float]:
    """Closed-form regression ``coord = focal * ray + center``."""
    if np.unique(coord).size < 2 or np.unique(ray).size < 2:
        raise RankDeficient(f"inliers need distinct {axis} coordinates and ray components")
    ray_mean = ray.mean()
    coord_mean = coord.mean()
    dr = ray - ray_mean
    focal = float(np.dot(dr, coord - coord_mean) / np.dot(dr, dr))
    center = float(coord_mean - focal * ray_mean)
    return focal, center


def refine_least_squares(
    m: IncidentMap, k0: Intrinsics, inlier_mask: NDArray[np.bool_]
) -> Intrinsics:
    """Polish intrinsics by two independent 1-D regressions over the inliers.

    Solves ``x = fx * v_x + bx`` and ``y = fy * v_y + by``, which minimizes
    the summed squared pixel reprojection residual, so the result is never
    worse than ``k0`` on the same inlier set.
    """
    mask = np.asarray(inlier_mask, dtype=bool)
    if mask.shape != m.geometry.shape:
        raise ShapeMismatch(f"inlier mask must have shape {m.geometry.shape}, got {mask.shape}")
    if np.count_nonzero(mask) < 2:
        raise RankDeficient("refinement needs at least two inliers")

    ys, xs = np.nonzero(mask)
    fx, bx = _fit_axis(xs.astype(np.float64), m.vx[mask].astype(np.float64), "x")
    fy, by = _fit_axis(ys.astype(np.float64), m.vy[mask].astype(np.float64), "y")
    if not (fx > 0 and fy > 0):
        raise InvalidSolution(f"refinement produced non-positive focal: fx={fx}, fy={fy}")
    logger.debug(
        "Refined intrinsics",
        extra={"extra_data": {"from": k0.as_tuple(), "to": (fx, fy, bx, by)}},
    )
    return Intrinsics(fx=fx, fy=fy, bx=bx, by=by)


def reprojection_sse(m: IncidentMap, k: Intrinsics, inlier_mask: NDArray[np.bool_]) -> float:
    """Summed squared pixel residual of ``k`` over the masked pixels."""
    mask = np.asarray(inlier_mask, dtype=bool)
    ys, xs = np.nonzero(mask)
    rx = xs - (k.fx * m.vx[mask] + k.bx)
    ry = ys - (k.fy * m.vy[mask] + k.by)
    return float(np.sum(rx * rx) + np.sum(ry * ry))


# ── RANSAC ─────────────────────────────────────────────────────────────────


def ransac_calibrate(m: IncidentMap, cfg: SolverConfig) -> CalibrationEstimate:
    """Robust 4-DoF calibration of an incident map.

    Hypotheses come from two-pixel minimal solves whose pixel pair is a
    pure function of ``(cfg.seed, trial index)``; they are scored in
    chunks of ``cfg.chunk_size`` by counting pixels whose ray lies within
    ``cfg.inlier_threshold`` of the model ray. Trials stop once
    ``cfg.iterations`` is reached, or earlier when at least
    ``cfg.min_trials`` have run and the best consensus already meets
    ``cfg.confidence``. The winner is then refined over its full-map
    inlier set.

    Raises:
        NoConsensus: no hypothesis reaches ``cfg.min_inlier_ratio``.
    """
    g = m.geometry
    if g.width < 2 or g.height < 2:
        raise GeometryError(f"map {g} is smaller than 2x2")

    log = logger.bind(width=g.width, height=g.height, seed=cfg.seed)
    samples = _scoring_samples(m, cfg.max_scored_pixels)
    tan_threshold = math.tan(cfg.inlier_threshold)

    best: Optional[Intrinsics] = None
    best_count = -1
    trials = 0
    with log_performance(log, "ransac_calibrate", scored_pixels=samples.count):
        while trials < cfg.iterations:
            stop = min(trials + cfg.chunk_size, cfg.iterations)
            hypotheses = [_trial_model(samples, cfg.seed, t) for t in range(trials, stop)]
            trials = stop
            valid = [h for h in hypotheses if h is not None]
            if valid:
                models = np.array([h.as_tuple() for h in valid], dtype=np.float64)
                counts = _count_inliers(samples, models, tan_threshold)
                top = int(np.argmax(counts))
                if counts[top] > best_count:
                    best_count = int(counts[top])
                    best = valid[top]
            if best is not None and trials >= cfg.min_trials:
                if trials >= _required_trials(best_count / samples.count, cfg.confidence):
                    break

    best_ratio = best_count / samples.count if best is not None else 0.0
    if best is None or best_ratio < cfg.min_inlier_ratio:
        raise NoConsensus(
            f"best hypothesis explains {best_ratio:.3f} of pixels, "
            f"below the required {cfg.min_inlier_ratio}",
            {"trials": trials, "best_inlier_ratio": best_ratio},
        )

    k, residuals = _polish(m, best, cfg)
    inlier_ratio = float(np.count_nonzero(residuals < cfg.inlier_threshold) / g.pixel_count)
    estimate = CalibrationEstimate(
        intrinsics=k,
        inlier_ratio=inlier_ratio,
        median_residual=float(np.median(residuals)),
        method="ransac",
        trials=trials,
    )
    log.info(
        "RANSAC calibration finished",
        extra={"extra_data": {"trials": trials, "inlier_ratio": round(inlier_ratio, 4)}},
    )
    return estimate


def _polish(
    m: IncidentMap, k: Intrinsics, cfg: SolverConfig
) -> tuple[Intrinsics, NDArray[np.float64]]:
    """Alternate inlier selection and least-squares refits until the set stabilizes."""
    residuals = model_residuals(m, k)
    mask = residuals < cfg.inlier_threshold
    for _ in range(cfg.refine_iterations):
        try:
            candidate = refine_least_squares(m, k, mask)
        except (RankDeficient, InvalidSolution) as e:
            logger.debug(f"Refinement stopped: {e}")
            break
        candidate_residuals = model_residuals(m, candidate)
        candidate_mask = candidate_residuals < cfg.inlier_threshold
        if np.count_nonzero(candidate_mask) < np.count_nonzero(mask):
            break
        k, residuals = candidate, candidate_residuals
        if np.array_equal(candidate_mask, mask):
            break
        mask = candidate_mask
    return k, residuals


# ── 1-DoF focal enumeration ────────────────────────────────────────────────


def default_focal_grid(
    g: ImageGeometry,
    size: Optional[int] = None,
    fov_min_deg: Optional[float] = None,
    fov_max_deg: Optional[float] = None,
) -> FocalGrid:
    """Log-spaced focal candidates spanning a horizontal field-of-view range."""
    from src.config import get_settings

    solver = get_settings().solver
    low = focal_from_fov(g.width, fov_max_deg or solver.fov_max_deg)
    high = focal_from_fov(g.width, fov_min_deg or solver.fov_min_deg)
    return FocalGrid.log_spaced(low, high, size or solver.focal_grid_size)


def enumerate_focal(
    m: IncidentMap,
    g: ImageGeometry,
    grid: FocalGrid,
    inlier_threshold: Optional[float] = None,
    max_scored_pixels: Optional[int] = None,
) -> CalibrationEstimate:
    """Pick the candidate focal whose centered model has the lowest median residual.

    The principal point is fixed at ``(w/2, h/2)`` and ``fx = fy``. Ties go
    to the smaller focal.
    """
    from src.config import get_settings

    if len(grid) == 0:
        raise EmptyGrid("focal grid is empty")
    if g != m.geometry:
        raise ShapeMismatch(f"geometry {g} does not match map {m.geometry}")

    solver = get_settings().solver
    threshold = inlier_threshold or solver.inlier_threshold
    samples = _scoring_samples(m, max_scored_pixels or solver.max_scored_pixels)
    dx = (samples.x - g.width / 2.0)[None, :]
    dy = (samples.y - g.height / 2.0)[None, :]
    candidates = np.asarray(grid.candidates, dtype=np.float64)

    medians = np.empty(candidates.shape[0], dtype=np.float64)
    chunk = 16
    with log_performance(logger, "enumerate_focal", candidates=len(grid)):
        for start in range(0, candidates.shape[0], chunk):
            f = candidates[start : start + chunk, None]
            angles = _ray_angles(samples.vx[None, :], samples.vy[None, :], dx / f, dy / f)
            medians[start : start + chunk] = np.median(angles, axis=1)

    best = int(np.argmin(medians))
    k = centered_intrinsics(float(candidates[best]), g)
    residuals = model_residuals(m, k)
    return CalibrationEstimate(
        intrinsics=k,
        inlier_ratio=float(np.count_nonzero(residuals < threshold) / g.pixel_count),
        median_residual=float(medians[best]),
        method="enumerate",
        trials=len(grid),
    )


def calibrate(
    m: IncidentMap, cfg: SolverConfig, grid: Optional[FocalGrid] = None
) -> CalibrationEstimate:
    """Dispatch to focal enumeration when ``cfg.assume_centered`` else RANSAC."""
    if cfg.assume_centered:
        return enumerate_focal(
            m,
            m.geometry,
            grid or default_focal_grid(m.geometry),
            inlier_threshold=cfg.inlier_threshold,
            max_scored_pixels=cfg.max_scored_pixels,
        )
    return ransac_calibrate(m, cfg)
