"""
Synthetic degradation of incident maps for robustness studies.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from src.error_handler import UsageError
from src.logging_config import get_logger
from src.models import IncidentMap

logger = get_logger(__name__)

# Rays rotated to within this of the image plane keep their original direction.
_MIN_FORWARD_Z = 1e-6


def _random_perpendicular(u: NDArray[np.float64], rng: np.random.Generator) -> NDArray[np.float64]:
    """Unit vectors orthogonal to each row of ``u`` with uniformly random azimuth."""
    g = rng.standard_normal(u.shape)
    a = g - np.sum(g * u, axis=1, keepdims=True) * u
    norm = np.linalg.norm(a, axis=1, keepdims=True)
    fallback = np.cross(u, np.array([1.0, 0.0, 0.0]))
    a = np.where(norm > 1e-12, a, fallback)
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def _rotate_rays(rays: NDArray[np.float64], sigma: float, rng: np.random.Generator) -> NDArray[np.float64]:
    u = rays / np.linalg.norm(rays, axis=1, keepdims=True)
    axis = _random_perpendicular(u, rng)
    theta = rng.normal(0.0, sigma, size=u.shape[0])[:, None]
    # Rodrigues' formula with the axis orthogonal to the ray.
    rotated = u * np.cos(theta) + np.cross(axis, u) * np.sin(theta)
    forward = rotated[:, 2] > _MIN_FORWARD_Z
    out = rays.copy()
    out[forward] = rotated[forward] / rotated[forward, 2:3]
    return out


def _cap_rays(count: int, max_angle: float, rng: np.random.Generator) -> NDArray[np.float64]:
    """Canonical rays uniformly distributed on the cap within ``max_angle`` of +Z."""
    cos_theta = rng.uniform(math.cos(max_angle), 1.0, size=count)
    phi = rng.uniform(0.0, 2.0 * math.pi, size=count)
    tan_theta = np.sqrt(1.0 - cos_theta**2) / cos_theta
    return np.stack([tan_theta * np.cos(phi), tan_theta * np.sin(phi), np.ones(count)], axis=1)


def perturb_incident_map(
    m: IncidentMap,
    angle_noise: float,
    outlier_frac: float,
    seed: int,
    max_outlier_angle_deg: Optional[float] = None,
) -> IncidentMap:
    """Add angular ray noise and replace a fraction of pixels with random rays.

    Every ray is rotated by an angle drawn from N(0, ``angle_noise``) about a
    random axis perpendicular to it. Then exactly ``round(outlier_frac * N)``
    pixels receive rays drawn uniformly within ``max_outlier_angle_deg`` of
    the optical axis. With both amounts at zero the map is returned unchanged.
    """
    if not (math.isfinite(angle_noise) and angle_noise >= 0):
        raise UsageError(f"angle noise must be non-negative, got {angle_noise}")
    if not 0.0 <= outlier_frac <= 1.0:
        raise UsageError(f"outlier fraction must be in [0, 1], got {outlier_frac}")
    if max_outlier_angle_deg is None:
        from src.config import get_settings

        max_outlier_angle_deg = get_settings().benchmark.outlier_max_angle_deg

    if angle_noise == 0 and outlier_frac == 0:
        return IncidentMap(geometry=m.geometry, data=m.data)

    rng = np.random.default_rng(seed)
    g = m.geometry
    rays = m.rays().reshape(-1, 3)
    if angle_noise > 0:
        rays = _rotate_rays(rays, angle_noise, rng)

    n_outliers = int(math.floor(outlier_frac * g.pixel_count + 0.5))
    if n_outliers:
        idx = rng.choice(g.pixel_count, size=n_outliers, replace=False)
        rays[idx] = _cap_rays(n_outliers, math.radians(max_outlier_angle_deg), rng)

    logger.debug(
        "Perturbed incident map",
        extra={
            "extra_data": {
                "angle_noise": angle_noise,
                "outliers": n_outliers,
                "seed": seed,
            }
        },
    )
    return IncidentMap(geometry=g, data=rays[:, :2].reshape(g.height, g.width, 2))
