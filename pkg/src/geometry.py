"""
Pinhole camera model and incident-map synthesis.

An incident map stores, for every pixel center (x, y), the ray
[(x - bx) / fx, (y - by) / fy, 1] through the camera center. The map
is invariant to cropping and resizing as long as the intrinsics follow
the same transformation, which is what the helpers below implement.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.typing import NDArray

from src.error_handler import GeometryError
from src.models import ImageGeometry, IncidentMap, Intrinsics, PixelCoord


def incident_vector(k: Intrinsics, p: PixelCoord) -> NDArray[np.float64]:
    """Canonical ray through pixel ``p``: ``[(x - bx)/fx, (y - by)/fy, 1]``."""
    return np.array([(p.x - k.bx) / k.fx, (p.y - k.by) / k.fy, 1.0], dtype=np.float64)


def synthesize_incident_map(k: Intrinsics, g: ImageGeometry) -> IncidentMap:
    """Dense incident map sampled at integer pixel centers."""
    xs = (np.arange(g.width, dtype=np.float64) - k.bx) / k.fx
    ys = (np.arange(g.height, dtype=np.float64) - k.by) / k.fy
    data = np.empty((g.height, g.width, 2), dtype=np.float64)
    data[..., 0] = xs[None, :]
    data[..., 1] = ys[:, None]
    return IncidentMap(geometry=g, data=data)


def crop_intrinsics(k: Intrinsics, offset: PixelCoord) -> Intrinsics:
    """Intrinsics of a window whose top-left pixel sits at ``offset``."""
    return Intrinsics(fx=k.fx, fy=k.fy, bx=k.bx - offset.x, by=k.by - offset.y)


def crop_incident_map(m: IncidentMap, offset: PixelCoord, size: ImageGeometry) -> IncidentMap:
    """Cut a ``size`` window at integer ``offset`` out of an incident map."""
    ox, oy = int(offset.x), int(offset.y)
    if ox != offset.x or oy != offset.y:
        raise GeometryError("map crops need integer offsets", {"offset": [offset.x, offset.y]})
    if ox < 0 or oy < 0 or ox + size.width > m.geometry.width or oy + size.height > m.geometry.height:
        raise GeometryError(
            f"crop window {size} at ({ox}, {oy}) does not fit inside {m.geometry}"
        )
    return IncidentMap(
        geometry=size, data=m.data[oy : oy + size.height, ox : ox + size.width]
    )


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def resize_intrinsics(
    k: Intrinsics, g: ImageGeometry, s: float
) -> tuple[Intrinsics, ImageGeometry]:
    """Scale intrinsics and geometry by ``s``; dimensions round to the nearest integer."""
    if not (math.isfinite(s) and s > 0):
        raise GeometryError(f"resize scale must be positive, got {s}")
    width, height = _round_half_up(g.width * s), _round_half_up(g.height * s)
    if width < 2 or height < 2:
        raise GeometryError(
            f"resizing {g} by {s} gives a degenerate {width}x{height} image",
            {"scale": s},
        )
    scaled = Intrinsics(fx=k.fx * s, fy=k.fy * s, bx=k.bx * s, by=k.by * s)
    return scaled, ImageGeometry(width=width, height=height)


def apply_augmentation(
    k: Intrinsics, g: ImageGeometry, scale: float, offset: PixelCoord
) -> tuple[Intrinsics, ImageGeometry]:
    """Enlarge by ``scale`` then crop a ``g``-sized window at ``offset``."""
    if scale < 1:
        raise GeometryError(f"augmentation only enlarges, got scale {scale}")
    enlarged_k, enlarged_g = resize_intrinsics(k, g, scale)
    if (
        offset.x < 0
        or offset.y < 0
        or offset.x + g.width > enlarged_g.width
        or offset.y + g.height > enlarged_g.height
    ):
        raise GeometryError(f"crop offset ({offset.x}, {offset.y}) leaves the {enlarged_g} frame")
    return crop_intrinsics(enlarged_k, offset), g


def augment_intrinsics(
    k: Intrinsics, g: ImageGeometry, rng: np.random.Generator
) -> tuple[Intrinsics, ImageGeometry]:
    """Random enlargement up to 2x followed by a random crop back to ``g``.

    Draw order is fixed (scale, then x offset, then y offset) so a seeded
    generator reproduces the same augmentation.
    """
    scale = float(rng.uniform(1.0, 2.0))
    _, enlarged = resize_intrinsics(k, g, scale)
    ox = int(rng.integers(0, enlarged.width - g.width + 1))
    oy = int(rng.integers(0, enlarged.height - g.height + 1))
    return apply_augmentation(k, g, scale, PixelCoord(x=ox, y=oy))


# ---------------------------------------------------------------------------
# Field-of-view helpers
# ---------------------------------------------------------------------------


def focal_from_fov(size: int, fov_deg: float) -> float:
    """Focal length in pixels giving ``fov_deg`` across ``size`` pixels."""
    if size <= 0:
        raise GeometryError(f"size must be positive, got {size}")
    if not 0.0 < fov_deg < 180.0:
        raise GeometryError(f"fov_deg must be in (0, 180), got {fov_deg}")
    return (size / 2.0) / math.tan(math.radians(fov_deg) / 2.0)


def fov_from_focal(focal: float, size: int) -> float:
    """Field of view in degrees spanned by ``size`` pixels at focal ``focal``."""
    if focal <= 0 or size <= 0:
        raise GeometryError("focal and size must be positive")
    return math.degrees(2.0 * math.atan((size / 2.0) / focal))


def centered_intrinsics(focal: float, g: ImageGeometry) -> Intrinsics:
    """Square-pixel intrinsics with the principal point at the image center."""
    return Intrinsics(fx=focal, fy=focal, bx=g.width / 2.0, by=g.height / 2.0)
