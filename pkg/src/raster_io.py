"""
Serialization of incident maps, depth maps and intrinsics, plus the
embedded dataset-intrinsics fixtures.

IMAP / DMAP layout (little-endian):

    offset  size  field
         0     4  magic     b"IMAP" or b"DMAP"
         4     4  version   uint32
         8     4  width     uint32
        12     4  height    uint32
        16     4  channels  uint32 (2 for IMAP, 1 for DMAP)
        20     4  reserved  uint32, written as 0
        24     *  payload   float32, row-major, channels interleaved

Payload values are float32, so maps held in float64 are rounded once on
write; from then on read and write are exact inverses.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Union

import numpy as np
from numpy.typing import NDArray
from PIL import Image
from pydantic import ValidationError

from src.error_handler import (
    BadMagic,
    CorruptHeader,
    GeometryError,
    InvalidIntrinsics,
    MalformedFile,
    MissingKey,
    TruncatedPayload,
    UnknownFixture,
    VersionMismatch,
)
from src.logging_config import get_logger
from src.models import (
    DepthMap,
    FixtureEntry,
    ImageGeometry,
    IncidentMap,
    Intrinsics,
    MapFileHeader,
)

logger = get_logger(__name__)

FORMAT_VERSION = 1
HEADER_DTYPE = np.dtype(
    [
        ("magic", "S4"),
        ("version", "<u4"),
        ("width", "<u4"),
        ("height", "<u4"),
        ("channels", "<u4"),
        ("reserved", "<u4"),
    ]
)
HEADER_SIZE = HEADER_DTYPE.itemsize
PAYLOAD_DTYPE = np.dtype("<f4")

Raster = Union[IncidentMap, DepthMap]
PathLike = Union[str, Path]


# ── IMAP / DMAP ────────────────────────────────────────────────────────────


def _header_for(m: Raster) -> MapFileHeader:
    g = m.geometry
    if isinstance(m, IncidentMap):
        return MapFileHeader(magic="IMAP", version=FORMAT_VERSION, width=g.width, height=g.height, channels=2)
    if isinstance(m, DepthMap):
        return MapFileHeader(magic="DMAP", version=FORMAT_VERSION, width=g.width, height=g.height, channels=1)
    raise TypeError(f"cannot serialize {type(m).__name__}")


def encode_map(m: Raster) -> bytes:
    header = _header_for(m)
    raw = np.zeros((), dtype=HEADER_DTYPE)
    raw["magic"] = header.magic.encode("ascii")
    raw["version"] = header.version
    raw["width"] = header.width
    raw["height"] = header.height
    raw["channels"] = header.channels
    values = m.data if isinstance(m, IncidentMap) else m.values
    return raw.tobytes() + np.ascontiguousarray(values, dtype=PAYLOAD_DTYPE).tobytes()


def decode_header(buf: bytes) -> MapFileHeader:
    """Parse and validate the 24-byte header."""
    if len(buf) < HEADER_SIZE:
        raise CorruptHeader(f"file holds {len(buf)} bytes, shorter than the {HEADER_SIZE}-byte header")
    raw = np.frombuffer(buf, dtype=HEADER_DTYPE, count=1)[0]
    magic = bytes(buf[:4])
    if magic not in (b"IMAP", b"DMAP"):
        raise BadMagic(f"unknown magic {magic!r}", {"magic": magic.hex()})
    version = int(raw["version"])
    if version != FORMAT_VERSION:
        raise VersionMismatch(
            f"file version {version}, reader supports {FORMAT_VERSION}",
            {"version": version},
        )
    try:
        return MapFileHeader(
            magic=magic.decode("ascii"),
            version=version,
            width=int(raw["width"]),
            height=int(raw["height"]),
            channels=int(raw["channels"]),
        )
    except ValidationError as e:
        raise CorruptHeader(f"invalid header fields: {e.errors()[0]['msg']}") from e


def decode_map(buf: bytes) -> Raster:
    header = decode_header(buf)
    payload = len(buf) - HEADER_SIZE
    if payload != header.payload_bytes:
        raise TruncatedPayload(
            f"header declares {header.payload_bytes} payload bytes, file holds {payload}",
            {"expected": header.payload_bytes, "actual": payload},
        )
    values = np.frombuffer(buf, dtype=PAYLOAD_DTYPE, offset=HEADER_SIZE).astype(np.float32)
    g = ImageGeometry(width=header.width, height=header.height)
    if header.magic == "IMAP":
        return IncidentMap(geometry=g, data=values.reshape(header.height, header.width, 2))
    return DepthMap.from_array(values.reshape(header.height, header.width))


def write_map(path: PathLike, m: Raster) -> None:
    """Write an IMAP or DMAP file."""
    data = encode_map(m)
    Path(path).write_bytes(data)
    logger.debug(f"Wrote {len(data)} bytes to {path}")


def read_map(path: PathLike, expect: Optional[type] = None) -> Raster:
    """Read an IMAP or DMAP file, optionally insisting on the map type."""
    m = decode_map(Path(path).read_bytes())
    if expect is not None and not isinstance(m, expect):
        raise MalformedFile(f"{path} holds a {type(m).__name__}, expected {expect.__name__}")
    return m


# ── Intrinsics JSON ────────────────────────────────────────────────────────

_INTRINSIC_KEYS = ("fx", "fy", "bx", "by")
_GEOMETRY_KEYS = ("width", "height")


def intrinsics_dict(k: Intrinsics, g: ImageGeometry) -> dict[str, Union[float, int]]:
    return {"fx": k.fx, "fy": k.fy, "bx": k.bx, "by": k.by, "width": g.width, "height": g.height}


def intrinsics_json(k: Intrinsics, g: ImageGeometry) -> str:
    return json.dumps(intrinsics_dict(k, g), indent=2)


def parse_intrinsics_json(text: str) -> tuple[Intrinsics, ImageGeometry]:
    """Parse and validate an intrinsics document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedFile(f"intrinsics are not valid JSON: {e.msg}") from e
    if not isinstance(doc, dict):
        raise MalformedFile("intrinsics JSON must be an object")

    missing = [key for key in _INTRINSIC_KEYS + _GEOMETRY_KEYS if key not in doc]
    if missing:
        raise MissingKey(f"intrinsics JSON lacks {', '.join(missing)}", {"missing": missing})
    for key in _GEOMETRY_KEYS:
        if isinstance(doc[key], bool) or not isinstance(doc[key], int):
            raise GeometryError(f"{key} must be an integer, got {doc[key]!r}")
    for key in _INTRINSIC_KEYS:
        if isinstance(doc[key], bool) or not isinstance(doc[key], (int, float)):
            raise InvalidIntrinsics(f"{key} must be a number, got {doc[key]!r}")
    try:
        k = Intrinsics(**{key: doc[key] for key in _INTRINSIC_KEYS})
    except ValidationError as e:
        raise InvalidIntrinsics(f"invalid intrinsics: {e.errors()[0]['msg']}", {"document": doc}) from e
    try:
        g = ImageGeometry(width=doc["width"], height=doc["height"])
    except ValidationError as e:
        raise GeometryError(f"invalid geometry: {e.errors()[0]['msg']}", {"document": doc}) from e
    return k, g


def read_intrinsics(path: PathLike) -> tuple[Intrinsics, ImageGeometry]:
    return parse_intrinsics_json(Path(path).read_text(encoding="utf-8"))


# ── Fixtures ───────────────────────────────────────────────────────────────

# Published dataset intrinsics [fx, fy, bx, by] with the native frame size.
_FIXTURE_TABLE: dict[str, tuple[tuple[float, float, float, float], tuple[int, int], str]] = {
    "hypersim": ((889.0, 889.0, 512.0, 384.0), (1024, 768), "Hypersim, synthetic indoor"),
    "nuscenes": ((1266.24, 1266.42, 816.27, 491.51), (1600, 900), "nuScenes front camera"),
    "kitti": ((718.86, 718.86, 607.19, 185.22), (1242, 375), "KITTI odometry"),
    "cityscapes": ((2267.86, 2230.28, 1045.53, 518.88), (2048, 1024), "Cityscapes"),
    "nyu": ((518.85, 519.47, 325.58, 253.74), (640, 480), "NYU Depth v2"),
    "sun3d": ((570.34, 570.32, 320.0, 240.0), (640, 480), "SUN3D"),
    "arkitscenes": ((1601.95, 1601.95, 936.55, 709.61), (1920, 1440), "ARKitScenes"),
    "objectron": ((1579.18, 1579.18, 721.01, 934.70), (1440, 1920), "Objectron, portrait"),
    "waymo": ((2060.56, 2060.56, 947.46, 634.37), (1920, 1280), "Waymo Open front camera"),
    "rgbd": ((570.0, 570.0, 320.0, 240.0), (640, 480), "TUM RGB-D"),
    "scannet": ((1165.72, 1165.74, 649.09, 484.77), (1296, 968), "ScanNet color camera"),
    "mvs": ((570.0, 570.0, 320.0, 240.0), (640, 480), "MVS"),
    "scenes11": ((570.0, 570.0, 320.0, 240.0), (640, 480), "Scenes11, synthetic"),
}

FIXTURES: dict[str, FixtureEntry] = {
    name: FixtureEntry(
        name=name,
        intrinsics=Intrinsics.from_sequence(k),
        geometry=ImageGeometry(width=size[0], height=size[1]),
        source=source,
    )
    for name, (k, size, source) in _FIXTURE_TABLE.items()
}


def fixture_names() -> list[str]:
    return list(FIXTURES)


def fixture_intrinsics(name: str) -> FixtureEntry:
    try:
        return FIXTURES[name]
    except KeyError:
        raise UnknownFixture(
            f"unknown fixture {name!r}; known fixtures: {', '.join(FIXTURES)}",
            {"known": fixture_names()},
        ) from None


# ── 16-bit PNG visualization ───────────────────────────────────────────────

PNG_MAX_CODE = 65535


def _quantize(channel: NDArray[np.floating]) -> tuple[NDArray[np.uint16], float, float]:
    """Affine map of the finite range onto 0..65535; non-finite pixels become 0."""
    finite = np.isfinite(channel)
    if not finite.any():
        return np.zeros(channel.shape, dtype=np.uint16), 0.0, 0.0
    lo = float(channel[finite].min())
    hi = float(channel[finite].max())
    codes = np.zeros(channel.shape, dtype=np.float64)
    if hi > lo:
        codes[finite] = np.round((channel[finite] - lo) / (hi - lo) * PNG_MAX_CODE)
    return codes.astype(np.uint16), lo, hi


def export_png(stem: PathLike, m: Raster, unit: bool = False) -> Path:
    """Write one 16-bit PNG per channel and a JSON sidecar with each channel's range.

    ``unit`` exports the three components of unit-normalized rays instead of
    the canonical two. Returns the sidecar path. For visualization only: the
    quantization is lossy.
    """
    stem = Path(stem)
    if isinstance(m, IncidentMap):
        planes = m.unit_vectors() if unit else m.data
        kind = "incident_unit" if unit else "incident"
    else:
        planes = m.values[..., None]
        kind = "depth"

    channels = []
    for c in range(planes.shape[-1]):
        codes, lo, hi = _quantize(planes[..., c])
        target = stem.with_name(f"{stem.name}.c{c}.png")
        Image.fromarray(codes).save(target, format="PNG")
        channels.append({"file": target.name, "min": lo, "max": hi})

    sidecar = stem.with_name(f"{stem.name}.json")
    sidecar.write_text(
        json.dumps(
            {
                "kind": kind,
                "width": m.geometry.width,
                "height": m.geometry.height,
                "channels": channels,
            },
            indent=2,
        ),
        encoding="utf-8",
    )
    logger.debug(f"Exported {len(channels)} PNG channel(s) for {stem}")
    return sidecar
