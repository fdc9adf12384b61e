"""
Command-line entry point.

Usage:
    python -m src.main synth --fixture scannet --out m.imap
    python -m src.main perturb --in m.imap --out p.imap --angle-noise 0.01 --outlier-frac 0.2 --seed 7
    python -m src.main calibrate --in p.imap --gt scannet.json
    python -m src.main reconstruct --depth d.dmap --intrinsics k.json --out cloud.ply
    python -m src.main benchmark --fixtures scannet,waymo --noise-grid 0:0,0.01:0.2 --trials 5 --seed 1 --out report.json

Results are printed as JSON on standard output; logs go to standard error.
Exit status is 0 on success, 1 on a failed operation and 2 on bad usage.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from src.batch import parse_fixture_list, parse_noise_grid, run_benchmark, write_report
from src.config import get_settings
from src.diffusion import (
    default_schedule,
    depth_tri_decode,
    depth_tri_encode,
    ensemble_generate,
    field_to_incident,
    incident_field,
    joint_field,
    oracle_denoiser,
    perturbed_denoiser,
    split_joint_field,
)
from src.error_handler import GeometryMismatch, UsageError, handle_cli_error
from src.geometry import synthesize_incident_map
from src.logging_config import get_logger, setup_logging
from src.metrics import align_affine, align_scale, apply_alignment, calib_error, depth_errors
from src.models import DepthMap, ImageGeometry, IncidentMap, Intrinsics, SolverConfig
from src.perturb import perturb_incident_map
from src.raster_io import (
    FIXTURES,
    export_png,
    fixture_intrinsics,
    intrinsics_dict,
    read_intrinsics,
    read_map,
    write_map,
)
from src.recon import align_to_reference, unproject, write_ply
from src.solver import calibrate

logger = get_logger(__name__)


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors as JSON instead of exiting."""

    def error(self, message: str):
        raise UsageError(message, {"usage": self.format_usage().strip()})


def _emit(doc: dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(doc, indent=2) + "\n")


def parse_size(text: str) -> ImageGeometry:
    """Parse ``WxH`` into an image geometry."""
    try:
        width, height = (int(v) for v in text.lower().split("x"))
        return ImageGeometry(width=width, height=height)
    except (ValueError, ValidationError) as e:
        raise UsageError(f"bad size {text!r}; expected WxH with both sides at least 2") from e


def _camera_source(args: argparse.Namespace) -> tuple[Intrinsics, ImageGeometry]:
    """Intrinsics and geometry from ``--fixture`` or ``--intrinsics-json``, sized by ``--size``."""
    if args.fixture:
        entry = fixture_intrinsics(args.fixture)
        k, g = entry.intrinsics, entry.geometry
    else:
        k, g = read_intrinsics(args.intrinsics_json)
    if args.size:
        g = parse_size(args.size)
    return k, g


def _estimate_doc(estimate, gt: Optional[Intrinsics] = None, g: Optional[ImageGeometry] = None) -> dict:
    doc = {
        "intrinsics": estimate.intrinsics.model_dump(),
        "inlier_ratio": estimate.inlier_ratio,
        "median_residual": estimate.median_residual,
        "method": estimate.method,
        "trials": estimate.trials,
    }
    if gt is not None and g is not None:
        err = calib_error(gt, estimate.intrinsics, g)
        doc.update(e_f=err.e_f, e_b=err.e_b)
    return doc


# ─── Commands ─────────────────────────────────────────────────────


def cmd_synth(args: argparse.Namespace) -> int:
    k, g = _camera_source(args)
    write_map(args.out, synthesize_incident_map(k, g))
    _emit(intrinsics_dict(k, g))
    return 0


def cmd_perturb(args: argparse.Namespace) -> int:
    m = read_map(args.input, expect=IncidentMap)
    out = perturb_incident_map(m, args.angle_noise, args.outlier_frac, seed=args.seed)
    write_map(args.out, out)
    _emit(
        {
            "out": str(args.out),
            "width": m.geometry.width,
            "height": m.geometry.height,
            "angle_noise": args.angle_noise,
            "outlier_frac": args.outlier_frac,
            "seed": args.seed,
        }
    )
    return 0


def cmd_calibrate(args: argparse.Namespace) -> int:
    m = read_map(args.input, expect=IncidentMap)
    cfg = SolverConfig.from_settings(
        iterations=args.iters,
        inlier_threshold=args.threshold,
        seed=args.seed,
        assume_centered=args.asm,
    )
    gt = g = None
    if args.gt:
        gt, g = read_intrinsics(args.gt)
        if g != m.geometry:
            raise GeometryMismatch(f"ground-truth geometry {g} does not match map {m.geometry}")
    _emit(_estimate_doc(calibrate(m, cfg), gt, g))
    return 0


def cmd_reconstruct(args: argparse.Namespace) -> int:
    depth = read_map(args.depth, expect=DepthMap)
    doc: dict[str, Any] = {}
    if args.intrinsics:
        k, g = read_intrinsics(args.intrinsics)
        if g != depth.geometry:
            raise GeometryMismatch(f"intrinsics geometry {g} does not match depth {depth.geometry}")
    else:
        m = read_map(args.from_imap, expect=IncidentMap)
        if m.geometry != depth.geometry:
            raise GeometryMismatch(f"incident map {m.geometry} does not match depth {depth.geometry}")
        estimate = calibrate(m, SolverConfig.from_settings(seed=args.seed, assume_centered=args.asm))
        k = estimate.intrinsics
        doc["calibration"] = _estimate_doc(estimate)

    reference = read_map(args.reference, expect=DepthMap) if args.reference else None
    if reference is not None and reference.geometry != depth.geometry:
        raise GeometryMismatch(f"reference {reference.geometry} does not match depth {depth.geometry}")
    aligned, alignment = align_to_reference(depth, reference, scale_only=args.scale_only)

    cloud = unproject(aligned, k)
    write_ply(args.out, cloud)
    doc.update(
        out=str(args.out),
        points=len(cloud),
        intrinsics=k.model_dump(),
        alignment=alignment._asdict() if alignment else None,
    )
    if alignment is None:
        doc["note"] = "no reference depth given; shift assumed to be 0"
    _emit(doc)
    return 0


def cmd_benchmark(args: argparse.Namespace) -> int:
    fixtures = parse_fixture_list(args.fixtures) if args.fixtures else list(FIXTURES.values())
    report = run_benchmark(
        fixtures,
        parse_noise_grid(args.noise_grid),
        trials=args.trials,
        seed=args.seed,
        workers=args.workers,
        max_side=args.max_side,
        assume_centered=args.asm,
    )
    csv_path = write_report(report, args.out)
    _emit(
        {
            "out": str(args.out),
            "csv": str(csv_path),
            "summary": report.summary.model_dump(exclude={"groups"}),
        }
    )
    return 1 if report.failed else 0


def cmd_fixtures(args: argparse.Namespace) -> int:
    _emit(
        {
            name: {**intrinsics_dict(e.intrinsics, e.geometry), "source": e.source}
            for name, e in FIXTURES.items()
        }
    )
    return 0


def cmd_evaluate_depth(args: argparse.Namespace) -> int:
    pred = read_map(args.pred, expect=DepthMap)
    gt = read_map(args.gt, expect=DepthMap)
    if pred.geometry != gt.geometry:
        raise GeometryMismatch(f"prediction {pred.geometry} does not match ground truth {gt.geometry}")
    alignment = align_scale(pred, gt) if args.scale_only else align_affine(pred, gt)
    errors = depth_errors(apply_alignment(pred, alignment), gt)
    _emit({"alignment": alignment._asdict(), **errors._asdict()})
    return 0


def _scene_depth(g: ImageGeometry) -> DepthMap:
    """Depth of a floor receding towards the top of the frame."""
    rows = 2.0 + 2.0 * np.linspace(1.0, 0.0, g.height)
    return DepthMap.from_array(np.repeat(rows[:, None], g.width, axis=1))


def cmd_simulate(args: argparse.Namespace) -> int:
    k, g = _camera_source(args)
    diffusion = get_settings().diffusion
    sched = default_schedule()
    if args.depth:
        depth = read_map(args.depth, expect=DepthMap)
        if depth.geometry != g:
            raise GeometryMismatch(f"depth {depth.geometry} does not match the camera's {g}")
    else:
        depth = _scene_depth(g)

    z0 = joint_field(incident_field(synthesize_incident_map(k, g)), depth_tri_encode(depth))
    den = perturbed_denoiser(z0, sched, args.sigma) if args.sigma > 0 else oracle_denoiser(z0, sched)

    result = ensemble_generate(
        den,
        z0,
        args.ensemble or diffusion.ensemble_size,
        sched,
        args.steps or diffusion.inference_steps,
        seed=args.seed,
        aggregation=diffusion.aggregation,
        workers=get_settings().workers,
    )
    incidence, depth_block = split_joint_field(result.mean)
    estimate = calibrate(
        field_to_incident(incidence),
        SolverConfig.from_settings(seed=args.seed, assume_centered=args.asm),
    )
    generated = depth_tri_decode(depth_block)
    if args.depth_out:
        write_map(args.depth_out, generated)
    errors = depth_errors(apply_alignment(generated, align_affine(generated, depth)), depth)

    doc = _estimate_doc(estimate, k, g)
    doc.update(
        ensemble_size=result.size,
        mean_stddev=float(np.mean(result.stddev.data)),
        depth_abs_rel=errors.abs_rel,
        depth_delta1=errors.delta1,
    )
    _emit(doc)
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    m = read_map(args.input)
    sidecar = export_png(args.out, m, unit=args.unit)
    _emit({"sidecar": str(sidecar), **json.loads(sidecar.read_text(encoding="utf-8"))})
    return 0


# ─── Parser ───────────────────────────────────────────────────────


def _add_camera_source(p: argparse.ArgumentParser) -> None:
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--fixture", help="Embedded dataset intrinsics")
    source.add_argument("--intrinsics-json", type=Path, help="Intrinsics JSON file")
    p.add_argument("--size", help="Map size WxH (default: the source's geometry)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="incical", description="Incident-field camera calibration toolkit")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--json-logs", action="store_true", default=None, help="JSON logs on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Write the incident map of a pinhole camera")
    _add_camera_source(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("perturb", help="Add ray noise and outliers to an incident map")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--angle-noise", type=float, default=0.0, help="Radians")
    p.add_argument("--outlier-frac", type=float, default=0.0)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("calibrate", help="Recover intrinsics from an incident map")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--asm", action="store_true", help="Centered principal point, fx = fy")
    p.add_argument("--iters", type=int)
    p.add_argument("--threshold", type=float, help="Inlier threshold in radians")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gt", type=Path, help="Ground-truth intrinsics JSON")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("reconstruct", help="Unproject a depth map to an ASCII PLY")
    p.add_argument("--depth", type=Path, required=True)
    camera = p.add_mutually_exclusive_group(required=True)
    camera.add_argument("--intrinsics", type=Path, help="Intrinsics JSON")
    camera.add_argument("--from-imap", type=Path, help="Calibrate this incident map first")
    p.add_argument("--asm", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reference", type=Path, help="Metric depth used for scale/shift alignment")
    p.add_argument("--scale-only", action="store_true")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("benchmark", help="Monte-Carlo calibration benchmark")
    p.add_argument("--fixtures", help="Comma-separated fixture names (default: all)")
    p.add_argument("--noise-grid", default="0:0,0.01:0.2", help="sigma:frac pairs")
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int)
    p.add_argument("--max-side", type=int)
    p.add_argument("--asm", action="store_true")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("fixtures", help="List embedded dataset intrinsics")
    p.set_defaults(func=cmd_fixtures)

    p = sub.add_parser("evaluate-depth", help="Affine-invariant AbsRel and delta1")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--scale-only", action="store_true")
    p.set_defaults(func=cmd_evaluate_depth)

    p = sub.add_parser("simulate", help="Ensemble generation with a test denoiser, then calibrate")
    _add_camera_source(p)
    p.add_argument("--sigma", type=float, default=0.0, help="Per-run denoiser error; 0 is the oracle")
    p.add_argument("--ensemble", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--asm", action="store_true")
    p.add_argument("--depth", type=Path, help="Scene DMAP generated alongside the incidence")
    p.add_argument("--depth-out", type=Path, help="Write the generated depth as DMAP")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export", help="16-bit PNG visualization of an IMAP/DMAP file")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="Output stem")
    p.add_argument("--unit", action="store_true", help="Export unit-normalized rays")
    p.set_defaults(func=cmd_export)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        setup_logging()
        return handle_cli_error(e, sys.stdout)

    setup_logging(args.log_level, args.json_logs)
    func: Callable[[argparse.Namespace], int] = args.func
    logger.debug(f"Running {args.command}")
    try:
        return func(args)
    except ValidationError as e:
        return handle_cli_error(UsageError(f"invalid argument: {e.errors()[0]['msg']}"), sys.stdout)
    except Exception as e:
        return handle_cli_error(e, sys.stdout)


if __name__ == "__main__":
    sys.exit(main())
