"""
Benchmark Harness

Runs synth -> perturb -> calibrate -> score over a grid of fixtures,
noise settings and trials. Each trial is isolated: a failure becomes an
error row and the run continues. Trials may execute on a thread pool;
row order is always (fixture, setting, trial).
"""

from __future__ import annotations

import csv
import io
import statistics
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.error_handler import AppException, UsageError
from src.geometry import resize_intrinsics, synthesize_incident_map
from src.logging_config import get_logger, log_performance
from src.metrics import calib_error
from src.models import FixtureEntry, ImageGeometry, Intrinsics, SolverConfig
from src.perturb import perturb_incident_map
from src.raster_io import fixture_intrinsics
from src.solver import calibrate

logger = get_logger(__name__)


# ─── Models ───────────────────────────────────────────────────────


class JobStatus(str, Enum):
    PENDING = "pending"
    PROCESSING = "processing"
    COMPLETED = "completed"
    FAILED = "failed"


class NoiseSetting(BaseModel):
    """Ray noise (radians) and outlier fraction applied to one benchmark cell."""

    model_config = ConfigDict(frozen=True)

    sigma: float = Field(..., ge=0.0)
    outlier_frac: float = Field(..., ge=0.0, le=1.0)

    @property
    def label(self) -> str:
        return f"{self.sigma:g}:{self.outlier_frac:g}"


class TrialRecord(BaseModel):
    """One benchmark row. Failed trials carry ``error`` and no scores."""

    fixture: str
    sigma: float
    outlier_frac: float
    trial: int
    seed: int
    e_f: Optional[float] = None
    e_b: Optional[float] = None
    inlier_ratio: Optional[float] = None
    runtime_ms: float = 0.0
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


class GroupSummary(BaseModel):
    fixture: str
    sigma: float
    outlier_frac: float
    trials: int
    failures: int
    median_e_f: Optional[float] = None
    median_e_b: Optional[float] = None


class BenchmarkSummary(BaseModel):
    """Medians recomputable from the per-trial rows."""

    trials: int
    failures: int
    median_e_f: Optional[float] = None
    median_e_b: Optional[float] = None
    groups: list[GroupSummary] = Field(default_factory=list)


class BenchmarkReport(BaseModel):
    config: dict[str, Any]
    rows: list[TrialRecord]
    summary: BenchmarkSummary

    @property
    def failed(self) -> bool:
        return self.summary.failures > 0


class BenchmarkJob(BaseModel):
    """Tracks progress of a benchmark run."""

    id: str = Field(default_factory=lambda: str(uuid.uuid4()))
    status: JobStatus = JobStatus.PENDING
    total_trials: int = 0
    processed: int = 0
    succeeded: int = 0
    failed: int = 0
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    completed_at: Optional[datetime] = None

    @property
    def progress(self) -> float:
        if self.total_trials == 0:
            return 0.0
        return round(self.processed / self.total_trials * 100, 1)

    @property
    def elapsed_seconds(self) -> float:
        end = self.completed_at or datetime.now(timezone.utc)
        return (end - self.created_at).total_seconds()

    @property
    def trials_per_second(self) -> float:
        elapsed = self.elapsed_seconds
        if elapsed == 0:
            return 0.0
        return round(self.processed / elapsed, 2)


# ─── Grid Parsing ─────────────────────────────────────────────────


def parse_noise_grid(text: str) -> list[NoiseSetting]:
    """Parse ``sigma:frac`` pairs separated by commas, e.g. ``0.002:0,0.01:0.2``."""
    settings = []
    for item in (part.strip() for part in text.split(",")):
        if not item:
            continue
        try:
            sigma, frac = item.split(":")
            settings.append(NoiseSetting(sigma=float(sigma), outlier_frac=float(frac)))
        except ValueError as e:
            raise UsageError(f"bad noise setting {item!r}; expected sigma:frac") from e
    if not settings:
        raise UsageError("noise grid is empty")
    return settings


def parse_fixture_list(text: str) -> list[FixtureEntry]:
    names = [name.strip() for name in text.split(",") if name.strip()]
    if not names:
        raise UsageError("fixture list is empty")
    return [fixture_intrinsics(name) for name in names]


# ─── Trial Execution ──────────────────────────────────────────────


def trial_seed(seed: int, fixture_index: int, setting_index: int, trial: int) -> int:
    """Per-trial seed, a pure function of the run seed and the trial's grid position."""
    state = np.random.SeedSequence([seed, fixture_index, setting_index, trial])
    return int(state.generate_state(1, dtype=np.uint64)[0])


def benchmark_camera(entry: FixtureEntry, max_side: int) -> tuple[Intrinsics, ImageGeometry]:
    """Fixture intrinsics resized so the longer side is at most ``max_side``."""
    g = entry.geometry
    scale = max_side / max(g.width, g.height)
    if scale >= 1.0:
        return entry.intrinsics, g
    return resize_intrinsics(entry.intrinsics, g, scale)


class _TrialSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    fixture: FixtureEntry
    setting: NoiseSetting
    trial: int
    seed: int


def run_trial(
    spec: _TrialSpec, max_side: int, assume_centered: bool = False
) -> TrialRecord:
    """Synthesize, perturb, calibrate and score one trial with error isolation."""
    log = logger.bind(fixture=spec.fixture.name, noise=spec.setting.label, trial=spec.trial)
    row = {
        "fixture": spec.fixture.name,
        "sigma": spec.setting.sigma,
        "outlier_frac": spec.setting.outlier_frac,
        "trial": spec.trial,
        "seed": spec.seed,
    }
    timing: dict[str, float] = {}
    try:
        with log_performance(log, "benchmark_trial") as timing:
            k, g = benchmark_camera(spec.fixture, max_side)
            m = perturb_incident_map(
                synthesize_incident_map(k, g),
                spec.setting.sigma,
                spec.setting.outlier_frac,
                seed=spec.seed,
            )
            cfg = SolverConfig.from_settings(seed=spec.seed, assume_centered=assume_centered)
            estimate = calibrate(m, cfg)
            err = calib_error(k, estimate.intrinsics, g)
    except AppException as e:
        log.warning(f"Trial failed: {e}")
        return _failed_row(row, timing, e)
    except Exception as e:
        log.exception(f"Trial crashed: {e}")
        return _failed_row(row, timing, e)
    return TrialRecord(
        **row,
        e_f=err.e_f,
        e_b=err.e_b,
        inlier_ratio=estimate.inlier_ratio,
        runtime_ms=timing["duration_ms"],
    )


def _failed_row(row: dict[str, Any], timing: dict[str, float], e: Exception) -> TrialRecord:
    return TrialRecord(
        **row,
        runtime_ms=timing.get("duration_ms", 0.0),
        error=f"{type(e).__name__}: {e}",
    )


# ─── Aggregation ──────────────────────────────────────────────────


def _median(values: list[float]) -> Optional[float]:
    return statistics.median(values) if values else None


def summarize(rows: list[TrialRecord]) -> BenchmarkSummary:
    """Per-cell and overall medians over the successful rows."""
    groups: dict[tuple[str, float, float], list[TrialRecord]] = {}
    for row in rows:
        groups.setdefault((row.fixture, row.sigma, row.outlier_frac), []).append(row)

    ok = [r for r in rows if r.ok]
    return BenchmarkSummary(
        trials=len(rows),
        failures=len(rows) - len(ok),
        median_e_f=_median([r.e_f for r in ok]),
        median_e_b=_median([r.e_b for r in ok]),
        groups=[
            GroupSummary(
                fixture=fixture,
                sigma=sigma,
                outlier_frac=frac,
                trials=len(members),
                failures=sum(not r.ok for r in members),
                median_e_f=_median([r.e_f for r in members if r.ok]),
                median_e_b=_median([r.e_b for r in members if r.ok]),
            )
            for (fixture, sigma, frac), members in groups.items()
        ],
    )


# ─── Benchmark Engine ─────────────────────────────────────────────


def run_benchmark(
    fixtures: list[FixtureEntry],
    grid: list[NoiseSetting],
    trials: int,
    seed: int,
    workers: Optional[int] = None,
    max_side: Optional[int] = None,
    assume_centered: bool = False,
    job: Optional[BenchmarkJob] = None,
) -> BenchmarkReport:
    """Run every (fixture, setting, trial) cell and collect the report."""
    from src.config import get_settings

    settings = get_settings()
    if trials < 1:
        raise UsageError(f"trials must be at least 1, got {trials}")
    workers = workers or settings.workers
    max_side = max_side or settings.benchmark.max_side

    specs = [
        _TrialSpec(
            fixture=fixture,
            setting=setting,
            trial=t,
            seed=trial_seed(seed, fi, si, t),
        )
        for fi, fixture in enumerate(fixtures)
        for si, setting in enumerate(grid)
        for t in range(trials)
    ]
    job = job or BenchmarkJob()
    job.total_trials = len(specs)
    job.status = JobStatus.PROCESSING
    lock = threading.Lock()

    def process(spec: _TrialSpec) -> TrialRecord:
        record = run_trial(spec, max_side, assume_centered)
        with lock:
            job.processed += 1
            if record.ok:
                job.succeeded += 1
            else:
                job.failed += 1
            logger.info(
                f"Benchmark {job.id}: processed {job.processed}/{job.total_trials} "
                f"({job.progress}%)"
            )
        return record

    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(process, specs))
        else:
            rows = [process(spec) for spec in specs]
        job.status = JobStatus.COMPLETED if job.failed == 0 else JobStatus.FAILED
    finally:
        job.completed_at = datetime.now(timezone.utc)

    return BenchmarkReport(
        config={
            "fixtures": [f.name for f in fixtures],
            "noise_grid": [s.label for s in grid],
            "trials": trials,
            "seed": seed,
            "max_side": max_side,
            "assume_centered": assume_centered,
            "solver": SolverConfig.from_settings().model_dump(exclude={"seed", "assume_centered"}),
        },
        rows=rows,
        summary=summarize(rows),
    )


# ─── Export ───────────────────────────────────────────────────────

CSV_FIELDS = list(TrialRecord.model_fields)


def rows_csv(rows: list[TrialRecord]) -> str:
    output = io.StringIO()
    writer = csv.DictWriter(output, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if v is None else v) for k, v in row.model_dump().items()})
    return output.getvalue()


def write_report(report: BenchmarkReport, path: Union[str, Path]) -> Path:
    """Write the JSON report and its CSV twin (same stem, ``.csv``); returns the CSV path."""
    path = Path(path)
    path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    csv_path = path.with_suffix(".csv")
    csv_path.write_text(rows_csv(report.rows), encoding="utf-8")
    return csv_path
