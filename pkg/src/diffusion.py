"""
Desk-scale simulation of the diffusion generation pipeline.

Fields live in raster space rather than an autoencoder latent space; the
scheduler algebra is the same either way. The reverse process is the
deterministic variant, so an oracle denoiser walks the chain back to the
clean field up to rounding.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal, Optional, Protocol

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from src.error_handler import ScheduleError, ShapeMismatch, ZeroNoiseScale
from src.logging_config import get_logger, log_performance
from src.models import DepthMap, EnsembleResult, ImageGeometry, IncidentMap, LatentField

logger = get_logger(__name__)

INCIDENCE_CHANNELS = 2
DEPTH_CHANNELS = 3


# ── Noise schedule ─────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Cumulative signal retention ᾱ_t for t = 1..T (``alpha_bar[t - 1]``)."""

    betas: NDArray[np.float64]
    alpha_bar: NDArray[np.float64]

    @property
    def steps(self) -> int:
        return int(self.alpha_bar.shape[0])

    def alpha_bar_at(self, t: int) -> float:
        """ᾱ_t with ᾱ_0 = 1."""
        if t == 0:
            return 1.0
        if not 1 <= t <= self.steps:
            raise ScheduleError(f"timestep {t} outside 0..{self.steps}")
        return float(self.alpha_bar[t - 1])

    def coefficients(self, t: int) -> tuple[float, float]:
        """Signal and noise scales ``(sqrt(ᾱ_t), sqrt(1 - ᾱ_t))``."""
        a = self.alpha_bar_at(t)
        return math.sqrt(a), math.sqrt(1.0 - a)


def build_schedule(
    steps: int,
    beta_start: float,
    beta_end: float,
    kind: Literal["linear", "scaled_linear"] = "linear",
) -> NoiseSchedule:
    """DDPM schedule with β_t interpolated between the endpoints.

    ``scaled_linear`` interpolates sqrt(β) instead of β.
    """
    if steps < 1:
        raise ScheduleError(f"schedule needs at least one step, got {steps}")
    if not (0.0 <= beta_start <= beta_end < 1.0):
        raise ScheduleError(
            "betas must satisfy 0 <= beta_start <= beta_end < 1",
            {"beta_start": beta_start, "beta_end": beta_end},
        )

    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, steps, dtype=np.float64)
    elif kind == "scaled_linear":
        betas = np.linspace(math.sqrt(beta_start), math.sqrt(beta_end), steps, dtype=np.float64) ** 2
    else:
        raise ScheduleError(f"unknown beta schedule {kind!r}")

    alpha_bar = np.cumprod(1.0 - betas)
    if not (alpha_bar > 0).all():
        raise ScheduleError("ᾱ underflowed to zero; shorten the schedule or lower beta_end")
    if steps > 1 and not (np.diff(alpha_bar) < 0).all():
        raise ScheduleError("ᾱ must be strictly decreasing; beta_end must be positive")

    betas.setflags(write=False)
    alpha_bar.setflags(write=False)
    return NoiseSchedule(betas=betas, alpha_bar=alpha_bar)


def default_schedule() -> NoiseSchedule:
    from src.config import get_settings

    d = get_settings().diffusion
    return build_schedule(d.steps, d.beta_start, d.beta_end, d.beta_schedule)


def strided_timesteps(total: int, steps: int) -> list[int]:
    """``steps`` distinct timesteps from ``total`` down to 1, evenly strided."""
    if not 1 <= steps <= total:
        raise ScheduleError(f"inference steps must be in 1..{total}, got {steps}")
    return [int(math.floor(v + 0.5)) for v in np.linspace(total, 1, steps)]


# ── Field algebra ──────────────────────────────────────────────────────────


def _check_same_shape(a: LatentField, b: LatentField, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what}: shapes {a.shape} and {b.shape} differ")


def forward_diffuse(z0: LatentField, t: int, eps: LatentField, sched: NoiseSchedule) -> LatentField:
    """z_t = sqrt(ᾱ_t)·z0 + sqrt(1 - ᾱ_t)·ε."""
    _check_same_shape(z0, eps, "forward_diffuse")
    if not 1 <= t <= sched.steps:
        raise ScheduleError(f"timestep {t} outside 1..{sched.steps}")
    signal, noise = sched.coefficients(t)
    return LatentField(geometry=z0.geometry, data=signal * z0.data + noise * eps.data)


def reverse_step(
    z_t: LatentField,
    t: int,
    eps_hat: LatentField,
    sched: NoiseSchedule,
    t_prev: Optional[int] = None,
) -> LatentField:
    """Deterministic update from step ``t`` to ``t_prev`` (default ``t - 1``).

    Predicts the clean field from the noise estimate and re-noises it to the
    earlier step. At ``t_prev == 0`` the clean prediction is returned as is.
    """
    _check_same_shape(z_t, eps_hat, "reverse_step")
    if not 1 <= t <= sched.steps:
        raise ScheduleError(f"timestep {t} outside 1..{sched.steps}")
    t_prev = t - 1 if t_prev is None else t_prev
    if not 0 <= t_prev < t:
        raise ScheduleError(f"previous timestep {t_prev} must be in 0..{t - 1}")

    signal, noise = sched.coefficients(t)
    if signal == 0.0:
        raise ScheduleError(f"ᾱ_{t} is zero; the clean field cannot be recovered")
    z0_hat = (z_t.data - noise * eps_hat.data) / signal
    if t_prev == 0:
        return LatentField(geometry=z_t.geometry, data=z0_hat)

    signal_prev, noise_prev = sched.coefficients(t_prev)
    return LatentField(
        geometry=z_t.geometry, data=signal_prev * z0_hat + noise_prev * eps_hat.data
    )


def velocity_target(z0: LatentField, eps: LatentField, t: int, sched: NoiseSchedule) -> LatentField:
    """v = sqrt(ᾱ_t)·ε - sqrt(1 - ᾱ_t)·z0."""
    _check_same_shape(z0, eps, "velocity_target")
    signal, noise = sched.coefficients(t)
    return LatentField(geometry=z0.geometry, data=signal * eps.data - noise * z0.data)


def eps_from_velocity(z_t: LatentField, v: LatentField, t: int, sched: NoiseSchedule) -> LatentField:
    """Noise implied by a velocity prediction: ε = sqrt(1 - ᾱ_t)·z_t + sqrt(ᾱ_t)·v."""
    _check_same_shape(z_t, v, "eps_from_velocity")
    signal, noise = sched.coefficients(t)
    return LatentField(geometry=z_t.geometry, data=noise * z_t.data + signal * v.data)


# ── Multi-resolution noise ─────────────────────────────────────────────────


def sample_multires_noise(
    g: ImageGeometry,
    channels: int,
    levels: int,
    decay: float,
    rng: np.random.Generator,
) -> LatentField:
    """Sum of upsampled white-noise pyramids rescaled to unit sample variance.

    Level ``l`` is drawn at ``ceil(size / 2**l)`` (never below 1x1),
    bilinearly upsampled to ``g`` and weighted by ``decay**l``.
    """
    if channels < 1:
        raise ShapeMismatch(f"channels must be positive, got {channels}")
    if levels < 1:
        raise ScheduleError(f"levels must be at least 1, got {levels}")
    if not 0.0 < decay <= 1.0:
        raise ScheduleError(f"decay must be in (0, 1], got {decay}")

    h, w = g.shape
    total = np.zeros((h, w, channels), dtype=np.float64)
    for level in range(levels):
        lh = max(1, math.ceil(h / 2**level))
        lw = max(1, math.ceil(w / 2**level))
        white = rng.standard_normal((lh, lw, channels))
        if (lh, lw) != (h, w):
            white = ndimage.zoom(white, (h / lh, w / lw, 1.0), order=1)
        total += decay**level * white

    scale = total.std()
    if scale == 0.0:
        raise ZeroNoiseScale("multi-resolution noise has zero variance")
    return LatentField(geometry=g, data=total / scale)


# ── Denoisers ──────────────────────────────────────────────────────────────


class Denoiser(Protocol):
    """Predicts the noise in ``z_t`` at step ``t`` given a condition field."""

    def __call__(
        self, z_t: LatentField, t: int, condition: Optional[LatentField] = None
    ) -> LatentField: ...


def _eps_toward(target: NDArray[np.float64], z_t: LatentField, t: int, sched: NoiseSchedule) -> LatentField:
    signal, noise = sched.coefficients(t)
    if noise == 0.0:
        raise ZeroNoiseScale(f"ᾱ_{t} = 1 leaves no noise to predict")
    return LatentField(geometry=z_t.geometry, data=(z_t.data - signal * target) / noise)


def oracle_denoiser(z0: LatentField, sched: NoiseSchedule) -> Denoiser:
    """Denoiser returning the exact noise that separates ``z_t`` from ``z0``."""

    def denoise(z_t: LatentField, t: int, condition: Optional[LatentField] = None) -> LatentField:
        _check_same_shape(z_t, z0, "oracle_denoiser")
        return _eps_toward(z0.data, z_t, t, sched)

    return denoise


def perturbed_denoiser(z0: LatentField, sched: NoiseSchedule, sigma: float) -> Denoiser:
    """Oracle aimed at ``z0 + sigma·ξ`` with ξ ~ N(0, 1) seeded from the query.

    ξ is derived from a hash of ``(t, z_t)``, so the denoiser stays a pure
    function while independent generation runs land on independent targets.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")

    def denoise(z_t: LatentField, t: int, condition: Optional[LatentField] = None) -> LatentField:
        _check_same_shape(z_t, z0, "perturbed_denoiser")
        digest = hashlib.blake2b(z_t.data.tobytes(), digest_size=8, person=t.to_bytes(8, "little"))
        rng = np.random.default_rng(int.from_bytes(digest.digest(), "little"))
        target = z0.data + sigma * rng.standard_normal(z0.shape)
        return _eps_toward(target, z_t, t, sched)

    return denoise


# ── Loss and channel layout ────────────────────────────────────────────────


def noise_loss(
    eps_pred: LatentField, eps_true: LatentField, incidence_channels: int = INCIDENCE_CHANNELS
) -> float:
    """Mean squared noise error of the incidence block plus that of the depth block.

    Fields with no channels past ``incidence_channels`` count as one block.
    """
    _check_same_shape(eps_pred, eps_true, "noise_loss")
    diff = eps_pred.data - eps_true.data
    if eps_pred.channels <= incidence_channels:
        return float(np.mean(diff * diff))
    head = diff[..., :incidence_channels]
    tail = diff[..., incidence_channels:]
    return float(np.mean(head * head) + np.mean(tail * tail))


def joint_field(incidence: LatentField, depth: LatentField) -> LatentField:
    """Channel concatenation of the incidence and depth blocks."""
    if incidence.geometry != depth.geometry:
        raise ShapeMismatch(f"incidence {incidence.geometry} and depth {depth.geometry} differ")
    return LatentField(
        geometry=incidence.geometry, data=np.concatenate([incidence.data, depth.data], axis=-1)
    )


def split_joint_field(
    f: LatentField, incidence_channels: int = INCIDENCE_CHANNELS
) -> tuple[LatentField, LatentField]:
    if not 0 < incidence_channels < f.channels:
        raise ShapeMismatch(
            f"cannot split {f.channels} channels at {incidence_channels}"
        )
    return (
        LatentField(geometry=f.geometry, data=f.data[..., :incidence_channels]),
        LatentField(geometry=f.geometry, data=f.data[..., incidence_channels:]),
    )


def incident_field(m: IncidentMap) -> LatentField:
    return LatentField(geometry=m.geometry, data=m.data)


def field_to_incident(f: LatentField) -> IncidentMap:
    if f.channels != INCIDENCE_CHANNELS:
        raise ShapeMismatch(f"incident maps have 2 channels, field has {f.channels}")
    return IncidentMap(geometry=f.geometry, data=f.data)


def depth_tri_encode(d: DepthMap) -> LatentField:
    """Replicate depth into three identical channels; invalid pixels become 0."""
    values = np.where(d.mask, d.values, 0.0).astype(np.float64)
    return LatentField(geometry=d.geometry, data=np.repeat(values[..., None], DEPTH_CHANNELS, axis=-1))


def depth_tri_decode(f: LatentField) -> DepthMap:
    """Per-pixel mean of the three depth channels; non-positive results are invalid."""
    if f.channels != DEPTH_CHANNELS:
        raise ShapeMismatch(f"depth fields have 3 channels, got {f.channels}")
    # Mean relative to the first channel so identical channels decode exactly.
    base = f.data[..., 0]
    values = base + ((f.data[..., 1] - base) + (f.data[..., 2] - base)) / 3.0
    return DepthMap.from_array(values)


# ── Generation ─────────────────────────────────────────────────────────────


def generate(
    den: Denoiser,
    condition: LatentField,
    sched: NoiseSchedule,
    steps: int,
    rng: np.random.Generator,
    channels: Optional[int] = None,
    levels: Optional[int] = None,
    decay: Optional[float] = None,
) -> LatentField:
    """Run ``steps`` strided reverse steps from multi-resolution noise.

    The output has the condition's geometry and ``channels`` channels
    (default: as many as the condition).
    """
    from src.config import get_settings

    d = get_settings().diffusion
    timesteps = strided_timesteps(sched.steps, steps)
    z = sample_multires_noise(
        condition.geometry,
        channels or condition.channels,
        levels or d.noise_levels,
        decay or d.noise_decay,
        rng,
    )
    for i, t in enumerate(timesteps):
        t_prev = timesteps[i + 1] if i + 1 < len(timesteps) else 0
        eps_hat = den(z, t, condition)
        _check_same_shape(z, eps_hat, "denoiser output")
        z = reverse_step(z, t, eps_hat, sched, t_prev=t_prev)
    return z


def ensemble_generate(
    den: Denoiser,
    condition: LatentField,
    size: int,
    sched: NoiseSchedule,
    steps: int,
    seed: int,
    channels: Optional[int] = None,
    aggregation: Literal["mean", "median"] = "mean",
    workers: int = 1,
) -> EnsembleResult:
    """Aggregate ``size`` generations seeded by ``(seed, member index)``.

    Members may run on a thread pool; the result does not depend on the
    order in which they finish.
    """
    if size < 1:
        raise ValueError(f"ensemble size must be at least 1, got {size}")

    def member(k: int) -> NDArray[np.float64]:
        rng = np.random.default_rng([seed, k])
        return generate(den, condition, sched, steps, rng, channels=channels).data

    log = logger.bind(size=size, steps=steps, seed=seed)
    with log_performance(log, "ensemble_generate", workers=workers):
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                members = list(pool.map(member, range(size)))
        else:
            members = [member(k) for k in range(size)]

    stack = np.stack(members, axis=0)
    center = np.median(stack, axis=0) if aggregation == "median" else stack.mean(axis=0)
    spread = stack.std(axis=0, ddof=1) if size > 1 else np.zeros_like(center)
    g = condition.geometry
    return EnsembleResult(
        mean=LatentField(geometry=g, data=center),
        stddev=LatentField(geometry=g, data=spread),
        size=size,
    )
