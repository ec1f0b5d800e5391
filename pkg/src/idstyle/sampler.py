"""Guided denoising loop and fixed-point DDIM inversion.

``sample`` walks a timestep plan top-down.  At each step it asks the
predictor for noise, optionally refines that noise toward the content
latent (recording the refined estimate's content loss), and applies the
deterministic DDIM update.  The target noise level for a step is the
next planned timestep's alpha_bar, and 1.0 for the final step, so the
run ends on the denoised estimate itself.

``invert`` walks the plan bottom-up with the update solved for the
noisier latent.  The noise prediction for a step can be re-evaluated a
configurable number of times at the provisional next latent (plain
fixed-point iteration), which is cheap and usually tightens round
trips.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .denoise import NoisePredictor
from .errors import NumericalDivergenceError, ParameterError, ShapeError
from .guidance import (GuidanceConfig, Latent, content_loss,
                       content_loss_grad, ddim_step, estimate_x0,
                       refine_noise)
from .schedule import NoiseSchedule, TimestepPlan, plan_timesteps


@dataclass
class SampleTrace:
    """Per-run diagnostics: every latent visited plus per-step content
    losses of the refined estimate (empty when guidance is off)."""

    latents: list[Latent] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class InversionConfig:
    steps: int = 6
    fixed_point_iters: int = 2

    def __post_init__(self):
        if self.steps < 1:
            raise ParameterError(f"inversion steps must be >= 1, got {self.steps}")
        if self.fixed_point_iters < 0:
            raise ParameterError(
                f"fixed_point_iters must be >= 0, got {self.fixed_point_iters}")


def _require_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{what} must be finite")


def sample(z_start: Latent, predictor: NoisePredictor, schedule: NoiseSchedule,
           plan: TimestepPlan, x_c: Latent, guidance: GuidanceConfig) -> SampleTrace:
    """Run the guided DDIM loop from ``z_start`` down the plan.

    Returns the full trace; ``trace.latents[-1]`` is the output.
    """
    z = np.array(z_start, dtype=np.float64)
    x_c = np.asarray(x_c, dtype=np.float64)
    if z.shape != x_c.shape:
        raise ShapeError(
            f"z_start shape {z.shape} does not match content latent {x_c.shape}")
    _require_finite(z, "z_start")
    _require_finite(x_c, "content latent")

    trace = SampleTrace(latents=[z])
    ts = plan.timesteps
    # Divergence is detected explicitly below, so numpy's inf/nan
    # warnings along that path are redundant noise.
    with np.errstate(invalid="ignore", over="ignore"):
        for i, t in enumerate(ts):
            a_t = schedule.alpha_bar(t)
            a_prev = schedule.alpha_bar(ts[i + 1]) if i + 1 < len(ts) else 1.0
            eps = predictor.predict(z, t, schedule)
            if guidance.enabled:
                for _ in range(guidance.iterations):
                    x0 = estimate_x0(z, eps, a_t)
                    grad = content_loss_grad(x0, x_c, a_t, guidance.reduction)
                    eps = refine_noise(eps, grad, guidance.lambda_c)
                trace.losses.append(
                    content_loss(estimate_x0(z, eps, a_t), x_c,
                                 guidance.reduction))
            z = ddim_step(z, eps, a_t, a_prev)
            if not np.all(np.isfinite(z)):
                raise NumericalDivergenceError(
                    f"latent became non-finite at step {i} (t={t})")
            trace.latents.append(z)
    return trace


def invert(x_c: Latent, predictor: NoisePredictor, schedule: NoiseSchedule,
           cfg: InversionConfig = InversionConfig()) -> Latent:
    """Map a clean latent to the noise level of the plan's top timestep.

    Walks the ``cfg.steps``-step plan ascending; each step predicts
    noise at the target timestep from the current latent, solves the
    DDIM update for the noisier latent, and optionally re-predicts at
    that provisional latent ``cfg.fixed_point_iters`` times.
    """
    z = np.array(x_c, dtype=np.float64)
    _require_finite(z, "content latent")

    ascending = tuple(reversed(plan_timesteps(schedule, cfg.steps).timesteps))
    a_from = 1.0
    with np.errstate(invalid="ignore", over="ignore"):
        for i, t in enumerate(ascending):
            a_to = schedule.alpha_bar(t)
            s0_from, s1_from = np.sqrt(a_from), np.sqrt(1.0 - a_from)
            s0_to, s1_to = np.sqrt(a_to), np.sqrt(1.0 - a_to)

            eps = predictor.predict(z, t, schedule)
            z_next = s0_to * ((z - s1_from * eps) / s0_from) + s1_to * eps
            for _ in range(cfg.fixed_point_iters):
                eps = predictor.predict(z_next, t, schedule)
                z_next = s0_to * ((z - s1_from * eps) / s0_from) + s1_to * eps

            z = z_next
            if not np.all(np.isfinite(z)):
                raise NumericalDivergenceError(
                    f"latent became non-finite at inversion step {i} (t={t})")
            a_from = a_to
    return z
