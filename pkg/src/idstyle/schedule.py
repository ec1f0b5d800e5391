"""Diffusion noise schedule and inference-timestep planning.

A schedule stores the per-step ``beta`` values together with
``alpha_bar``, the running product of ``(1 - beta)``.  ``alpha_bar``
controls the signal/noise mix at each timestep; everything downstream
reads it through :meth:`NoiseSchedule.alpha_bar`.

Inference runs on a strictly decreasing subsequence of the train
timesteps (:class:`TimestepPlan`), spaced with stride
``floor(num_train_steps / num_inference_steps)`` starting from the
largest index so that plans are deterministic and reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

SCHEDULE_KINDS = ("linear", "scaled_linear")

DEFAULT_NUM_TRAIN_STEPS = 1000
DEFAULT_BETA_START = 0.00085
DEFAULT_BETA_END = 0.012
DEFAULT_KIND = "scaled_linear"
DEFAULT_INFERENCE_STEPS = 10


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable beta / alpha_bar table; safe to share across threads."""

    num_train_steps: int
    betas: np.ndarray
    alpha_bars: np.ndarray

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal fraction at train timestep ``t``."""
        if not 0 <= int(t) < self.num_train_steps:
            raise IndexError(
                f"timestep {t} outside [0, {self.num_train_steps})")
        return float(self.alpha_bars[int(t)])


@dataclass(frozen=True)
class TimestepPlan:
    """Strictly decreasing subsequence of train timesteps used at inference."""

    timesteps: tuple[int, ...]

    def __post_init__(self):
        if len(self.timesteps) == 0:
            raise ParameterError("timestep plan must be nonempty")
        if any(t < 0 for t in self.timesteps):
            raise ParameterError("timestep plan contains a negative index")
        if any(a <= b for a, b in zip(self.timesteps, self.timesteps[1:])):
            raise ParameterError("timestep plan must be strictly decreasing")

    def __len__(self) -> int:
        return len(self.timesteps)


def build_schedule(num_train_steps: int, beta_start: float, beta_end: float,
                   kind: str = DEFAULT_KIND) -> NoiseSchedule:
    """Construct a noise schedule.

    ``linear`` interpolates beta linearly between the endpoints;
    ``scaled_linear`` interpolates sqrt(beta) linearly and squares it.
    """
    if num_train_steps < 1:
        raise ParameterError(f"num_train_steps must be >= 1, got {num_train_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ParameterError(
            f"beta range must satisfy 0 < beta_start <= beta_end < 1, "
            f"got ({beta_start}, {beta_end})")
    if kind not in SCHEDULE_KINDS:
        raise ParameterError(f"unknown schedule kind {kind!r}")

    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, num_train_steps, dtype=np.float64)
    else:
        betas = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end),
                            num_train_steps, dtype=np.float64) ** 2
    alpha_bars = np.cumprod(1.0 - betas)
    betas.setflags(write=False)
    alpha_bars.setflags(write=False)
    return NoiseSchedule(num_train_steps, betas, alpha_bars)


def default_schedule() -> NoiseSchedule:
    """The 1000-step scaled-linear schedule used unless configured otherwise."""
    return build_schedule(DEFAULT_NUM_TRAIN_STEPS, DEFAULT_BETA_START,
                          DEFAULT_BETA_END, DEFAULT_KIND)


def plan_timesteps(schedule: NoiseSchedule,
                   num_inference_steps: int) -> TimestepPlan:
    """Evenly spaced descending plan over the schedule's timesteps."""
    n = schedule.num_train_steps
    if not 1 <= num_inference_steps <= n:
        raise ParameterError(
            f"num_inference_steps must be in [1, {n}], got {num_inference_steps}")
    stride = n // num_inference_steps
    timesteps = tuple((n - 1) - i * stride for i in range(num_inference_steps))
    return TimestepPlan(timesteps)


def schedule_csv(schedule: NoiseSchedule) -> str:
    """CSV dump of the schedule table (columns: t, beta, alpha_bar)."""
    lines = ["t,beta,alpha_bar"]
    for t in range(schedule.num_train_steps):
        lines.append(f"{t},{float(schedule.betas[t])!r},{float(schedule.alpha_bars[t])!r}")
    return "\n".join(lines) + "\n"
