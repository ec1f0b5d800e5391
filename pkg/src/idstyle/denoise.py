"""Noise predictors.

A predictor maps ``(z_t, t, schedule)`` to predicted noise with the same
dims.  The bundled predictors are analytic stand-ins for a neural
denoiser, chosen so the sampling loop is testable end to end:

* :class:`PointMassPredictor` -- the data distribution collapsed onto a
  single point; the denoised estimate is that point for any input.
* :class:`GaussianPriorPredictor` -- the MSE-optimal denoiser for an
  isotropic Gaussian prior on the clean latent.
* :class:`StylePullPredictor` -- a point mass at a content/style blend,
  which gives guidance sweeps a measurable trade-off to act on.

:class:`ExternalCommandPredictor` implements the file-exchange contract
for plugging in an out-of-process model.  Nothing constructs it unless
explicitly configured.
"""
from __future__ import annotations

import os
import struct
import subprocess
import tempfile
from abc import ABC, abstractmethod

import numpy as np

from .errors import FormatError, ParameterError, PredictorError, ShapeError
from .guidance import Latent
from .schedule import NoiseSchedule

_HEADER = struct.Struct("<III")  # channels, height, width


class NoisePredictor(ABC):
    """Deterministic map from a noisy latent to predicted noise."""

    @abstractmethod
    def predict(self, z_t: Latent, t: int, schedule: NoiseSchedule) -> Latent:
        """Predicted noise for ``z_t`` at train timestep ``t``."""

    @staticmethod
    def _signal_noise(schedule: NoiseSchedule, t: int) -> tuple[float, float]:
        a = schedule.alpha_bar(t)  # raises IndexError for invalid t
        if a >= 1.0:
            raise ParameterError(
                f"alpha_bar({t}) = 1: noise prediction is undefined")
        return np.sqrt(a), np.sqrt(1.0 - a)


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


class PointMassPredictor(NoisePredictor):
    """Analytic predictor for a distribution supported on one latent.

    ``predict`` returns ``(z_t - sqrt(a) * target) / sqrt(1 - a)``, so
    the denoised estimate equals ``target`` exactly for any input.
    """

    def __init__(self, target: Latent):
        self.target = _frozen(target)

    def predict(self, z_t: Latent, t: int, schedule: NoiseSchedule) -> Latent:
        z_t = np.asarray(z_t, dtype=np.float64)
        if z_t.shape != self.target.shape:
            raise ShapeError(
                f"latent shape {z_t.shape} does not match target {self.target.shape}")
        s0, s1 = self._signal_noise(schedule, t)
        return (z_t - s0 * self.target) / s1


class GaussianPriorPredictor(NoisePredictor):
    """MSE-optimal predictor for ``x0 ~ Normal(mu, sigma2 * I)``.

    The posterior mean of the clean latent given ``z_t`` is

        E[x0 | z_t] = mu + (sqrt(a) * sigma2 / (a * sigma2 + 1 - a))
                           * (z_t - sqrt(a) * mu)

    and the predicted noise is the one consistent with that estimate.
    """

    def __init__(self, mu: Latent, sigma2: float):
        if sigma2 <= 0:
            raise ParameterError(f"sigma2 must be > 0, got {sigma2}")
        self.mu = _frozen(mu)
        self.sigma2 = float(sigma2)

    def posterior_mean(self, z_t: Latent, t: int,
                       schedule: NoiseSchedule) -> Latent:
        z_t = np.asarray(z_t, dtype=np.float64)
        if z_t.shape != self.mu.shape:
            raise ShapeError(
                f"latent shape {z_t.shape} does not match prior mean {self.mu.shape}")
        a = schedule.alpha_bar(t)
        s0 = np.sqrt(a)
        gain = s0 * self.sigma2 / (a * self.sigma2 + 1.0 - a)
        return self.mu + gain * (z_t - s0 * self.mu)

    def predict(self, z_t: Latent, t: int, schedule: NoiseSchedule) -> Latent:
        s0, s1 = self._signal_noise(schedule, t)
        return (np.asarray(z_t, dtype=np.float64)
                - s0 * self.posterior_mean(z_t, t, schedule)) / s1


class StylePullPredictor(PointMassPredictor):
    """Point mass at ``(1 - gamma) * content_target + gamma * style_target``.

    ``gamma = 0`` reproduces the content exactly; ``gamma = 1`` commits
    fully to the style target.
    """

    def __init__(self, content_target: Latent, style_target: Latent,
                 gamma: float):
        if not 0.0 <= gamma <= 1.0:
            raise ParameterError(f"gamma must be in [0, 1], got {gamma}")
        content = np.asarray(content_target, dtype=np.float64)
        style = np.asarray(style_target, dtype=np.float64)
        if content.shape != style.shape:
            raise ShapeError(
                f"content shape {content.shape} does not match style {style.shape}")
        super().__init__((1.0 - gamma) * content + gamma * style)
        self.gamma = float(gamma)


def write_latent(path, latent: Latent) -> None:
    """Write a latent as header (3 little-endian uint32 dims) + float64 data."""
    arr = np.ascontiguousarray(latent, dtype="<f8")
    if arr.ndim != 3:
        raise ShapeError(f"latent file requires a 3-d array, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*arr.shape))
        fh.write(arr.tobytes())


def read_latent(path) -> Latent:
    """Read a latent written by :func:`write_latent`."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise FormatError(f"offset 0: tensor file shorter than its 12-byte header")
    c, h, w = _HEADER.unpack_from(data, 0)
    if c < 1 or h < 1 or w < 1:
        raise FormatError(f"offset 0: tensor dims ({c}, {h}, {w}) must be positive")
    need = _HEADER.size + 8 * c * h * w
    if len(data) != need:
        raise FormatError(
            f"offset {len(data)}: tensor file has {len(data)} bytes, expected {need}")
    flat = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    return flat.reshape(c, h, w).astype(np.float64)


class ExternalCommandPredictor(NoisePredictor):
    """Shell out to an external command once per step.

    The command is invoked as ``argv... z_path eps_path t``; it must read
    the latent from ``z_path`` (:func:`write_latent` format), write the
    predicted noise to ``eps_path`` in the same format, and exit 0.
    """

    def __init__(self, argv: list[str]):
        if not argv:
            raise ParameterError("external predictor needs a non-empty command")
        self.argv = list(argv)

    def predict(self, z_t: Latent, t: int, schedule: NoiseSchedule) -> Latent:
        schedule.alpha_bar(t)  # validate t against the schedule up front
        z_t = np.asarray(z_t, dtype=np.float64)
        with tempfile.TemporaryDirectory(prefix="idstyle-pred-") as tmp:
            z_path = os.path.join(tmp, "z.lat")
            eps_path = os.path.join(tmp, "eps.lat")
            write_latent(z_path, z_t)
            proc = subprocess.run(
                [*self.argv, z_path, eps_path, str(int(t))],
                capture_output=True, text=True)
            if proc.returncode != 0:
                raise PredictorError(
                    f"external predictor exited {proc.returncode}: "
                    f"{proc.stderr.strip()}")
            try:
                eps = read_latent(eps_path)
            except (OSError, FormatError) as err:
                raise PredictorError(f"external predictor output unreadable: {err}")
        if eps.shape != z_t.shape:
            raise PredictorError(
                f"external predictor returned shape {eps.shape}, expected {z_t.shape}")
        if not np.all(np.isfinite(eps)):
            raise PredictorError("external predictor returned non-finite values")
        return eps
