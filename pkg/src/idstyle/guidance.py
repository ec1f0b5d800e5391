"""Content-consistency guidance: the per-step noise refinement that keeps
denoised estimates close to a reference content latent.

All operations are pure elementwise float64 math on latents (arrays of
shape ``(channels, height, width)``), with ``a`` short for the
schedule's alpha_bar at the current timestep:

    x0_hat  = (z_t - sqrt(1 - a) * eps_hat) / sqrt(a)
    loss    = sum((x0_hat - x_c) ** 2)                  # or the mean
    grad    = 2 * (x0_hat - x_c) * (-sqrt(1 - a) / sqrt(a))   # / n in mean mode
    eps_ref = eps_hat - lambda_c * grad
    z_prev  = sqrt(a_prev) * x0(eps_ref) + sqrt(1 - a_prev) * eps_ref

One refinement step scales the content residual ``x0_hat - x_c`` by a
closed-form factor; :func:`residual_contraction_factor` computes it and
serves as the analytic oracle for the refinement tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction

import numpy as np

from .errors import ParameterError, ShapeError

Latent = np.ndarray

REDUCTIONS = ("sum", "mean")


@dataclass(frozen=True)
class GuidanceConfig:
    """Refinement strength and bookkeeping for the sampling loop.

    ``iterations`` applies the gradient correction that many times per
    timestep (default once, which is what the refinement math assumes).
    """

    lambda_c: float = 0.0
    reduction: str = "sum"
    enabled: bool = True
    iterations: int = 1

    def __post_init__(self):
        if self.lambda_c < 0:
            raise ParameterError(f"lambda_c must be >= 0, got {self.lambda_c}")
        if self.reduction not in REDUCTIONS:
            raise ParameterError(f"unknown reduction {self.reduction!r}")
        if self.iterations < 1:
            raise ParameterError(f"iterations must be >= 1, got {self.iterations}")


def _require_same_shape(a: Latent, b: Latent, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def _require_reduction(reduction: str) -> None:
    if reduction not in REDUCTIONS:
        raise ParameterError(f"unknown reduction {reduction!r}")


def estimate_x0(z_t: Latent, eps_hat: Latent, alpha_bar_t: float) -> Latent:
    """Denoised estimate: ``(z_t - sqrt(1 - a) * eps_hat) / sqrt(a)``."""
    z_t = np.asarray(z_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    _require_same_shape(z_t, eps_hat, "estimate_x0")
    if not 0.0 < alpha_bar_t <= 1.0:
        raise ParameterError(f"alpha_bar_t must be in (0, 1], got {alpha_bar_t}")
    return (z_t - math.sqrt(1.0 - alpha_bar_t) * eps_hat) / math.sqrt(alpha_bar_t)


def content_loss(x0_hat: Latent, x_c: Latent, reduction: str = "sum") -> float:
    """Squared L2 distance between the denoised estimate and the content latent."""
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    x_c = np.asarray(x_c, dtype=np.float64)
    _require_same_shape(x0_hat, x_c, "content_loss")
    _require_reduction(reduction)
    r = x0_hat - x_c
    total = float(np.sum(r * r))
    if reduction == "mean":
        return total / r.size
    return total


def content_loss_grad(x0_hat: Latent, x_c: Latent, alpha_bar_t: float,
                      reduction: str = "sum") -> Latent:
    """Gradient of the content loss with respect to the predicted noise.

    The chain factor through the denoised estimate is
    ``-sqrt(1 - a) / sqrt(a)``; at ``a == 1`` it vanishes and refinement
    would be a silent no-op, so that value is rejected.
    """
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    x_c = np.asarray(x_c, dtype=np.float64)
    _require_same_shape(x0_hat, x_c, "content_loss_grad")
    _require_reduction(reduction)
    if not 0.0 < alpha_bar_t < 1.0:
        raise ParameterError(
            f"alpha_bar_t must be in (0, 1) for refinement, got {alpha_bar_t}")
    chain = -math.sqrt(1.0 - alpha_bar_t) / math.sqrt(alpha_bar_t)
    grad = 2.0 * (x0_hat - x_c) * chain
    if reduction == "mean":
        grad = grad / grad.size
    return grad


def refine_noise(eps_hat: Latent, grad: Latent, lambda_c: float) -> Latent:
    """Refined noise prediction: ``eps_hat - lambda_c * grad``."""
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    _require_same_shape(eps_hat, grad, "refine_noise")
    if lambda_c < 0:
        raise ParameterError(f"lambda_c must be >= 0, got {lambda_c}")
    if lambda_c == 0.0:
        return eps_hat.copy()
    return eps_hat - lambda_c * grad


def ddim_step(z_t: Latent, eps_refined: Latent, alpha_bar_t: float,
              alpha_bar_prev: float) -> Latent:
    """Deterministic DDIM update from noise level ``a_t`` to ``a_prev``.

    The denoised estimate is recomputed from the (refined) noise, then
    re-noised at the target level.  ``a_prev == 1`` returns that
    estimate itself, which is how the final step produces the output.
    """
    z_t = np.asarray(z_t, dtype=np.float64)
    eps_refined = np.asarray(eps_refined, dtype=np.float64)
    _require_same_shape(z_t, eps_refined, "ddim_step")
    if not 0.0 < alpha_bar_t <= 1.0:
        raise ParameterError(f"alpha_bar_t must be in (0, 1], got {alpha_bar_t}")
    if not 0.0 < alpha_bar_prev <= 1.0:
        raise ParameterError(
            f"alpha_bar_prev must be in (0, 1], got {alpha_bar_prev}")
    x0 = (z_t - math.sqrt(1.0 - alpha_bar_t) * eps_refined) / math.sqrt(alpha_bar_t)
    return (math.sqrt(alpha_bar_prev) * x0
            + math.sqrt(1.0 - alpha_bar_prev) * eps_refined)


def _decimal_fraction(x: float) -> Fraction:
    # Fraction of the shortest decimal spelling of x, not of its binary
    # expansion, so 0.1 really means 1/10 here.
    return Fraction(Decimal(repr(float(x))))


def residual_contraction_factor(alpha_bar_t: float, lambda_c: float,
                                reduction: str = "sum",
                                element_count: int = 1) -> float:
    """Closed-form multiplier one refinement step applies to the residual.

    sum mode:   ``1 - 2 * lambda_c * (1 - a) / a``
    mean mode:  ``1 - 2 * lambda_c * (1 - a) / (a * element_count)``

    Evaluated in exact rational arithmetic on the decimal values of the
    inputs and rounded to float once at the end.  This function is the
    reference oracle for the refinement tests, so it must not depend on
    operation order: a plain float expression lands an ulp or two off
    for inputs as benign as ``a = 0.25, lambda_c = 0.1``.
    """
    _require_reduction(reduction)
    if not 0.0 < alpha_bar_t < 1.0:
        raise ParameterError(f"alpha_bar_t must be in (0, 1), got {alpha_bar_t}")
    if lambda_c < 0:
        raise ParameterError(f"lambda_c must be >= 0, got {lambda_c}")
    if element_count < 1:
        raise ParameterError(f"element_count must be >= 1, got {element_count}")
    a = _decimal_fraction(alpha_bar_t)
    lam = _decimal_fraction(lambda_c)
    denom = a * element_count if reduction == "mean" else a
    return float(1 - 2 * lam * (1 - a) / denom)
