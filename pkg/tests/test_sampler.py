"""Sampling loop and inversion: oracle reconstruction, baseline
equivalence, round trips, step counting, and guidance sweeps."""
import math

import numpy as np
import pytest

from idstyle.denoise import (GaussianPriorPredictor, NoisePredictor,
                             PointMassPredictor, StylePullPredictor)
from idstyle.errors import NumericalDivergenceError, ShapeError
from idstyle.guidance import GuidanceConfig, content_loss
from idstyle.sampler import InversionConfig, invert, sample
from idstyle.schedule import build_schedule, default_schedule, plan_timesteps

OFF = GuidanceConfig(enabled=False)


class CountingPredictor(NoisePredictor):
    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def predict(self, z_t, t, schedule):
        self.calls += 1
        return self.inner.predict(z_t, t, schedule)


class BombPredictor(NoisePredictor):
    """Behaves like a point mass, then returns inf at the given call."""

    def __init__(self, inner, explode_at):
        self.inner = inner
        self.explode_at = explode_at
        self.calls = 0

    def predict(self, z_t, t, schedule):
        self.calls += 1
        if self.calls == self.explode_at:
            return np.full_like(np.asarray(z_t, dtype=np.float64), np.inf)
        return self.inner.predict(z_t, t, schedule)


def reference_unguided_ddim(z, predictor, schedule, plan):
    """Straightforward reimplementation of the unguided loop, used as
    the bitwise oracle for baseline equivalence."""
    ts = plan.timesteps
    for i, t in enumerate(ts):
        a_t = schedule.alpha_bar(t)
        a_prev = schedule.alpha_bar(ts[i + 1]) if i + 1 < len(ts) else 1.0
        eps = predictor.predict(z, t, schedule)
        x0 = (z - math.sqrt(1.0 - a_t) * eps) / math.sqrt(a_t)
        z = math.sqrt(a_prev) * x0 + math.sqrt(1.0 - a_prev) * eps
    return z


class TestSample:
    def test_point_mass_oracle_reaches_target(self):
        rng = np.random.default_rng(0)
        schedule = default_schedule()
        target = rng.normal(size=(2, 4, 4))
        pred = PointMassPredictor(target)
        for steps in (1, 3, 10):
            plan = plan_timesteps(schedule, steps)
            z0 = rng.normal(size=(2, 4, 4)) * 5.0
            trace = sample(z0, pred, schedule, plan, target, OFF)
            assert np.max(np.abs(trace.latents[-1] - target)) < 1e-8
            assert len(trace.latents) == steps + 1
            assert trace.losses == []

    def test_unguided_matches_reference_bitwise(self):
        rng = np.random.default_rng(1)
        schedule = default_schedule()
        plan = plan_timesteps(schedule, 10)
        x_c = rng.normal(size=(2, 3, 3))
        pred = GaussianPriorPredictor(rng.normal(size=(2, 3, 3)), 0.8)
        z0 = rng.normal(size=(2, 3, 3))

        trace = sample(z0, pred, schedule, plan, x_c, OFF)
        want = reference_unguided_ddim(z0.copy(), pred, schedule, plan)
        assert np.array_equal(trace.latents[-1], want)

    def test_lambda_zero_matches_reference_bitwise(self):
        # Guidance enabled with zero strength must not disturb a single bit.
        rng = np.random.default_rng(2)
        schedule = default_schedule()
        plan = plan_timesteps(schedule, 10)
        x_c = rng.normal(size=(1, 4, 4))
        pred = GaussianPriorPredictor(rng.normal(size=(1, 4, 4)), 0.5)
        z0 = rng.normal(size=(1, 4, 4))

        trace = sample(z0, pred, schedule, plan, x_c,
                       GuidanceConfig(lambda_c=0.0, enabled=True))
        want = reference_unguided_ddim(z0.copy(), pred, schedule, plan)
        assert np.array_equal(trace.latents[-1], want)
        assert len(trace.losses) == 10

    def test_style_pull_tradeoff(self):
        rng = np.random.default_rng(3)
        schedule = build_schedule(4, 0.09, 0.09, "linear")
        plan = plan_timesteps(schedule, 4)
        content = rng.normal(size=(1, 4, 4))
        style = rng.normal(size=(1, 4, 4))
        pred = StylePullPredictor(content, style, 1.0)
        z0 = rng.normal(size=(1, 4, 4))

        plain = sample(z0, pred, schedule, plan, content, OFF)
        assert np.max(np.abs(plain.latents[-1] - style)) < 1e-8

        bound = min(schedule.alpha_bar(t) / (1 - schedule.alpha_bar(t))
                    for t in plan.timesteps)
        guided = sample(z0, pred, schedule, plan, content,
                        GuidanceConfig(lambda_c=0.4 * bound))
        d_plain = np.linalg.norm(plain.latents[-1] - content)
        d_guided = np.linalg.norm(guided.latents[-1] - content)
        assert d_guided < d_plain

    def test_guidance_sweep_monotone_final_loss(self):
        rng = np.random.default_rng(4)
        schedule = build_schedule(4, 0.09, 0.09, "linear")
        plan = plan_timesteps(schedule, 4)
        content = rng.normal(size=(2, 3, 3))
        style = rng.normal(size=(2, 3, 3))
        pred = StylePullPredictor(content, style, 0.7)
        z0 = rng.normal(size=(2, 3, 3))
        bound = min(schedule.alpha_bar(t) / (1 - schedule.alpha_bar(t))
                    for t in plan.timesteps)
        finals = []
        for mult in (0.0, 0.05, 0.1, 0.2, 0.4):
            trace = sample(z0, pred, schedule, plan, content,
                           GuidanceConfig(lambda_c=mult * bound))
            finals.append(content_loss(trace.latents[-1], content))
        assert all(b <= a + 1e-12 for a, b in zip(finals, finals[1:]))

    def test_over_refinement_per_step_loss_stops_decreasing(self):
        # Sweeping lambda upward, the noisiest step's recorded loss
        # falls while every step stays inside its stability bound, then
        # blows past the unguided value once lambda crosses the
        # noisiest step's bound.
        rng = np.random.default_rng(5)
        schedule = build_schedule(6, 0.05, 0.09, "linear")
        plan = plan_timesteps(schedule, 6)
        content = rng.normal(size=(1, 3, 3))
        style = rng.normal(size=(1, 3, 3))
        pred = StylePullPredictor(content, style, 0.7)
        z0 = rng.normal(size=(1, 3, 3))
        t_noisy = plan.timesteps[0]
        bound = schedule.alpha_bar(t_noisy) / (1 - schedule.alpha_bar(t_noisy))

        def first_loss(lam):
            return sample(z0, pred, schedule, plan, content,
                          GuidanceConfig(lambda_c=lam)).losses[0]

        in_regime = [first_loss(m * bound) for m in (0.0, 0.15, 0.3, 0.45)]
        assert all(b < a for a, b in zip(in_regime, in_regime[1:]))
        assert first_loss(1.5 * bound) > in_regime[0]

    def test_losses_recorded_after_refinement(self):
        rng = np.random.default_rng(6)
        schedule = build_schedule(4, 0.09, 0.09, "linear")
        plan = plan_timesteps(schedule, 4)
        content = rng.normal(size=(1, 2, 2))
        pred = StylePullPredictor(content, rng.normal(size=(1, 2, 2)), 0.7)
        z0 = rng.normal(size=(1, 2, 2))
        residual = content_loss(pred.target, content)
        lam = 0.1
        trace = sample(z0, pred, schedule, plan, content,
                       GuidanceConfig(lambda_c=lam))
        for loss, t in zip(trace.losses, plan.timesteps):
            a = schedule.alpha_bar(t)
            factor = 1.0 - 2.0 * lam * (1.0 - a) / a
            assert loss == pytest.approx(factor ** 2 * residual, rel=1e-9)

    def test_exactly_plan_length_predictor_calls(self):
        rng = np.random.default_rng(7)
        schedule = default_schedule()
        plan = plan_timesteps(schedule, 10)
        counting = CountingPredictor(PointMassPredictor(rng.normal(size=(1, 2, 2))))
        sample(rng.normal(size=(1, 2, 2)), counting, schedule, plan,
               np.zeros((1, 2, 2)), GuidanceConfig(lambda_c=0.001))
        assert counting.calls == 10

    def test_divergence_names_the_step(self):
        rng = np.random.default_rng(8)
        schedule = default_schedule()
        plan = plan_timesteps(schedule, 5)
        target = rng.normal(size=(1, 2, 2))
        bomb = BombPredictor(PointMassPredictor(target), explode_at=3)
        with pytest.raises(NumericalDivergenceError, match="step 2"):
            sample(rng.normal(size=(1, 2, 2)), bomb, schedule, plan,
                   target, OFF)

    def test_shape_mismatch(self):
        schedule = default_schedule()
        plan = plan_timesteps(schedule, 2)
        with pytest.raises(ShapeError):
            sample(np.zeros((1, 2, 2)), PointMassPredictor(np.zeros((1, 2, 2))),
                   schedule, plan, np.zeros((1, 2, 3)), OFF)


class TestInvert:
    def test_single_step_closed_form(self):
        # One ascending step from the clean latent: the first estimate
        # is the latent itself, so z = sqrt(a)*x_c + sqrt(1-a)*eps with
        # eps re-evaluated at the provisional latent each iteration.
        rng = np.random.default_rng(9)
        schedule = build_schedule(8, 0.05, 0.2, "linear")
        x_c = rng.normal(size=(1, 2, 2))
        target = rng.normal(size=(1, 2, 2))
        pred = PointMassPredictor(target)
        iters = 2
        got = invert(x_c, pred, schedule, InversionConfig(1, iters))

        t = plan_timesteps(schedule, 1).timesteps[0]
        a = schedule.alpha_bar(t)
        s0, s1 = math.sqrt(a), math.sqrt(1.0 - a)
        z = s0 * x_c + s1 * ((x_c - s0 * target) / s1)
        for _ in range(iters):
            z = s0 * x_c + s1 * ((z - s0 * target) / s1)
        assert np.max(np.abs(got - z)) < 1e-12

    def test_round_trip_reconstructs_content(self):
        rng = np.random.default_rng(10)
        schedule = default_schedule()
        x_c = rng.normal(size=(2, 4, 4))
        pred = PointMassPredictor(x_c)
        z_T = invert(x_c, pred, schedule, InversionConfig(6, 2))
        plan = plan_timesteps(schedule, 10)
        out = sample(z_T, pred, schedule, plan, x_c, OFF).latents[-1]
        rel = np.linalg.norm(out - x_c) / np.linalg.norm(x_c)
        assert rel < 1e-3

    def test_fixed_point_iters_zero_vs_two(self):
        rng = np.random.default_rng(11)
        schedule = default_schedule()
        x_c = rng.normal(size=(1, 3, 3))
        pred = PointMassPredictor(x_c)
        plan = plan_timesteps(schedule, 10)
        errs = []
        for iters in (0, 2):
            z_T = invert(x_c, pred, schedule, InversionConfig(6, iters))
            out = sample(z_T, pred, schedule, plan, x_c, OFF).latents[-1]
            errs.append(np.linalg.norm(out - x_c) / np.linalg.norm(x_c))
        assert errs[0] < 1e-3 and errs[1] < 1e-3
        assert errs[1] <= errs[0] + 1e-12

    def test_predictor_calls_include_fixed_point_extras(self):
        rng = np.random.default_rng(12)
        schedule = default_schedule()
        counting = CountingPredictor(PointMassPredictor(rng.normal(size=(1, 2, 2))))
        invert(rng.normal(size=(1, 2, 2)), counting, schedule,
               InversionConfig(6, 2))
        assert counting.calls == 6 * (1 + 2)

    def test_deterministic(self):
        rng = np.random.default_rng(13)
        schedule = default_schedule()
        x_c = rng.normal(size=(1, 2, 2))
        pred = GaussianPriorPredictor(x_c, 0.7)
        a = invert(x_c, pred, schedule, InversionConfig(4, 1))
        b = invert(x_c, pred, schedule, InversionConfig(4, 1))
        assert np.array_equal(a, b)

    def test_divergence_names_the_step(self):
        rng = np.random.default_rng(14)
        schedule = default_schedule()
        target = rng.normal(size=(1, 2, 2))
        bomb = BombPredictor(PointMassPredictor(target), explode_at=2)
        with pytest.raises(NumericalDivergenceError, match="inversion step"):
            invert(rng.normal(size=(1, 2, 2)), bomb, schedule,
                   InversionConfig(4, 0))

    def test_config_validation(self):
        from idstyle.errors import ParameterError
        with pytest.raises(ParameterError):
            InversionConfig(0, 2)
        with pytest.raises(ParameterError):
            InversionConfig(3, -1)
