import math

import numpy as np
import pytest
from scipy.special import expit

from negsplat.optim import (
    AdamState,
    FitConfig,
    FitNumericError,
    densify_prune,
    fit,
    init_model,
    loss_and_grad,
    step,
)
from negsplat.renderer import ParamGradients
from negsplat.targets import make_target

from test_model import random_model


def constant_target(value=0.5, size=64):
    return np.full((size, size, 3), value)


def zero_grads(n):
    return ParamGradients(
        position=np.zeros((n, 2)),
        log_scales=np.zeros((n, 2)),
        rotation=np.zeros(n),
        opacity_logit=np.zeros(n),
        color=np.zeros((n, 3)),
    )


class TestInitModel:
    def test_zero_fraction_all_positive(self):
        cfg = FitConfig(n_splats_init=50, neg_fraction=0.0, seed=1)
        m = init_model(constant_target(), cfg)
        assert m.n_negative == 0

    def test_exact_negative_count(self):
        cfg = FitConfig(n_splats_init=100, neg_fraction=0.2, seed=1)
        m = init_model(constant_target(), cfg)
        assert m.n_negative == 20

    def test_deterministic(self):
        cfg = FitConfig(n_splats_init=30, neg_fraction=0.3, seed=5)
        a = init_model(constant_target(), cfg)
        b = init_model(constant_target(), cfg)
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.depths, b.depths)
        np.testing.assert_array_equal(a.colors, b.colors)

    def test_positive_splats_take_local_color(self):
        target = np.zeros((32, 32, 3))
        target[:, :16] = [0.9, 0.1, 0.1]
        target[:, 16:] = [0.1, 0.1, 0.9]
        cfg = FitConfig(n_splats_init=40, neg_fraction=0.0, seed=2)
        m = init_model(target, cfg)
        left = m.positions[:, 0] < 16
        assert np.all(m.colors[left] == [0.9, 0.1, 0.1])
        assert np.all(m.colors[~left] == [0.1, 0.1, 0.9])

    def test_negative_splats_use_small_uniform_color(self):
        cfg = FitConfig(n_splats_init=10, neg_fraction=0.5, seed=3)
        m = init_model(constant_target(0.9), cfg)
        np.testing.assert_allclose(m.colors[m.sign_mask], 0.1)

    def test_initial_opacity(self):
        cfg = FitConfig(n_splats_init=4, seed=0)
        m = init_model(constant_target(), cfg)
        np.testing.assert_allclose(expit(m.opacity_logits), 0.1, rtol=1e-12)

    def test_positions_inside_frame(self):
        cfg = FitConfig(n_splats_init=200, seed=4)
        m = init_model(np.zeros((16, 48, 3)), cfg)
        assert np.all(m.positions[:, 0] >= 0) and np.all(m.positions[:, 0] <= 48)
        assert np.all(m.positions[:, 1] >= 0) and np.all(m.positions[:, 1] <= 16)

    def test_rejects_bad_fraction(self):
        with pytest.raises(ValueError, match="neg_fraction"):
            FitConfig(neg_fraction=1.5)

    def test_rejects_empty_target(self):
        with pytest.raises(ValueError, match="target"):
            init_model(np.zeros((0, 4, 3)), FitConfig())


class TestLoss:
    def test_identical_images_zero_loss(self, rng):
        img = rng.random((16, 16, 3))
        value, grad = loss_and_grad(img, img, 0.2)
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_pure_l1(self):
        a = np.full((16, 16, 3), 0.6)
        b = np.full((16, 16, 3), 0.5)
        value, _ = loss_and_grad(a, b, 0.0)
        assert value == pytest.approx(0.1, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            loss_and_grad(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)), 0.2)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        a = rng.random((16, 16, 3)) * 0.8 + 0.1
        b = rng.random((16, 16, 3))
        _, grad = loss_and_grad(a, b, 0.2)
        fd_step = 1e-6
        for idx in [(0, 0, 0), (7, 9, 1), (15, 15, 2), (4, 12, 0)]:
            ap, am = a.copy(), a.copy()
            ap[idx] += fd_step
            am[idx] -= fd_step
            fd = (
                loss_and_grad(ap, b, 0.2)[0] - loss_and_grad(am, b, 0.2)[0]
            ) / (2 * fd_step)
            assert grad[idx] == pytest.approx(fd, rel=1e-4, abs=1e-8)


class TestStep:
    def test_zero_gradient_keeps_parameters(self, rng):
        m = random_model(rng, 6)
        before = m.positions.copy()
        state = AdamState.for_model(m)
        step(m, zero_grads(6), state, FitConfig())
        np.testing.assert_array_equal(m.positions, before)
        assert state.t == 1

    def test_constant_gradient_reaches_lr_magnitude(self):
        # Adam steady state: |update| -> lr * sign(g)
        m = random_model(np.random.default_rng(0), 1)
        state = AdamState.for_model(m)
        cfg = FitConfig(lr_rotation=0.01)
        g = zero_grads(1)
        g.rotation[0] = 3.7
        prev = float(m.rotations[0])
        for _ in range(200):
            step(m, g, state, cfg)
        delta = float(m.rotations[0]) - prev
        last_step = None
        prev = float(m.rotations[0])
        step(m, g, state, cfg)
        last_step = abs(float(m.rotations[0]) - prev)
        assert last_step == pytest.approx(cfg.lr_rotation, rel=1e-6)
        assert delta < 0  # moves against the gradient

    def test_deterministic(self, rng):
        m1 = random_model(rng, 4)
        m2 = m1.copy()
        g = zero_grads(4)
        g.position[:] = 0.5
        s1, s2 = AdamState.for_model(m1), AdamState.for_model(m2)
        cfg = FitConfig()
        step(m1, g, s1, cfg)
        step(m2, g, s2, cfg)
        np.testing.assert_array_equal(m1.positions, m2.positions)

    def test_mask_and_depth_untouched(self, rng):
        m = random_model(rng, 5)
        mask_before = m.sign_mask.copy()
        depth_before = m.depths.copy()
        g = zero_grads(5)
        g.position[:] = 1.0
        step(m, g, AdamState.for_model(m), FitConfig())
        np.testing.assert_array_equal(m.sign_mask, mask_before)
        np.testing.assert_array_equal(m.depths, depth_before)

    def test_colors_stay_nonnegative(self, rng):
        m = random_model(rng, 5)
        m.colors[:] = 0.001
        g = zero_grads(5)
        g.color[:] = 100.0  # huge positive gradient pushes colors down
        step(m, g, AdamState.for_model(m), FitConfig())
        assert np.all(m.colors >= 0.0)

    def test_non_finite_gradient_identifies_splat(self, rng):
        m = random_model(rng, 5)
        g = zero_grads(5)
        g.position[3, 0] = np.nan
        with pytest.raises(FitNumericError, match="splat 3"):
            step(m, g, AdamState.for_model(m), FitConfig())


class TestDensifyPrune:
    def test_unchanged_when_healthy(self, rng):
        m = random_model(rng, 10)
        m.opacity_logits[:] = 3.0  # alpha ~ 0.95
        out, info = densify_prune(m, np.zeros(10), FitConfig(n_splats_init=10), rng)
        assert len(out) == 10
        assert info.clone_parents.size == 0

    def test_prunes_transparent_splat(self, rng):
        m = random_model(rng, 3)
        m.opacity_logits[:] = 3.0
        m.opacity_logits[1] = float(np.log(0.001 / 0.999))  # alpha ~ 0.001
        cfg = FitConfig(n_splats_init=3, prune_opacity_threshold=0.005)
        out, info = densify_prune(m, np.zeros(3), cfg, rng)
        assert len(out) == 2
        np.testing.assert_array_equal(info.keep, [True, False, True])

    def test_clone_inherits_negative_mask(self, rng):
        m = random_model(rng, 10)
        m.opacity_logits[:] = 3.0
        m.sign_mask[:] = False
        m.sign_mask[4] = True
        acc = np.zeros(10)
        acc[4] = 5.0  # only splat 4 exceeds the 90th percentile
        out, info = densify_prune(m, acc, FitConfig(n_splats_init=10), rng)
        assert len(out) == 11
        assert out.sign_mask[10]  # the appended clone is negative
        np.testing.assert_array_equal(info.clone_parents, [4])

    def test_clone_jitter_is_small_and_seeded(self, rng):
        m = random_model(rng, 5)
        m.opacity_logits[:] = 3.0
        m.log_scales[:] = 0.0
        acc = np.array([0.0, 0.0, 9.0, 0.0, 0.0])
        out1, _ = densify_prune(m.copy(), acc, FitConfig(n_splats_init=5), np.random.default_rng(8))
        out2, _ = densify_prune(m.copy(), acc, FitConfig(n_splats_init=5), np.random.default_rng(8))
        np.testing.assert_array_equal(out1.positions, out2.positions)
        # jitter sigma is scale/4 = 0.25 px here
        assert np.linalg.norm(out1.positions[5] - m.positions[2]) < 2.0

    def test_size_cap(self, rng):
        cfg = FitConfig(n_splats_init=2)  # cap = 8
        m = random_model(rng, 8)
        m.opacity_logits[:] = 3.0
        acc = rng.uniform(1, 2, size=8)
        out, _ = densify_prune(m, acc, cfg, rng)
        assert len(out) <= 8

    def test_empty_after_prune_is_legal(self, rng):
        m = random_model(rng, 4)
        m.opacity_logits[:] = -10.0
        out, _ = densify_prune(m, np.zeros(4), FitConfig(n_splats_init=4), rng)
        assert len(out) == 0


class TestFit:
    def test_constant_target_single_splat(self):
        cfg = FitConfig(
            iterations=200, n_splats_init=1, neg_fraction=0.0, seed=0,
            ssim_weight=0.0,
        )
        model, report = fit(constant_target(0.5), cfg)
        assert report.final_psnr > 30.0
        assert report.losses.shape == (200,)

    def test_zero_iterations(self):
        cfg = FitConfig(iterations=0, n_splats_init=4, seed=0)
        model, report = fit(constant_target(), cfg)
        assert report.losses.size == 0
        assert report.psnr_trace == []
        assert len(model) == 4

    def test_deterministic_trace(self):
        target = make_target("ring", 32, 32)
        cfg = FitConfig(iterations=60, n_splats_init=16, seed=9, densify_interval=25)
        _, r1 = fit(target, cfg)
        _, r2 = fit(target, cfg)
        np.testing.assert_array_equal(r1.losses, r2.losses)
        assert r1.to_text() == r2.to_text()

    def test_loss_decreases_in_trend(self):
        target = make_target("ring", 48, 48)
        cfg = FitConfig(iterations=300, n_splats_init=32, seed=2)
        _, report = fit(target, cfg)
        half = len(report.losses) // 2
        assert np.median(report.losses[:half]) > np.median(report.losses[half:])

    def test_counts_sum_to_model_size(self):
        target = make_target("ring", 32, 32)
        cfg = FitConfig(iterations=120, n_splats_init=16, seed=1, neg_fraction=0.25)
        model, report = fit(target, cfg)
        assert report.n_positive + report.n_negative == len(model)

    def test_budget_bound_holds(self):
        target = make_target("checker", 32, 32)
        cfg = FitConfig(iterations=250, n_splats_init=8, seed=3)
        model, _ = fit(target, cfg)
        assert len(model) <= 4 * cfg.n_splats_init

    def test_checkpoints_written(self, tmp_path):
        target = constant_target(size=32)
        cfg = FitConfig(iterations=5, n_splats_init=2, seed=0)
        fit(target, cfg, checkpoint_dir=tmp_path)
        assert (tmp_path / "checkpoint.json").exists()

    def test_report_text_format(self):
        cfg = FitConfig(iterations=100, n_splats_init=2, seed=0, ssim_weight=0.0)
        _, report = fit(constant_target(0.3, size=24), cfg)
        text = report.to_text()
        assert text.startswith("iter=1 loss=")
        assert " psnr=" in text.splitlines()[99]
        assert "final_psnr=" in text
        assert "positive=" in text and "negative=" in text
