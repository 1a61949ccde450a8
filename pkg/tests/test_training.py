"""損失・指標・最適化・学習ループのテスト"""

import csv

import numpy as np
import pytest

from src.autodiff import Tensor
from src.errors import ConfigurationError, NumericError, UsageError
from src.hinerv_features.metrics import (
    PSNR_CAP,
    ms_ssim,
    ms_ssim_levels,
    ms_ssim_tensor,
    psnr,
    reconstruction_loss,
)
from src.hinerv_features.network import HiNeRVModel
from src.hinerv_features.optimizer import Adam, clip_grad_norm, global_grad_norm, warmup_cosine_lr
from src.hinerv_features.trainer import TrainingManager, sample_patches, write_train_log
from src.models import TrainLogEntry

from .conftest import finite_difference_check, moving_gradient_clip, small_model_config, tiny_train_config


def micro_setup(seed: int = 0, **train_overrides):
    """16x16, 2フレームの極小構成 (1エポック = 8パッチ)"""
    config = small_model_config(height=16, width=16, frames=2)
    model = HiNeRVModel(config, seed=seed)
    video = moving_gradient_clip(frames=2, height=16, width=16)
    return model, video, tiny_train_config(**train_overrides)


class TestMetrics:
    def test_psnr_examples(self):
        a = np.zeros((4, 4, 3))
        assert psnr(a, a) == PSNR_CAP
        assert psnr(a, np.ones_like(a)) == pytest.approx(0.0)
        assert psnr(a, np.full_like(a, 0.5)) == pytest.approx(6.0206, abs=1e-4)

    def test_psnr_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            psnr(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))

    def test_ms_ssim_identity_and_symmetry(self, rng):
        a = rng.uniform(0, 1, size=(32, 32, 3))
        b = np.clip(a + rng.normal(0, 0.1, size=a.shape), 0, 1)
        assert ms_ssim(a, a) == pytest.approx(1.0, abs=1e-9)
        assert ms_ssim(a, b) == pytest.approx(ms_ssim(b, a), abs=1e-12)
        assert ms_ssim(a, b) < 1.0

    def test_ms_ssim_constant_images(self):
        # 8x8 は単一スケールなので輝度項が効き、値はほぼ0になる。
        # 複数スケールでは輝度項が最も粗いスケールだけに入るため、64x64 では約 0.08 にとどまる
        zeros, ones = np.zeros((8, 8, 1)), np.ones((8, 8, 1))
        assert ms_ssim_levels(8, 8, 5) == 1
        assert ms_ssim(zeros, ones) < 0.05

    def test_scale_count_follows_image_size(self):
        assert ms_ssim_levels(5, 7, 5) == 1
        assert ms_ssim_levels(10, 10, 5) == 2
        assert ms_ssim_levels(64, 64, 5) == 4
        assert ms_ssim_levels(1080, 1920, 5) == 5
        with pytest.raises(ConfigurationError):
            ms_ssim_levels(4, 32, 5)

    def test_ms_ssim_monotone_in_noise(self, rng):
        a = moving_gradient_clip(frames=1, height=32, width=32)[0]
        noise = rng.normal(0, 1, size=a.shape)
        values = [ms_ssim(a, np.clip(a + level * noise, 0, 1)) for level in (0.01, 0.05, 0.2)]
        assert values[0] > values[1] > values[2]

    def test_ms_ssim_gradient(self, rng):
        target = rng.uniform(0.2, 0.8, size=(12, 12, 1))
        pred = target + rng.normal(0, 0.05, size=target.shape)
        finite_difference_check(lambda p: ms_ssim_tensor(p, Tensor(target, dtype=np.float64)), [pred],
                                tolerance=1e-3)

    def test_loss_examples(self, rng):
        target = rng.uniform(0, 1, size=(10, 10, 3))
        pred = np.clip(target + rng.normal(0, 0.1, size=target.shape), 0, 1)
        assert reconstruction_loss(Tensor(target), target).item() == pytest.approx(0.0, abs=1e-6)
        l1 = reconstruction_loss(Tensor(pred), target, alpha=1.0).item()
        assert l1 == pytest.approx(np.mean(np.abs(pred - target)), rel=1e-6)
        assert reconstruction_loss(Tensor(target), target, alpha=0.0).item() == pytest.approx(0.0, abs=1e-6)

    def test_structural_loss_decreases_with_similarity(self, rng):
        target = moving_gradient_clip(frames=1, height=16, width=16)[0].astype(np.float64)
        noise = rng.normal(0, 1, size=target.shape)
        near = reconstruction_loss(Tensor(target + 0.02 * noise), target, alpha=0.0).item()
        far = reconstruction_loss(Tensor(target + 0.2 * noise), target, alpha=0.0).item()
        assert 0.0 < near < far

    def test_composite_loss_gradient(self, rng):
        target = rng.uniform(0.2, 0.8, size=(10, 10, 1))
        pred = target + rng.normal(0, 0.05, size=target.shape)
        finite_difference_check(lambda p: reconstruction_loss(p, target, alpha=0.7), [pred], tolerance=1e-3)


class TestSampling:
    def test_exact_cover_without_replacement(self, rng):
        patches = sample_patches(rng, 3, (2, 4), 24)
        assert len({(p.t, p.j, p.i) for p in patches}) == 24
        assert all(p.t < 3 and p.j < 2 and p.i < 4 for p in patches)

    def test_more_than_one_round_covers_each_round(self, rng):
        patches = sample_patches(rng, 2, (1, 2), 10)
        first, second = patches[:4], patches[4:8]
        assert len({(p.t, p.i) for p in first}) == 4
        assert len({(p.t, p.i) for p in second}) == 4

    def test_fixed_seed_is_reproducible(self):
        a = sample_patches(np.random.default_rng(5), 4, (3, 3), 36)
        b = sample_patches(np.random.default_rng(5), 4, (3, 3), 36)
        assert a == b

    def test_uniform_marginal_over_frames(self, rng):
        frames, draws = 8, 10 ** 5
        patches = sample_patches(rng, frames, (2, 2), draws, replace=True)
        counts = np.bincount([p.t for p in patches], minlength=frames)
        expected = draws / frames
        chi_square = float(np.sum((counts - expected) ** 2 / expected))
        # 自由度7、有意水準0.001
        assert chi_square < 24.32

    def test_count_must_be_positive(self, rng):
        with pytest.raises(UsageError):
            sample_patches(rng, 1, (1, 1), 0)


class TestOptimizer:
    def test_zero_gradients_leave_parameters(self):
        w = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        optimizer = Adam([("w", w)], lr=0.1)
        optimizer.step()
        np.testing.assert_array_equal(w.data, [1.0, -2.0])
        w.grad = np.zeros(2)
        optimizer.step()
        np.testing.assert_array_equal(w.data, [1.0, -2.0])

    def test_quadratic_bowl(self):
        w = Tensor(np.array([0.5, -0.3, 0.2]), requires_grad=True)
        optimizer = Adam([("w", w)], lr=1e-2)
        for _ in range(500):
            optimizer.zero_grad()
            (w * w).sum().backward()
            optimizer.step()
        assert np.linalg.norm(w.data) < 1e-3

    def test_schedule_shape(self):
        total, base = 1000, 2e-3
        assert warmup_cosine_lr(0, total, base) == pytest.approx(base / 100)
        assert warmup_cosine_lr(99, total, base) == pytest.approx(base)
        assert warmup_cosine_lr(100, total, base) == pytest.approx(base)
        assert warmup_cosine_lr(total - 1, total, base) < 1e-4 * base
        rates = [warmup_cosine_lr(s, total, base) for s in range(100, total)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_no_warmup(self):
        assert warmup_cosine_lr(0, 10, 1.0, warmup=0.0) == pytest.approx(1.0)

    def test_clipping(self):
        a = Tensor(np.zeros(2), requires_grad=True)
        b = Tensor(np.zeros(1), requires_grad=True)
        a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
        assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
        assert global_grad_norm([a, b]) == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_allclose(a.grad, [0.6, 0.0], atol=1e-6)

    def test_clipping_below_threshold_is_noop(self):
        a = Tensor(np.zeros(2), requires_grad=True)
        a.grad = np.array([0.3, 0.4])
        clip_grad_norm([a], 1.0)
        np.testing.assert_array_equal(a.grad, [0.3, 0.4])


class TestTrainingManager:
    def test_effective_batch_rule(self):
        model, video, _ = micro_setup()
        manager = TrainingManager(model, video, tiny_train_config(patches_per_step=None, batch_frames=1))
        assert manager.patches_per_step == 4
        assert manager.steps_per_epoch == 2

    def test_zero_epochs_leaves_model_unchanged(self):
        model, video, config = micro_setup()
        before = model.state_dict()
        result = TrainingManager(model, video, config).train(epochs=0)
        assert result.log == [] and result.steps == 0
        after = model.state_dict()
        assert all(np.array_equal(before[k], after[k]) for k in before)

    def test_same_seed_gives_identical_parameters(self):
        states = []
        for _ in range(2):
            model, video, config = micro_setup(seed=3)
            TrainingManager(model, video, config).train(epochs=1)
            states.append(model.state_dict())
        assert all(np.array_equal(states[0][k], states[1][k]) for k in states[0])

    def test_training_changes_parameters_and_logs(self, tmp_path):
        model, video, config = micro_setup()
        before = model.parameter("head.weight").data.copy()
        seen = []
        log_path = tmp_path / "train.csv"
        result = TrainingManager(model, video, config).train(epochs=2, on_epoch=seen.append, log_path=log_path)
        assert result.steps == 4
        assert [entry.epoch for entry in result.log] == [1, 2]
        assert seen == result.log
        assert not np.array_equal(before, model.parameter("head.weight").data)
        assert all(np.isfinite(entry.loss) and entry.psnr > 0 for entry in result.log)
        with open(log_path, newline="") as f:
            rows = list(csv.DictReader(f))
        assert list(rows[0]) == ["epoch", "step", "lr", "loss", "psnr"]
        assert len(rows) == 2

    def test_non_finite_loss(self):
        model, video, config = micro_setup()
        video = video.copy()
        video[0, 0, 0, 0] = np.nan
        with pytest.raises(NumericError) as excinfo:
            TrainingManager(model, video, config).train(epochs=1)
        assert excinfo.value.stage == "train"

    def test_video_shape_must_match(self):
        model, video, config = micro_setup()
        with pytest.raises(UsageError):
            TrainingManager(model, video[:1], config)

    def test_write_train_log(self, tmp_path):
        path = tmp_path / "log.csv"
        write_train_log([TrainLogEntry(epoch=1, step=3, lr=1e-3, loss=0.5, psnr=20.0)], path)
        assert path.read_text().splitlines()[0] == "epoch,step,lr,loss,psnr"
