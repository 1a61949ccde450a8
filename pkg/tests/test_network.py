"""HiNeRV ネットワークのテスト"""

import numpy as np
import pytest

from src.autodiff import no_grad
from src.errors import BitstreamError, ConfigurationError, UsageError
from src.hinerv_features.checkpoint import load_checkpoint, save_checkpoint
from src.hinerv_features.network import (
    Footprint,
    HiNeRVModel,
    conv_padding,
    padding_schedule,
    resolve_paddings,
    upsample_source_padding,
)
from src.hinerv_features.video_io import to_uint8
from src.models import ModelConfig, PatchCoordinate

from .conftest import small_model_config


def stitched_patches(model: HiNeRVModel, t: int) -> np.ndarray:
    cfg = model.config
    rows, cols = cfg.patch_grid
    size = cfg.patch_size
    frame = np.zeros((cfg.height, cfg.width, cfg.out_channels), dtype=model.dtype)
    with no_grad():
        for j in range(rows):
            for i in range(cols):
                patch = model.forward_patch(PatchCoordinate(i=i, j=j, t=t)).data
                frame[j * size:(j + 1) * size, i * size:(i + 1) * size] = patch
    return frame


class TestPadding:
    def test_single_conv_padding(self):
        assert conv_padding(3) == 1
        assert conv_padding(1) == 0

    def test_upsample_source_padding(self):
        assert upsample_source_padding(1, 2) == 1
        assert upsample_source_padding(4, 2) == 3
        assert upsample_source_padding(6, 5) == 2

    def test_uvg_schedule(self):
        config = ModelConfig.preset("s", 1080, 1920, 600)
        assert padding_schedule(config) == (3, 6, 6, 4, 1)

    def test_deeper_schedules(self):
        assert padding_schedule(ModelConfig.preset("xl", 1080, 1920, 600)) == (3, 7, 7, 5, 1)
        assert padding_schedule(ModelConfig.preset("xxl", 1080, 1920, 600)) == (4, 9, 9, 6, 1)

    def test_bunny_schedule(self):
        config = ModelConfig.preset("s", 720, 1280, 132, dataset="bunny")
        assert padding_schedule(config) == (3, 7, 6, 4, 1)

    def test_user_paddings_validated(self):
        assert resolve_paddings(small_model_config()) == (3, 3, 1)
        assert resolve_paddings(small_model_config(paddings=(5, 4, 2))) == (5, 4, 2)
        with pytest.raises(ConfigurationError):
            resolve_paddings(small_model_config(paddings=(3, 2, 1)))

    def test_patch_size_must_divide(self):
        with pytest.raises(ConfigurationError):
            HiNeRVModel(small_model_config(patch_size=6))
        with pytest.raises(ConfigurationError):
            HiNeRVModel(small_model_config(height=36))


class TestArchitecture:
    def test_scale_s_parameter_count(self):
        model = HiNeRVModel(ModelConfig.preset("s", 1080, 1920, 600))
        assert abs(model.num_parameters() - 3.19e6) / 3.19e6 <= 0.02

    def test_scale_s_progressions(self):
        config = ModelConfig.preset("s", 1080, 1920, 600)
        assert [config.block_channels(n) for n in range(1, 5)] == [280, 140, 70, 35]
        assert [config.stage_patch_size(s) for s in range(5)] == [2, 10, 30, 60, 120]
        assert config.patch_grid == (9, 16)

    def test_parameter_order_and_prunable_set(self, small_config):
        model = HiNeRVModel(small_config)
        names = [name for name, _ in model.named_parameters()]
        assert names[:4] == ["base_grid.0", "base_grid.1", "stem.weight", "stem.bias"]
        assert names[-2:] == ["head.weight", "head.bias"]
        prunable = set(model.prunable_names())
        assert "stem.weight" in prunable and "head.weight" in prunable
        assert "blocks.1.layers.0.dwconv.weight" in prunable
        assert not any("grid" in name or name.endswith("bias") or ".norm." in name for name in prunable)

    def test_shapes_through_the_network(self, small_config):
        model = HiNeRVModel(small_config)
        footprints = [Footprint.frame(small_config, s) for s in range(3)]
        with no_grad():
            x0 = model.stem_forward(footprints[0], 0)
            x1 = model.block_forward(1, x0, footprints[0], footprints[1], 0)
            x2 = model.block_forward(2, x1, footprints[1], footprints[2], 0)
        assert x0.shape == (8, 8, 8)
        assert x1.shape == (16, 16, 8)
        assert x2.shape == (32, 32, 4)

    def test_block_number_out_of_range(self, small_config):
        model = HiNeRVModel(small_config)
        footprint = Footprint.frame(small_config, 0)
        with pytest.raises(UsageError):
            model.block_forward(3, model.stem_forward(footprint, 0), footprint, footprint, 0)

    def test_same_seed_same_parameters(self, small_config):
        a = HiNeRVModel(small_config, seed=7).state_dict()
        b = HiNeRVModel(small_config, seed=7).state_dict()
        c = HiNeRVModel(small_config, seed=8).state_dict()
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert not np.array_equal(a["stem.weight"], c["stem.weight"])

    def test_disabling_hierarchical_encoding_removes_local_grids(self):
        model = HiNeRVModel(small_model_config(hierarchical_encoding=False))
        assert not any("local_grid" in name or ".enc." in name for name, _ in model.named_parameters())
        assert not model.has_local_encoding(1)


class TestForward:
    def test_output_range(self, small_config):
        model = HiNeRVModel(small_config)
        with no_grad():
            y = model.forward_frame(0).data
        assert y.shape == (32, 32, 3)
        assert y.dtype == np.float32
        assert np.all((y > 0) & (y < 1))

    def test_zero_head_gives_mid_grey(self, small_config):
        model = HiNeRVModel(small_config)
        model.parameter("head.weight").data[...] = 0.0
        with no_grad():
            y = model.forward_frame(1).data
        np.testing.assert_array_equal(y, 0.5)

    def test_patch_matches_frame(self, small_config):
        model = HiNeRVModel(small_config, seed=3)
        for t in (0, 3):
            with no_grad():
                frame = model.forward_frame(t).data
            assert np.max(np.abs(stitched_patches(model, t) - frame)) < 1e-5

    def test_patch_matches_frame_bytes(self):
        model = HiNeRVModel(small_model_config(), seed=5, dtype=np.float64)
        with no_grad():
            frame = model.forward_frame(2).data
        np.testing.assert_array_equal(to_uint8(stitched_patches(model, 2)), to_uint8(frame))

    def test_larger_paddings_keep_equivalence(self):
        model = HiNeRVModel(small_model_config(paddings=(5, 4, 2)), seed=2, dtype=np.float64)
        with no_grad():
            frame = model.forward_frame(1).data
        np.testing.assert_allclose(stitched_patches(model, 1), frame, atol=1e-10)

    def test_equivalence_with_odd_scale_and_no_local_grids(self):
        config = small_model_config(height=24, width=36, scales=(3, 2), patch_size=12, depths=(1, 2),
                                    hierarchical_encoding=False)
        model = HiNeRVModel(config, seed=4, dtype=np.float64)
        with no_grad():
            frame = model.forward_frame(0).data
        np.testing.assert_allclose(stitched_patches(model, 0), frame, atol=1e-10)

    def test_out_of_range_requests(self, small_config):
        model = HiNeRVModel(small_config)
        with pytest.raises(UsageError):
            model.forward_patch(PatchCoordinate(i=4, j=0, t=0))
        with pytest.raises(UsageError):
            model.forward_patch(PatchCoordinate(i=0, j=0, t=4))
        with pytest.raises(UsageError):
            model.forward_frame(4)

    def test_gradients_reach_parameters(self, small_config):
        model = HiNeRVModel(small_config)
        model.forward_patch(PatchCoordinate(i=1, j=2, t=1)).mean().backward()
        for name in ("stem.weight", "blocks.1.enc.weight", "blocks.2.layers.0.fc2.weight", "head.bias"):
            grad = model.parameter(name).grad
            assert grad is not None and np.any(grad != 0), name
        model.zero_grad()
        assert all(p.grad is None for p in model.parameters())


class TestCheckpoint:
    def test_round_trip(self, small_config, tmp_path):
        model = HiNeRVModel(small_config, seed=9)
        path = tmp_path / "model.ckpt"
        written = save_checkpoint(model, path)
        assert written == path.stat().st_size
        restored = load_checkpoint(path)
        assert restored.config == small_config
        for (name, a), (_, b) in zip(model.named_parameters(), restored.named_parameters()):
            np.testing.assert_array_equal(a.data, b.data, err_msg=name)
        with no_grad():
            np.testing.assert_array_equal(model.forward_frame(0).data, restored.forward_frame(0).data)

    def test_truncated_checkpoint(self, small_config, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(HiNeRVModel(small_config), path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(BitstreamError):
            load_checkpoint(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(BitstreamError):
            load_checkpoint(path)

    def test_state_dict_mismatch(self, small_config):
        model = HiNeRVModel(small_config)
        state = model.state_dict()
        state["head.weight"] = np.zeros((2, 2))
        with pytest.raises(ConfigurationError):
            model.load_state_dict(state)
