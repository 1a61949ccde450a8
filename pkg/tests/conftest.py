"""テスト共通のフィクスチャとヘルパー"""

from typing import Callable, Sequence

import numpy as np
import pytest

from src.autodiff import Tensor
from src.models import CompressionConfig, ModelConfig, TrainConfig


def moving_gradient_clip(frames: int = 8, height: int = 64, width: int = 64) -> np.ndarray:
    """横方向に流れる滑らかなグラデーションの合成動画 (T, H, W, 3)"""
    t = np.arange(frames, dtype=np.float64)[:, None, None]
    y = np.arange(height, dtype=np.float64)[None, :, None] / height
    x = np.arange(width, dtype=np.float64)[None, None, :] / width
    shift = t / frames
    red = 0.5 + 0.4 * np.sin(2 * np.pi * (x + shift))
    green = 0.2 + 0.6 * y
    blue = 0.5 + 0.3 * np.cos(2 * np.pi * (x + y - shift))
    clip = np.stack(np.broadcast_arrays(red, green, blue), axis=-1)
    return clip.astype(np.float32)


def small_model_config(**overrides) -> ModelConfig:
    """等価性テスト用の小さな構成 (32x32, T=4, 2ブロック)"""
    values = dict(
        height=32, width=32, frames=4, depths=(2, 1), scales=(2, 2), base_channels=8, patch_size=8,
        grid_frames=4, grid_height=4, grid_width=4, grid_channels=2, grid_levels=2,
        local_channels=2, local_levels=2,
    )
    values.update(overrides)
    return ModelConfig(**values)


def tiny_train_config(**overrides) -> TrainConfig:
    values = dict(epochs=2, base_lr=2e-3, patches_per_step=4, seed=0)
    values.update(overrides)
    return TrainConfig(**values)


def finite_difference_check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-6,
                            tolerance: float = 1e-4) -> float:
    """64bit で解析的勾配と中心差分を比較し、最大相対誤差を返す

    fn は Tensor を受け取りスカラー Tensor を返す関数。
    """
    tensors = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    fn(*tensors).backward()
    worst = 0.0
    for index, tensor in enumerate(tensors):
        analytic = tensor.grad
        numeric = np.zeros_like(tensor.data)
        for flat in range(tensor.size):
            values = [np.array(x, dtype=np.float64) for x in inputs]
            values[index].reshape(-1)[flat] += eps
            plus = fn(*[Tensor(v) for v in values]).item()
            values[index].reshape(-1)[flat] -= 2 * eps
            minus = fn(*[Tensor(v) for v in values]).item()
            numeric.reshape(-1)[flat] = (plus - minus) / (2 * eps)
        # 勾配の大きさに対する相対誤差 (ゼロ近傍の要素は全体の尺度で評価)
        scale = np.abs(numeric) + max(1e-8, 1e-3 * float(np.max(np.abs(numeric))))
        error = float(np.max(np.abs(analytic - numeric) / scale))
        worst = max(worst, error)
    assert worst < tolerance, f"勾配の相対誤差 {worst:.2e} が許容値 {tolerance:.0e} を超えています"
    return worst


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_config() -> ModelConfig:
    return small_model_config()


@pytest.fixture
def tiny_clip() -> np.ndarray:
    return moving_gradient_clip(frames=4, height=32, width=32)


@pytest.fixture
def fast_compression() -> CompressionConfig:
    return CompressionConfig(prune_ratio=0.15, prune_epochs=1, qat_epochs=1, bits=6)


# 16x16, 2フレーム用の設定ファイル (寸法は入力動画から決まる)
MICRO_CONFIG_TEXT = """\
# 極小構成
depths=2,1
scales=2,2
base_channels=8
patch_size=8
grid_frames=2
grid_height=2
grid_width=2
grid_channels=2
grid_levels=1
local_channels=2
local_levels=1
epochs=2
patches_per_step=4
prune_epochs=1
qat_epochs=1
"""


@pytest.fixture
def codec_env(tmp_path, monkeypatch):
    """ビットストリーム公開ディレクトリとキャッシュを一時ディレクトリに向ける"""
    from src.codec_client import clear_codec_tools_cache

    bitstreams = tmp_path / "bitstreams"
    bitstreams.mkdir()
    monkeypatch.setenv("HINERV_BITSTREAM_DIR", str(bitstreams))
    monkeypatch.setenv("HINERV_CACHE_PATH", str(tmp_path / "cache"))
    monkeypatch.setenv("HINERV_THREADS", "2")
    clear_codec_tools_cache()
    yield tmp_path
    clear_codec_tools_cache()


@pytest.fixture(scope="session")
def encoded_clip(tmp_path_factory):
    """極小動画を一度だけエンコードし、(動画ディレクトリ, 設定, ビットストリーム) を返す"""
    from src.codec_tools import HiNeRVCodec
    from src.hinerv_features.video_io import write_video

    root = tmp_path_factory.mktemp("encoded")
    video = root / "clip"
    write_video(moving_gradient_clip(frames=2, height=16, width=16), video)
    config = root / "micro.conf"
    config.write_text(MICRO_CONFIG_TEXT)
    output = root / "clip.hnrv"
    report = HiNeRVCodec().encode(video, config, output)
    return video, config, output, report
