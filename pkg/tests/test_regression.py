"""学習を伴う回帰テスト (8フレーム 64x64 の合成動画、tiny 構成)

pytest -m slow で実行する。
"""

from typing import Dict, Tuple

import numpy as np
import pytest

from src.hinerv_features.bitstream import load_model
from src.hinerv_features.compression_manager import CompressionManager
from src.hinerv_features.decoder import DecodeManager
from src.hinerv_features.metrics import psnr
from src.hinerv_features.network import HiNeRVModel
from src.hinerv_features.quantization import apply_quantization, max_quantization_error, quantize_model
from src.hinerv_features.trainer import TrainingManager
from src.models import CompressionConfig, ModelConfig, TrainConfig

from .conftest import moving_gradient_clip

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2, 3, 4)
OVERFIT_EPOCHS = 300


def tiny_preset(hierarchical: bool = True) -> ModelConfig:
    return ModelConfig.preset("tiny", 64, 64, 8, hierarchical_encoding=hierarchical)


def video_psnr(model: HiNeRVModel, video: np.ndarray) -> float:
    return psnr(DecodeManager(model, workers=1).decode(), video)


@pytest.fixture(scope="module")
def clip() -> np.ndarray:
    return moving_gradient_clip(frames=8, height=64, width=64)


@pytest.fixture(scope="module")
def overfit(clip):
    """(seed, 階層的エンコーディングの有無) ごとに学習済みモデルを一度だけ作る"""
    cache: Dict[Tuple[int, bool], TrainingManager] = {}

    def get(seed: int, hierarchical: bool = True) -> TrainingManager:
        key = (seed, hierarchical)
        if key not in cache:
            model = HiNeRVModel(tiny_preset(hierarchical), seed=seed)
            trainer = TrainingManager(model, clip, TrainConfig(epochs=OVERFIT_EPOCHS, seed=seed))
            trainer.train()
            cache[key] = trainer
        return cache[key]

    return get


def test_overfit_reaches_35db(overfit, clip):
    trainer = overfit(0)
    assert video_psnr(trainer.model, clip) >= 35.0


def test_hierarchical_encoding_improves_psnr(overfit, clip):
    wins = 0
    for seed in SEEDS:
        with_local = video_psnr(overfit(seed, True).model, clip)
        without_local = video_psnr(overfit(seed, False).model, clip)
        wins += without_local < with_local
    assert wins >= 4


def test_psnr_increases_over_first_epochs(clip):
    increasing = 0
    for seed in SEEDS:
        model = HiNeRVModel(tiny_preset(), seed=seed)
        result = TrainingManager(model, clip, TrainConfig(epochs=10, seed=seed)).train()
        curve = [entry.psnr for entry in result.log]
        increasing += all(b > a for a, b in zip(curve, curve[1:]))
    assert increasing >= 4


def test_qat_beats_post_training_quantization(overfit, clip):
    wins = 0
    for seed in SEEDS:
        trainer = overfit(seed)
        trained = trainer.model.state_dict()

        ptq_model = HiNeRVModel(trainer.model.config, seed=seed)
        ptq_model.load_state_dict(trained)
        quantized = quantize_model(ptq_model, bits=6)
        for name, q in quantized.items():
            bound = max_quantization_error(trained[name], q)
            assert bound is None or bound <= q.spec.scale / 2 + 1e-7
        apply_quantization(ptq_model, quantized)
        ptq = video_psnr(ptq_model, clip)

        qat_model = HiNeRVModel(trainer.model.config, seed=seed)
        qat_model.load_state_dict(trained)
        qat_trainer = TrainingManager(qat_model, clip, trainer.config)
        manager = CompressionManager(qat_trainer, CompressionConfig(prune_ratio=0.0, qat_epochs=30, bits=6))
        manager.qat_finetune()
        manager.quantize()
        wins += video_psnr(qat_model, clip) >= ptq
    assert wins >= 4


def test_end_to_end_quantized_psnr_floor(overfit, clip):
    trainer = overfit(0)
    unquantized = video_psnr(trainer.model, clip)

    model = HiNeRVModel(trainer.model.config, seed=0)
    model.load_state_dict(trainer.model.state_dict())
    manager = CompressionManager(TrainingManager(model, clip, trainer.config),
                                 CompressionConfig(prune_ratio=0.0, qat_epochs=30, bits=6))
    result = manager.compress()

    decoded = video_psnr(load_model(result.bitstream), clip)
    assert decoded >= unquantized - 1.5
    bpp = 8 * len(result.bitstream) / (8 * 64 * 64)
    assert 0 < bpp < 24
