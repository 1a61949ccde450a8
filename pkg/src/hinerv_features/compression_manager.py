"""
圧縮パイプラインモジュール

学習済みモデルに対して、枝刈り + 微調整、Quant-Noise による量子化を意識した微調整、
固定小数点量子化、ビットストリーム化を順に行います。
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..errors import HiNeRVError
from ..models import CompressionConfig
from .bitstream import serialize
from .pruning import PruneMask, prune
from .quantization import QuantizedTensor, QuantNoise, apply_quantization, quantize_model
from .trainer import TrainingManager, TrainResult

logger = logging.getLogger(__name__)


@contextmanager
def pipeline_stage(stage: str) -> Iterator[None]:
    """段階内で発生したエラーに段階名を付ける"""
    try:
        yield
    except HiNeRVError as e:
        e.stage = stage
        raise


@dataclass
class CompressionResult:
    """圧縮パイプラインの結果"""

    bitstream: bytes
    quantized: Dict[str, QuantizedTensor]
    masks: Optional[PruneMask]
    prune_logs: List[TrainResult] = field(default_factory=list)
    qat_log: Optional[TrainResult] = None

    @property
    def sparsity(self) -> float:
        return self.masks.sparsity if self.masks is not None else 0.0


class CompressionManager:
    """枝刈り・量子化・符号化を管理するクラス"""

    def __init__(self, trainer: TrainingManager, config: CompressionConfig):
        """CompressionManagerの初期化

        Args:
            trainer (TrainingManager): 学習済みモデルと動画を保持するトレーナー
            config (CompressionConfig): 圧縮設定
        """
        self.trainer = trainer
        self.model = trainer.model
        self.config = config
        # ノイズの部分集合は学習のシードから派生させる
        self.rng = np.random.default_rng([trainer.config.seed, 1])

    def prune_and_finetune(self) -> Tuple[PruneMask, List[TrainResult]]:
        """prune_iterations 回、残りの重みの prune_ratio を枝刈りして微調整する"""
        masks: Optional[PruneMask] = None
        logs: List[TrainResult] = []
        for iteration in range(1, self.config.prune_iterations + 1):
            masks = prune(self.model, self.config.prune_ratio, self.config.prune_lambda, existing=masks)
            logger.info(f"枝刈り {iteration}/{self.config.prune_iterations}: スパース率 {masks.sparsity:.4f}, "
                        f"微調整 {self.config.prune_epochs} エポック")
            logs.append(self.trainer.train(epochs=self.config.prune_epochs, constraints=[masks]))
        return masks, logs

    def qat_finetune(self, masks: Optional[PruneMask] = None, epochs: Optional[int] = None) -> TrainResult:
        """Quant-Noise を適用した状態で学習率を下げて微調整する"""
        epochs = self.config.qat_epochs if epochs is None else epochs
        lr = self.trainer.config.base_lr * self.config.qat_lr_scale
        logger.info(f"Quant-Noise 微調整: epochs={epochs}, lr={lr}, noise={self.config.noise_ratio}, "
                    f"bits={self.config.bits}")
        self.model.param_transform = QuantNoise(self.config.bits, self.config.noise_ratio, self.rng)
        try:
            return self.trainer.train(epochs=epochs, base_lr=lr, constraints=[masks] if masks is not None else [])
        finally:
            self.model.param_transform = None

    def quantize(self) -> Dict[str, QuantizedTensor]:
        """全パラメータを量子化し、モデルの重みを量子化後の値に置き換える"""
        quantized = quantize_model(self.model, self.config.bits)
        apply_quantization(self.model, quantized)
        return quantized

    def compress(self) -> CompressionResult:
        """枝刈り → Quant-Noise 微調整 → 量子化 → ビットストリーム化"""
        masks: Optional[PruneMask] = None
        prune_logs: List[TrainResult] = []
        if self.config.prune_ratio > 0.0:
            with pipeline_stage("prune"):
                masks, prune_logs = self.prune_and_finetune()
        qat_log = None
        if self.config.qat_epochs > 0:
            with pipeline_stage("qat"):
                qat_log = self.qat_finetune(masks)
        with pipeline_stage("quantize"):
            quantized = self.quantize()
        with pipeline_stage("serialize"):
            bitstream = serialize(self.model, quantized, masks)
        return CompressionResult(bitstream=bitstream, quantized=quantized, masks=masks,
                                 prune_logs=prune_logs, qat_log=qat_log)
