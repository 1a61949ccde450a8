"""
学習モジュール

動画1本に対してモデルを過学習させるエンコーダの主処理です。
パッチを非復元抽出でサンプリングし、L1 + MS-SSIM 損失を Adam で最小化します。
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from ..errors import NumericError, UsageError
from ..models import PatchCoordinate, TrainConfig, TrainLogEntry
from .metrics import PSNR_CAP, reconstruction_loss
from .network import HiNeRVModel
from .optimizer import Adam, clip_grad_norm, warmup_cosine_lr

logger = logging.getLogger(__name__)

TRAIN_LOG_FIELDS = ("epoch", "step", "lr", "loss", "psnr")


class StepConstraint(Protocol):
    """最適化ステップの前後でパラメータや勾配を制約するフック (枝刈りマスクなど)"""

    def before_step(self, model: HiNeRVModel) -> None: ...

    def after_step(self, model: HiNeRVModel) -> None: ...


@dataclass
class TrainResult:
    """学習の結果"""

    log: List[TrainLogEntry] = field(default_factory=list)
    steps: int = 0

    @property
    def final_psnr(self) -> float:
        return self.log[-1].psnr if self.log else 0.0


def sample_patches(rng: np.random.Generator, frames: int, partition: Tuple[int, int], count: int,
                   replace: bool = False) -> List[PatchCoordinate]:
    """(t, j, i) を一様にサンプリングする

    Args:
        rng (np.random.Generator): 乱数生成器
        frames (int): フレーム数 T
        partition (Tuple[int, int]): (縦方向のパッチ数, 横方向のパッチ数)
        count (int): サンプル数
        replace (bool, optional): 復元抽出するかどうか。デフォルトは False (全パッチを重複なく巡回)。

    Returns:
        List[PatchCoordinate]: パッチ座標の列
    """
    if count < 1:
        raise UsageError(f"サンプル数は1以上である必要があります: {count}")
    rows, cols = partition
    total = frames * rows * cols
    if replace:
        indices = rng.integers(0, total, size=count)
    else:
        rounds = math.ceil(count / total)
        indices = np.concatenate([rng.permutation(total) for _ in range(rounds)])[:count]
    per_frame = rows * cols
    return [
        PatchCoordinate(t=int(idx // per_frame), j=int(idx % per_frame // cols), i=int(idx % cols))
        for idx in indices
    ]


def write_train_log(log: Sequence[TrainLogEntry], path: Union[str, Path]) -> None:
    """学習ログを CSV (epoch, step, lr, loss, psnr) で書き出す"""
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=TRAIN_LOG_FIELDS)
        writer.writeheader()
        for entry in log:
            writer.writerow(entry.model_dump())


class TrainingManager:
    """動画へのモデル当てはめを管理するクラス"""

    def __init__(self, model: HiNeRVModel, video: np.ndarray, config: TrainConfig):
        """TrainingManagerの初期化

        Args:
            model (HiNeRVModel): 学習対象のモデル
            video (np.ndarray): (T, H, W, 3) の [0, 1] 値の動画
            config (TrainConfig): 学習設定
        """
        expected = (model.config.frames, model.config.height, model.config.width, model.config.out_channels)
        if video.shape != expected:
            raise UsageError(f"動画の形状 {video.shape} がモデル構成 {expected} と一致しません")
        self.model = model
        self.video = video.astype(model.dtype, copy=False)
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.total_patches = model.config.frames * model.config.patch_grid[0] * model.config.patch_grid[1]

    @property
    def patches_per_step(self) -> int:
        return self.config.effective_patches(self.model.config)

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(self.total_patches / self.patches_per_step)

    def patch_target(self, patch: PatchCoordinate) -> np.ndarray:
        size = self.model.config.patch_size
        return self.video[patch.t, patch.j * size:(patch.j + 1) * size, patch.i * size:(patch.i + 1) * size]

    def train_step(self, patches: Sequence[PatchCoordinate], lr: float, optimizer: Adam,
                   constraints: Sequence[StepConstraint] = ()) -> Tuple[float, float]:
        """1ステップ分の順伝播・逆伝播・更新を行い、(損失, 二乗誤差和) を返す

        Raises:
            NumericError: 損失が非有限になった場合
        """
        optimizer.zero_grad()
        weight = 1.0 / len(patches)
        total_loss = 0.0
        squared_error = 0.0
        for patch in patches:
            target = self.patch_target(patch)
            pred = self.model.forward_patch(patch)
            loss = reconstruction_loss(pred, target, alpha=self.config.loss_alpha, window=self.config.ssim_window)
            value = loss.item()
            if not math.isfinite(value):
                logger.error(f"非有限の損失を検出しました: patch={patch}, loss={value}")
                raise NumericError(f"損失が非有限になりました (patch={patch.model_dump()})", stage="train")
            (loss * weight).backward()
            total_loss += value * weight
            squared_error += float(np.sum((pred.data.astype(np.float64) - target) ** 2))

        for constraint in constraints:
            constraint.before_step(self.model)
        clip_grad_norm(self.model.parameters(), self.config.grad_clip_norm)
        optimizer.step(lr)
        for constraint in constraints:
            constraint.after_step(self.model)
        return total_loss, squared_error

    def train(self, epochs: Optional[int] = None, base_lr: Optional[float] = None,
              constraints: Sequence[StepConstraint] = (),
              on_epoch: Optional[Callable[[TrainLogEntry], None]] = None,
              log_path: Optional[Union[str, Path]] = None) -> TrainResult:
        """モデルを学習する

        Args:
            epochs (Optional[int], optional): エポック数。未指定時は設定値。
            base_lr (Optional[float], optional): 最大学習率。未指定時は設定値。
            constraints (Sequence[StepConstraint], optional): ステップ前後に適用する制約
            on_epoch (Optional[Callable[[TrainLogEntry], None]], optional): エポック終了時のコールバック
            log_path (Optional[Union[str, Path]], optional): 学習ログ CSV の出力先

        Returns:
            TrainResult: エポックごとのログ

        Raises:
            NumericError: 損失が非有限になった場合
        """
        epochs = self.config.epochs if epochs is None else epochs
        base_lr = self.config.base_lr if base_lr is None else base_lr
        result = TrainResult()
        if epochs <= 0:
            logger.info("エポック数が0のため学習をスキップします")
            return result

        optimizer = Adam(self.model.named_parameters(), lr=base_lr, betas=(self.config.beta1, self.config.beta2),
                         eps=self.config.adam_eps)
        batch = self.patches_per_step
        total_steps = epochs * self.steps_per_epoch
        pixels_per_patch = self.model.config.patch_size ** 2 * self.model.config.out_channels
        logger.info(f"学習を開始します: epochs={epochs}, steps={total_steps}, patches/step={batch}, lr={base_lr}")

        for epoch in range(1, epochs + 1):
            order = sample_patches(self.rng, self.model.config.frames, self.model.config.patch_grid,
                                   self.total_patches)
            epoch_loss = 0.0
            epoch_error = 0.0
            lr = base_lr
            for start in range(0, len(order), batch):
                patches = order[start:start + batch]
                lr = warmup_cosine_lr(result.steps, total_steps, base_lr, self.config.warmup)
                loss, error = self.train_step(patches, lr, optimizer, constraints)
                epoch_loss += loss * len(patches)
                epoch_error += error
                result.steps += 1

            mse = epoch_error / (len(order) * pixels_per_patch)
            psnr = PSNR_CAP if mse <= 0 else min(PSNR_CAP, -10.0 * math.log10(mse))
            entry = TrainLogEntry(epoch=epoch, step=result.steps, lr=lr, loss=epoch_loss / len(order), psnr=psnr)
            result.log.append(entry)
            logger.info(f"epoch {epoch}/{epochs}: step={entry.step}, lr={entry.lr:.2e}, "
                        f"loss={entry.loss:.5f}, psnr={entry.psnr:.2f} dB")
            if on_epoch is not None:
                on_epoch(entry)

        if log_path is not None:
            write_train_log(result.log, log_path)
        return result
