"""
Pydanticモデル定義

ネットワーク構成・学習設定・圧縮設定・ビットストリーム情報・評価レポートなど、
コーデック全体で受け渡すデータ構造を表現するモデルを定義します。
"""

import math
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def _parse_int_tuple(value: Any) -> Any:
    """'3,3,3,1' のようなカンマ区切り文字列を整数タプルに変換"""
    if isinstance(value, str):
        parts = [p.strip() for p in value.replace("(", "").replace(")", "").split(",")]
        return tuple(int(p) for p in parts if p)
    return value


# 公開構成 (N=4, R=2)。値は (D_n, C_0, {データセット: ((T_grid, C_grid), C_local)})
_PRESETS: Dict[str, Tuple[Tuple[int, ...], int, Dict[str, Tuple[Tuple[int, int], int]]]] = {
    "xxs": ((3, 3, 3, 1), 136, {"mcl": ((40, 2), 4)}),
    "xs": ((3, 3, 3, 1), 196, {"mcl": ((40, 4), 8)}),
    "s": ((3, 3, 3, 1), 280, {"mcl": ((40, 8), 16), "uvg": ((150, 2), 4)}),
    "m": ((3, 3, 3, 1), 400, {"mcl": ((40, 16), 32), "uvg": ((150, 4), 8)}),
    "l": ((3, 3, 3, 1), 560, {"mcl": ((40, 32), 64), "uvg": ((150, 8), 16)}),
    "xl": ((4, 4, 4, 1), 688, {"uvg": ((150, 16), 32)}),
    "xxl": ((5, 5, 5, 1), 864, {"uvg": ((150, 32), 64)}),
}
_DEFAULT_STRIDES = (5, 3, 2, 2)
_BUNNY_STRIDES = (5, 2, 2, 2)


class ModelConfig(BaseModel):
    """HiNeRV のアーキテクチャ設定"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    height: int = Field(..., gt=0, description="フレームの高さ H")
    width: int = Field(..., gt=0, description="フレームの幅 W")
    frames: int = Field(..., gt=0, description="フレーム数 T")
    depths: Tuple[int, ...] = Field(..., description="ブロックごとの ConvNeXt 層数 D_n")
    scales: Tuple[int, ...] = Field(..., description="ブロックごとの拡大率 S_n")
    base_channels: int = Field(..., gt=0, description="C_0")
    reduction: float = Field(2.0, ge=1.0, description="チャネル削減率 R")
    patch_size: int = Field(..., gt=0, description="出力パッチサイズ M")
    kernel_size: int = Field(3, gt=0)
    expansion: int = Field(4, gt=0, description="ConvNeXt の拡張率")
    last_expansion: int = Field(1, gt=0, description="最終ブロックの拡張率")
    grid_frames: int = Field(..., gt=0, description="T_grid")
    grid_height: int = Field(..., gt=0, description="H_grid")
    grid_width: int = Field(..., gt=0, description="W_grid")
    grid_channels: int = Field(..., gt=0, description="C_grid")
    grid_levels: int = Field(2, gt=0, description="L_grid")
    local_frames: Optional[int] = Field(None, gt=0, description="T_local (未指定時は T)")
    local_channels: int = Field(4, ge=0, description="C_local")
    local_levels: int = Field(3, gt=0, description="L_local")
    paddings: Optional[Tuple[int, ...]] = Field(None, description="stem と各ブロックのパディング (未指定時は自動計算)")
    hierarchical_encoding: bool = Field(True, description="階層的エンコーディングの有無")
    out_channels: int = Field(3, gt=0)
    norm_eps: float = Field(1e-6, gt=0)

    @field_validator("depths", "scales", "paddings", mode="before")
    @classmethod
    def split_tuples(cls, value: Any) -> Any:
        return _parse_int_tuple(value)

    @model_validator(mode="after")
    def check_lengths(self) -> "ModelConfig":
        if not self.depths or len(self.depths) != len(self.scales):
            raise ValueError(f"depths と scales の長さが一致しません: {self.depths}, {self.scales}")
        if min(self.depths) < 1 or min(self.scales) < 1:
            raise ValueError("depths と scales は正の整数である必要があります")
        if self.paddings is not None and len(self.paddings) != len(self.depths) + 1:
            raise ValueError(f"paddings は stem + {len(self.depths)} ブロック分必要です: {self.paddings}")
        if self.grid_frames // 2 ** (self.grid_levels - 1) < 1:
            raise ValueError(f"T_grid={self.grid_frames} では {self.grid_levels} レベルを構成できません")
        if self.hierarchical_encoding and self.local_frame_count // 2 ** (self.local_levels - 1) < 1:
            raise ValueError(f"T_local={self.local_frame_count} では {self.local_levels} レベルを構成できません")
        return self

    # --- 導出値 ---
    @property
    def num_blocks(self) -> int:
        return len(self.depths)

    @property
    def scale_product(self) -> int:
        return math.prod(self.scales)

    @property
    def base_patch_size(self) -> int:
        """M_0 = M / ΠS_n"""
        return self.patch_size // self.scale_product

    @property
    def local_frame_count(self) -> int:
        return self.local_frames or self.frames

    @property
    def patch_grid(self) -> Tuple[int, int]:
        """(縦方向のパッチ数, 横方向のパッチ数)"""
        return self.height // self.patch_size, self.width // self.patch_size

    def block_channels(self, n: int) -> int:
        """ブロック n (1始まり) の出力チャネル C_n = ⌊C_0 / R^(n-1)⌋。n=0 は stem"""
        if n <= 0:
            return self.base_channels
        return int(math.floor(self.base_channels / self.reduction ** (n - 1)))

    def block_local_channels(self, n: int) -> int:
        """ブロック n の局所グリッド基本チャネル ⌊C_local / R^(n-1)⌋"""
        if not self.hierarchical_encoding:
            return 0
        return int(math.floor(self.local_channels / self.reduction ** (n - 1)))

    def block_expansion(self, n: int) -> int:
        return self.last_expansion if n == self.num_blocks else self.expansion

    def stage_frame_size(self, stage: int) -> Tuple[int, int]:
        """ステージ s (0 = stem) の解像度でのフレームサイズ"""
        divisor = math.prod(self.scales[stage:])
        return self.height // divisor, self.width // divisor

    def stage_patch_size(self, stage: int) -> int:
        """ステージ s のパッチサイズ M_s"""
        return self.base_patch_size * math.prod(self.scales[:stage])

    @classmethod
    def preset(cls, name: str, height: int, width: int, frames: int, dataset: str = "uvg",
               **overrides: Any) -> "ModelConfig":
        """公開構成 (XXS〜XXL) または机上実験用の tiny 構成を生成

        Args:
            name (str): 構成名 (xxs, xs, s, m, l, xl, xxl, tiny)
            height (int): フレームの高さ
            width (int): フレームの幅
            frames (int): フレーム数
            dataset (str, optional): uvg, mcl, bunny のいずれか。デフォルトは uvg。
            **overrides: 上書きするフィールド

        Returns:
            ModelConfig: 構成

        Raises:
            ValueError: 未公開の組み合わせを指定した場合
        """
        key = name.lower()
        if key == "tiny":
            values: Dict[str, Any] = dict(
                depths=(2, 2, 1), scales=(2, 2, 2), base_channels=56, patch_size=16,
                grid_frames=frames, grid_height=max(1, height // 8), grid_width=max(1, width // 8),
                grid_channels=8, grid_levels=2, local_channels=8, local_levels=3,
            )
        else:
            if key not in _PRESETS:
                raise ValueError(f"未知の構成名です: {name}")
            depths, c0, grids = _PRESETS[key]
            grid_key = "mcl" if dataset == "bunny" else dataset
            if grid_key not in grids:
                raise ValueError(f"構成 {name} は {dataset} 用に公開されていません")
            (t_grid, c_grid), c_local = grids[grid_key]
            scales = _BUNNY_STRIDES if dataset == "bunny" else _DEFAULT_STRIDES
            values = dict(
                depths=depths, scales=scales, base_channels=c0, patch_size=2 * math.prod(scales),
                grid_frames=t_grid, grid_height=18, grid_width=32, grid_channels=c_grid, grid_levels=2,
                local_channels=c_local, local_levels=3,
            )
        values.update(height=height, width=width, frames=frames)
        values.update(overrides)
        return cls(**values)


class TrainConfig(BaseModel):
    """学習設定"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    epochs: int = Field(300, ge=0)
    base_lr: float = Field(2e-3, gt=0)
    warmup: float = Field(0.1, ge=0, lt=1, description="ウォームアップに使うステップの割合")
    batch_frames: int = Field(1, gt=0)
    patches_per_step: Optional[int] = Field(None, gt=0, description="未指定時は batch_frames × パッチ数/フレーム")
    grad_clip_norm: float = Field(1.0, gt=0)
    loss_alpha: float = Field(0.7, ge=0, le=1)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    ssim_window: int = Field(5, gt=0)
    seed: int = Field(0, ge=0)

    def effective_patches(self, model: ModelConfig) -> int:
        """1ステップあたりのパッチ数 (実効バッチサイズ規則)"""
        if self.patches_per_step is not None:
            return self.patches_per_step
        rows, cols = model.patch_grid
        return self.batch_frames * rows * cols


class CompressionConfig(BaseModel):
    """枝刈り・量子化の設定 (デフォルトは公開実験の値)"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    prune_ratio: float = Field(0.15, ge=0, lt=1)
    prune_epochs: int = Field(60, ge=0)
    prune_iterations: int = Field(1, ge=1)
    prune_lambda: float = Field(0.5, ge=0)
    qat_epochs: int = Field(30, ge=0)
    noise_ratio: float = Field(0.9, ge=0, le=1)
    bits: int = Field(6, ge=2, le=8)
    qat_lr_scale: float = Field(0.1, gt=0)


class PatchCoordinate(BaseModel):
    """パッチ座標 (i: 横方向, j: 縦方向, t: フレーム)"""

    model_config = ConfigDict(frozen=True)

    i: int = Field(..., ge=0)
    j: int = Field(..., ge=0)
    t: int = Field(..., ge=0)


class TrainLogEntry(BaseModel):
    """エポックごとの学習ログ"""

    epoch: int
    step: int
    lr: float
    loss: float
    psnr: float


class FrameMetrics(BaseModel):
    """フレーム単位の画質"""

    frame: int
    psnr: float
    msssim: float


class RunReport(BaseModel):
    """エンコード/評価の結果レポート"""

    frames: List[FrameMetrics]
    mean_psnr: float
    mean_msssim: float
    bitstream_bytes: int
    bpp: float
    encode_seconds: Optional[float] = None
    decode_seconds: Optional[float] = None
    config: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None

    @classmethod
    def build(cls, frames: List[FrameMetrics], bitstream_bytes: int, height: int, width: int,
              **extra: Any) -> "RunReport":
        """フレームごとの値から平均と bpp を計算してレポートを生成"""
        count = max(len(frames), 1)
        return cls(
            frames=frames,
            mean_psnr=sum(f.psnr for f in frames) / count,
            mean_msssim=sum(f.msssim for f in frames) / count,
            bitstream_bytes=bitstream_bytes,
            bpp=bits_per_pixel(bitstream_bytes, len(frames), height, width),
            **extra,
        )


def bits_per_pixel(num_bytes: int, frames: int, height: int, width: int) -> float:
    """bpp = 8 × バイト数 / (T × H × W)"""
    return 8.0 * num_bytes / (frames * height * width)


class TensorInfo(BaseModel):
    """ビットストリーム内の1テンソルの情報"""

    name_id: int
    name: str
    shape: Tuple[int, ...]
    bits: int
    scale: float
    pruned: int
    sparsity: float
    mask_bytes: int
    payload_bytes: int
    record_bytes: int


class BitstreamInfo(BaseModel):
    """ビットストリーム全体の情報"""

    version: int
    config: ModelConfig
    header_bytes: int
    checksum_bytes: int
    file_bytes: int
    tensors: List[TensorInfo]

    @property
    def sparsity(self) -> float:
        total = sum(math.prod(t.shape) for t in self.tensors)
        return sum(t.pruned for t in self.tensors) / total if total else 0.0


class RawVideoHeader(BaseModel):
    """raw RGB8 動画のサイドカー (寸法情報)"""

    model_config = ConfigDict(extra="forbid")

    frames: int = Field(..., gt=0)
    height: int = Field(..., gt=0)
    width: int = Field(..., gt=0)
