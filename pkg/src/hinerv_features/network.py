"""
HiNeRV ネットワークモジュール

stem・N 個の HiNeRV ブロック・head からなるモデルを提供します。
フレーム単位の実行と、パディング付きパッチ単位の実行は同一の経路で計算され、
切り出した出力は一致します。
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import truncnorm

from ..autodiff import Tensor, functional as F
from ..errors import ConfigurationError, UsageError
from ..models import ModelConfig, PatchCoordinate
from .grid_encoding import (
    FeatureGridSet,
    base_grid_shapes,
    encode_base,
    hierarchical_encoding,
    local_grid_shapes,
)

logger = logging.getLogger(__name__)

# 畳み込み・線形層の重みは切断正規分布 (±2σ) で初期化
WEIGHT_INIT_STD = 0.02

ParamTransform = Callable[[str, Tensor], Tensor]


def conv_padding(kernel_size: int) -> int:
    """K×K 畳み込み1層に必要なパディング ⌈(K-1)/2⌉"""
    return math.ceil((kernel_size - 1) / 2)


def upsample_source_padding(padding: int, scale: int) -> int:
    """出力側のパディング p を得るために、拡大前に必要なパディング

    半画素中心規約では出力 -p のソース座標は (-p + 0.5)/S - 0.5 となるため、
    ⌈(p - 0.5)/S + 0.5⌉ 画素が必要です。
    """
    return math.ceil((padding - 0.5) / scale + 0.5)


def validate_geometry(config: ModelConfig) -> None:
    """パッチ分割とフレームサイズの整合性を確認する

    Raises:
        ConfigurationError: M が ΠS_n で割り切れない、または H, W が M で割り切れない場合
    """
    if config.patch_size % config.scale_product != 0 or config.base_patch_size < 1:
        raise ConfigurationError(
            f"パッチサイズ M={config.patch_size} が拡大率の積 ΠS={config.scale_product} で割り切れません"
        )
    if config.height % config.patch_size != 0 or config.width % config.patch_size != 0:
        raise ConfigurationError(
            f"フレーム {config.height}x{config.width} がパッチサイズ M={config.patch_size} で割り切れません"
        )
    if config.kernel_size % 2 == 0:
        raise ConfigurationError(f"カーネルサイズは奇数である必要があります: K={config.kernel_size}")


def padding_schedule(config: ModelConfig) -> Tuple[int, ...]:
    """stem と各ブロックに必要な最小パディングを head 側から累積して求める

    Args:
        config (ModelConfig): モデル構成

    Returns:
        Tuple[int, ...]: (stem, ブロック1, ..., ブロックN) のパディング

    Raises:
        ConfigurationError: パッチサイズが構成と整合しない場合
    """
    validate_geometry(config)
    per_conv = conv_padding(config.kernel_size)
    needed = 0
    paddings: List[int] = []
    for n in range(config.num_blocks, 0, -1):
        pad = config.depths[n - 1] * per_conv + needed
        paddings.append(pad)
        needed = upsample_source_padding(pad, config.scales[n - 1])
    paddings.append(per_conv + needed)
    return tuple(reversed(paddings))


def resolve_paddings(config: ModelConfig) -> Tuple[int, ...]:
    """設定されたパディングを検証し、未指定なら自動計算値を返す"""
    if config.paddings is None:
        return padding_schedule(config)
    validate_geometry(config)
    per_conv = conv_padding(config.kernel_size)
    pads = config.paddings
    for n in range(config.num_blocks, 0, -1):
        downstream = upsample_source_padding(pads[n + 1], config.scales[n]) if n < config.num_blocks else 0
        if pads[n] < config.depths[n - 1] * per_conv + downstream:
            raise ConfigurationError(f"ブロック {n} のパディング {pads[n]} が不足しています")
    if pads[0] < per_conv + upsample_source_padding(pads[1], config.scales[0]):
        raise ConfigurationError(f"stem のパディング {pads[0]} が不足しています")
    return tuple(pads)


@dataclass(frozen=True)
class Footprint:
    """あるステージの解像度で計算する画素範囲 (大域座標)"""

    top: int
    left: int
    height: int
    width: int
    frame_height: int
    frame_width: int

    @classmethod
    def frame(cls, config: ModelConfig, stage: int) -> "Footprint":
        frame_h, frame_w = config.stage_frame_size(stage)
        return cls(0, 0, frame_h, frame_w, frame_h, frame_w)

    @classmethod
    def patch(cls, config: ModelConfig, stage: int, patch: PatchCoordinate, padding: int) -> "Footprint":
        frame_h, frame_w = config.stage_frame_size(stage)
        size = config.stage_patch_size(stage)
        return cls(patch.j * size - padding, patch.i * size - padding, size + 2 * padding, size + 2 * padding,
                   frame_h, frame_w)

    @property
    def rows(self) -> np.ndarray:
        return np.arange(self.top, self.top + self.height)

    @property
    def cols(self) -> np.ndarray:
        return np.arange(self.left, self.left + self.width)

    def mask(self) -> Optional[np.ndarray]:
        """フレーム外の画素を0にするマスク (H, W, 1)。全画素がフレーム内なら None"""
        rows, cols = self.rows, self.cols
        inside_rows = (rows >= 0) & (rows < self.frame_height)
        inside_cols = (cols >= 0) & (cols < self.frame_width)
        if inside_rows.all() and inside_cols.all():
            return None
        return (inside_rows[:, None] & inside_cols[None, :])[:, :, None].astype(np.float32)


def _masked(x: Tensor, mask: Optional[np.ndarray]) -> Tensor:
    return x if mask is None else x * mask.astype(x.dtype)


class HiNeRVModel:
    """HiNeRV モデル (stem → HiNeRV ブロック × N → head)"""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        """HiNeRVModelの初期化

        Args:
            config (ModelConfig): モデル構成
            seed (int, optional): パラメータ初期化の乱数シード。デフォルトは0。
            dtype (optional): パラメータの要素型。デフォルトは float32。

        Raises:
            ConfigurationError: 構成が不整合な場合
        """
        self.config = config
        self.paddings = resolve_paddings(config)
        self.dtype = dtype
        # QAT などで重みを差し替えるためのフック (名前, パラメータ) -> 実効パラメータ
        self.param_transform: Optional[ParamTransform] = None
        self._params: Dict[str, Tensor] = {}
        self._prunable: List[str] = []
        self._build(np.random.default_rng(seed))
        logger.info(f"HiNeRV モデルを構築しました: パラメータ数={self.num_parameters():,}, パディング={self.paddings}")

    # --- 構築 ---
    def _weight(self, rng: np.random.Generator, name: str, shape: Tuple[int, ...]) -> None:
        data = truncnorm.rvs(-2.0, 2.0, scale=WEIGHT_INIT_STD, size=shape, random_state=rng)
        self._params[name] = Tensor(np.asarray(data, dtype=self.dtype), requires_grad=True)
        self._prunable.append(name)

    def _constant(self, name: str, shape: Tuple[int, ...], value: float) -> None:
        self._params[name] = Tensor(np.full(shape, value, dtype=self.dtype), requires_grad=True)

    def _grids(self, prefix: str, grids: FeatureGridSet) -> None:
        for level, grid in enumerate(grids.levels):
            self._params[f"{prefix}.{level}"] = grid

    def _build(self, rng: np.random.Generator) -> None:
        cfg = self.config
        k = cfg.kernel_size
        base = FeatureGridSet(base_grid_shapes(cfg), rng, self.dtype)
        self._grids("base_grid", base)
        self._weight(rng, "stem.weight", (cfg.base_channels, base.channels, k, k))
        self._constant("stem.bias", (cfg.base_channels,), 0.0)

        for n in range(1, cfg.num_blocks + 1):
            prefix = f"blocks.{n}"
            c_prev = cfg.block_channels(n - 1)
            c_out = cfg.block_channels(n)
            self._constant(f"{prefix}.norm.weight", (c_prev,), 1.0)
            self._constant(f"{prefix}.norm.bias", (c_prev,), 0.0)
            shapes = local_grid_shapes(cfg, n)
            if shapes:
                local = FeatureGridSet(shapes, rng, self.dtype)
                self._weight(rng, f"{prefix}.enc.weight", (c_prev, local.channels))
                self._constant(f"{prefix}.enc.bias", (c_prev,), 0.0)
                self._grids(f"{prefix}.local_grid", local)
            ratio = cfg.block_expansion(n)
            for layer in range(cfg.depths[n - 1]):
                c_in = c_prev if layer == 0 else c_out
                hidden = ratio * c_out
                name = f"{prefix}.layers.{layer}"
                self._weight(rng, f"{name}.dwconv.weight", (c_in, 1, k, k))
                self._constant(f"{name}.dwconv.bias", (c_in,), 0.0)
                self._constant(f"{name}.norm.weight", (c_in,), 1.0)
                self._constant(f"{name}.norm.bias", (c_in,), 0.0)
                self._weight(rng, f"{name}.fc1.weight", (hidden, c_in))
                self._constant(f"{name}.fc1.bias", (hidden,), 0.0)
                self._weight(rng, f"{name}.fc2.weight", (c_out, hidden))
                self._constant(f"{name}.fc2.bias", (c_out,), 0.0)

        c_last = cfg.block_channels(cfg.num_blocks)
        self._weight(rng, "head.weight", (cfg.out_channels, c_last))
        self._constant("head.bias", (cfg.out_channels,), 0.0)

    # --- パラメータ操作 ---
    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        """固定順序 (基本グリッド → stem → ブロック → head) のパラメータ一覧"""
        return list(self._params.items())

    def parameters(self) -> List[Tensor]:
        return list(self._params.values())

    def parameter(self, name: str) -> Tensor:
        return self._params[name]

    def prunable_names(self) -> List[str]:
        """枝刈り対象 (畳み込み・線形層の重み) の名前"""
        return list(self._prunable)

    def num_parameters(self) -> int:
        return sum(p.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """パラメータ値を読み込む

        Raises:
            ConfigurationError: 名前や形状が一致しない場合
        """
        missing = set(self._params) ^ set(state)
        if missing:
            raise ConfigurationError(f"パラメータ名が一致しません: {sorted(missing)[:5]}")
        for name, p in self._params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ConfigurationError(f"{name} の形状が一致しません: {value.shape} != {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def _p(self, name: str) -> Tensor:
        param = self._params[name]
        if self.param_transform is not None:
            return self.param_transform(name, param)
        return param

    def _levels(self, prefix: str) -> List[Tensor]:
        levels = []
        level = 0
        while f"{prefix}.{level}" in self._params:
            levels.append(self._p(f"{prefix}.{level}"))
            level += 1
        return levels

    def has_local_encoding(self, n: int) -> bool:
        return f"blocks.{n}.enc.weight" in self._params

    # --- 順伝播 ---
    def stem_forward(self, footprint: Footprint, t: int) -> Tensor:
        """X_0 = F_stem(γ_base(i, j, t))。フレーム外の画素は畳み込み前に0にする"""
        cfg = self.config
        encoding = encode_base(self._levels("base_grid"), footprint.rows, footprint.cols, t,
                               cfg.stage_frame_size(0), cfg.frames)
        encoding = _masked(encoding, footprint.mask())
        return F.conv2d(encoding, self._p("stem.weight"), self._p("stem.bias"),
                        padding=conv_padding(cfg.kernel_size))

    def _convnext_layer(self, name: str, x: Tensor, mask: Optional[np.ndarray]) -> Tensor:
        cfg = self.config
        c_in = x.shape[-1]
        h = F.conv2d(_masked(x, mask), self._p(f"{name}.dwconv.weight"), self._p(f"{name}.dwconv.bias"),
                     padding=conv_padding(cfg.kernel_size), groups=c_in)
        h = F.layer_norm(h, self._p(f"{name}.norm.weight"), self._p(f"{name}.norm.bias"), cfg.norm_eps)
        h = F.gelu(F.linear(h, self._p(f"{name}.fc1.weight"), self._p(f"{name}.fc1.bias")))
        h = F.linear(h, self._p(f"{name}.fc2.weight"), self._p(f"{name}.fc2.bias"))
        # 入出力のチャネル数が一致する場合のみショートカット
        if h.shape[-1] == c_in:
            h = h + x
        return h

    def block_forward(self, n: int, x: Tensor, source: Footprint, target: Footprint, t: int) -> Tensor:
        """X_n = F_n(U_n(X_{n-1}) + F_enc(γ_n(i, j, t)))

        Args:
            n (int): ブロック番号 (1始まり)
            x (Tensor): 前ステージの特徴マップ (source の範囲)
            source (Footprint): x の画素範囲
            target (Footprint): 出力の画素範囲 (アップサンプル直後に切り出す)
            t (int): フレーム番号

        Returns:
            Tensor: ブロック出力 (target の範囲)
        """
        cfg = self.config
        if not 1 <= n <= cfg.num_blocks:
            raise UsageError(f"ブロック番号 {n} は範囲外です (1..{cfg.num_blocks})")
        prefix = f"blocks.{n}"
        scale = cfg.scales[n - 1]
        x = F.layer_norm(x, self._p(f"{prefix}.norm.weight"), self._p(f"{prefix}.norm.bias"), cfg.norm_eps)
        x = F.bilinear_resample(
            x, scale,
            src_origin=(source.top, source.left),
            src_extent=(source.frame_height, source.frame_width),
            dst_origin=(target.top, target.left),
            dst_size=(target.height, target.width),
        )
        if self.has_local_encoding(n):
            encoding = hierarchical_encoding(self._levels(f"{prefix}.local_grid"), target.rows, target.cols, t,
                                             scale, cfg.frames)
            x = x + F.linear(encoding, self._p(f"{prefix}.enc.weight"), self._p(f"{prefix}.enc.bias"))
        mask = target.mask()
        for layer in range(cfg.depths[n - 1]):
            x = self._convnext_layer(f"{prefix}.layers.{layer}", x, mask)
        return x

    def head_forward(self, x: Tensor) -> Tensor:
        """Y = sigmoid(F_head(X_N))。画素ごとの線形層で出力チャネルへ写す"""
        return F.sigmoid(F.linear(x, self._p("head.weight"), self._p("head.bias")))

    def _forward(self, footprints: Sequence[Footprint], t: int) -> Tensor:
        x = self.stem_forward(footprints[0], t)
        for n in range(1, self.config.num_blocks + 1):
            x = self.block_forward(n, x, footprints[n - 1], footprints[n], t)
        return self.head_forward(x)

    def check_patch(self, patch: PatchCoordinate) -> None:
        rows, cols = self.config.patch_grid
        if patch.j >= rows or patch.i >= cols or patch.t >= self.config.frames:
            raise UsageError(f"パッチ {patch} はフレーム分割 {rows}x{cols}, T={self.config.frames} の範囲外です")

    def forward_patch(self, patch: PatchCoordinate) -> Tensor:
        """パディング付きでパッチを計算し、重なりのない M×M×3 の中心部を返す

        Raises:
            UsageError: パッチ番号がフレーム分割の範囲外の場合
        """
        self.check_patch(patch)
        footprints = [
            Footprint.patch(self.config, stage, patch, pad) for stage, pad in enumerate(self.paddings)
        ]
        y = self._forward(footprints, patch.t)
        pad = self.paddings[-1]
        size = self.config.patch_size
        return y[pad:pad + size, pad:pad + size]

    def forward_frame(self, t: int) -> Tensor:
        """フレーム全体をパディングなしで1回の順伝播で計算する (H × W × 3)"""
        if not 0 <= t < self.config.frames:
            raise UsageError(f"フレーム番号 {t} は範囲外です (0..{self.config.frames - 1})")
        footprints = [Footprint.frame(self.config, stage) for stage in range(self.config.num_blocks + 1)]
        return self._forward(footprints, t)
