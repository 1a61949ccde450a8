"""
グリッドエンコーディングモジュール

学習可能な多重解像度の時間グリッドから、stem に入力する基本エンコーディングと、
各 HiNeRV ブロックで加算する階層的 (局所) エンコーディングを補間して求めます。
"""

import logging
from typing import List, Sequence, Tuple

import numpy as np

from ..autodiff import Tensor, functional as F
from ..models import ModelConfig, PatchCoordinate

logger = logging.getLogger(__name__)

# グリッドの初期値は一様分布 [-GRID_INIT_RANGE, GRID_INIT_RANGE]
GRID_INIT_RANGE = 1e-2

GridShape = Tuple[int, int, int, int]


def frame_coords(patch: PatchCoordinate, base_patch_size: int, u_patch: int, v_patch: int) -> Tuple[int, int]:
    """パッチ内座標をフレーム座標へ変換 (u_frame = i × M_0 + u_patch)

    パディング領域では u_patch, v_patch が [0, M_0) の外側になり得ます。
    """
    return patch.i * base_patch_size + u_patch, patch.j * base_patch_size + v_patch


def local_coords(u_frame, v_frame, scale: int):
    """フレーム座標を局所座標 (mod S_n) へ変換。負の座標も [0, S_n) に写す"""
    return np.mod(u_frame, scale), np.mod(v_frame, scale)


def normalize_coords(index, count: int, grid_size: int) -> np.ndarray:
    """画素/フレーム番号 p ∈ [0, P) を連続グリッド座標へ写す

    P > 1 かつ G > 1 のとき p × (G - 1) / (P - 1) (両端がノードに一致)、
    それ以外はグリッドの中点を返します。
    """
    index = np.asarray(index, dtype=np.float64)
    if count > 1 and grid_size > 1:
        return index * ((grid_size - 1) / (count - 1))
    return np.full(index.shape, (grid_size - 1) / 2.0)


def base_grid_shapes(config: ModelConfig) -> List[GridShape]:
    """レベル l の基本グリッド形状 ⌊T_grid/2^l⌋ × H_grid × W_grid × (C_grid·2^l)"""
    return [
        (config.grid_frames // 2 ** level, config.grid_height, config.grid_width, config.grid_channels * 2 ** level)
        for level in range(config.grid_levels)
    ]


def local_grid_shapes(config: ModelConfig, n: int) -> List[GridShape]:
    """ブロック n のレベル l の局所グリッド形状 ⌊T_local/2^l⌋ × S_n × S_n × (⌊C_local/R^(n-1)⌋·2^l)

    チャネル数がゼロに切り捨てられるブロックは空リストを返します。
    """
    channels = config.block_local_channels(n)
    if channels <= 0:
        return []
    scale = config.scales[n - 1]
    return [
        (config.local_frame_count // 2 ** level, scale, scale, channels * 2 ** level)
        for level in range(config.local_levels)
    ]


class FeatureGridSet:
    """多重解像度グリッドの集合 (レベル昇順)"""

    def __init__(self, shapes: Sequence[GridShape], rng: np.random.Generator, dtype=np.float32):
        """FeatureGridSetの初期化

        Args:
            shapes (Sequence[GridShape]): レベルごとのグリッド形状
            rng (np.random.Generator): 初期化用の乱数生成器
            dtype (optional): 要素型。デフォルトは float32。
        """
        self.levels: List[Tensor] = [
            Tensor(rng.uniform(-GRID_INIT_RANGE, GRID_INIT_RANGE, size=shape).astype(dtype), requires_grad=True)
            for shape in shapes
        ]

    @property
    def channels(self) -> int:
        return sum(level.shape[3] for level in self.levels)

    def __len__(self) -> int:
        return len(self.levels)


def _sample_levels(levels: Sequence[Tensor], t: int, frames: int, rows: np.ndarray, cols: np.ndarray,
                   row_count: int, col_count: int) -> Tensor:
    """全レベルを (t, 行, 列) で補間し、チャネル方向に昇順で連結する"""
    height, width = len(rows), len(cols)
    encodings = []
    for grid in levels:
        g_t, g_h, g_w, _ = grid.shape
        t_coord = normalize_coords(t, frames, g_t)
        y = normalize_coords(rows, row_count, g_h)
        x = normalize_coords(cols, col_count, g_w)
        yy, xx = np.meshgrid(y, x, indexing="ij")
        coords = np.stack([np.full(yy.size, float(t_coord)), yy.ravel(), xx.ravel()], axis=1)
        encodings.append(F.trilinear_sample(grid, coords).reshape(height, width, grid.shape[3]))
    return F.concat(encodings, axis=-1)


def encode_base(levels: Sequence[Tensor], rows: np.ndarray, cols: np.ndarray, t: int,
                frame_size: Tuple[int, int], frames: int) -> Tensor:
    """基本エンコーディング γ_base を任意の (大域) 画素範囲で計算する

    Args:
        levels (Sequence[Tensor]): 基本グリッド (レベル昇順)
        rows (np.ndarray): 基本解像度での行座標 v_frame
        cols (np.ndarray): 基本解像度での列座標 u_frame
        t (int): フレーム番号
        frame_size (Tuple[int, int]): 基本解像度のフレームサイズ (H/ΠS, W/ΠS)
        frames (int): 動画のフレーム数 T

    Returns:
        Tensor: (len(rows), len(cols), ΣC) の特徴マップ
    """
    return _sample_levels(levels, t, frames, rows, cols, frame_size[0], frame_size[1])


def base_encoding(grids: FeatureGridSet, patch: PatchCoordinate, base_patch_size: int,
                  frame_size: Tuple[int, int], frames: int, padding: int = 0) -> Tensor:
    """パッチ (i, j, t) の基本エンコーディング ((M_0 + 2·padding)² × ΣC)"""
    offsets = np.arange(-padding, base_patch_size + padding)
    cols, rows = frame_coords(patch, base_patch_size, offsets, offsets)
    return encode_base(grids.levels, rows, cols, patch.t, frame_size, frames)


def hierarchical_encoding(levels: Sequence[Tensor], rows: np.ndarray, cols: np.ndarray, t: int,
                          scale: int, frames: int) -> Tensor:
    """階層的エンコーディング γ_n を局所座標 (frame mod S_n) で補間する

    Args:
        levels (Sequence[Tensor]): ブロック n の局所グリッド (レベル昇順)
        rows (np.ndarray): アップサンプル後解像度での行座標 v_frame
        cols (np.ndarray): アップサンプル後解像度での列座標 u_frame
        t (int): フレーム番号
        scale (int): ブロックの拡大率 S_n
        frames (int): 動画のフレーム数 T

    Returns:
        Tensor: (len(rows), len(cols), ΣC) の特徴マップ
    """
    u_local, v_local = local_coords(cols, rows, scale)
    return _sample_levels(levels, t, frames, v_local, u_local, scale, scale)
