"""
ニューラルネットワーク演算モジュール

HiNeRV に必要な演算 (畳み込み、線形層、LayerNorm、活性化、双線形・三線形補間など) を
順伝播と逆伝播の組として提供します。特徴マップは (高さ, 幅, チャネル) の3階テンソルです。
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from ..errors import ConfigurationError
from .tensor import Tensor, accumulate

logger = logging.getLogger(__name__)

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _cast(array: np.ndarray, like: Tensor) -> np.ndarray:
    return array.astype(like.dtype, copy=False)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """2次元畳み込み (ゼロパディング)

    Args:
        x (Tensor): 入力特徴マップ (H, W, C_in)
        weight (Tensor): カーネル (C_out, C_in / groups, K, K)
        bias (Optional[Tensor], optional): バイアス (C_out,)
        stride (int, optional): ストライド。デフォルトは1。
        padding (int, optional): 各辺のゼロパディング幅。デフォルトは0。
        groups (int, optional): グループ数。C_in と等しいとデプスワイズ畳み込み。

    Returns:
        Tensor: 出力特徴マップ (H_out, W_out, C_out)

    Raises:
        ConfigurationError: 形状が整合しない場合
    """
    if x.ndim != 3 or weight.ndim != 4:
        raise ConfigurationError(f"conv2d の入力は (H, W, C)、重みは4階である必要があります: x={x.shape}, weight={weight.shape}")
    height, width, c_in = x.shape
    c_out, c_in_group, k_h, k_w = weight.shape
    if groups < 1 or c_in % groups != 0 or c_out % groups != 0:
        raise ConfigurationError(f"チャネル数がグループ数で割り切れません: C_in={c_in}, C_out={c_out}, groups={groups}")
    if c_in_group != c_in // groups or k_h != k_w:
        raise ConfigurationError(f"重みの形状が不正です: weight={weight.shape}, 期待値=({c_out}, {c_in // groups}, K, K)")
    if bias is not None and bias.shape != (c_out,):
        raise ConfigurationError(f"バイアスの形状が不正です: bias={bias.shape}, C_out={c_out}")
    if stride < 1 or padding < 0:
        raise ConfigurationError(f"stride={stride}, padding={padding} は不正です")
    kernel = k_h
    if height + 2 * padding < kernel or width + 2 * padding < kernel:
        raise ConfigurationError(f"入力 {height}x{width} がカーネル {kernel} より小さいです")

    c_out_group = c_out // groups
    padded = np.pad(accumulate(x.data), ((padding, padding), (padding, padding), (0, 0)))
    windows = sliding_window_view(padded, (kernel, kernel), axis=(0, 1))[::stride, ::stride]
    out_h, out_w = windows.shape[:2]
    windows = windows.reshape(out_h, out_w, groups, c_in_group, kernel, kernel)
    kernels = accumulate(weight.data).reshape(groups, c_out_group, c_in_group, kernel, kernel)

    out = np.einsum("hwgikl,goikl->hwgo", windows, kernels, optimize=True).reshape(out_h, out_w, c_out)
    if bias is not None:
        out = out + accumulate(bias.data)

    def _backward(g):
        g = accumulate(g).reshape(out_h, out_w, groups, c_out_group)
        grad_w = np.einsum("hwgikl,hwgo->goikl", windows, g, optimize=True).reshape(weight.shape)
        grad_win = np.einsum("hwgo,goikl->hwgikl", g, kernels, optimize=True).reshape(out_h, out_w, c_in, kernel, kernel)
        grad_padded = np.zeros(padded.shape)
        for ki in range(kernel):
            for kj in range(kernel):
                grad_padded[ki:ki + stride * (out_h - 1) + 1:stride,
                            kj:kj + stride * (out_w - 1) + 1:stride, :] += grad_win[:, :, :, ki, kj]
        grad_x = grad_padded[padding:padding + height, padding:padding + width]
        grad_b = g.sum(axis=(0, 1)).reshape(c_out) if bias is not None else None
        return (
            _cast(grad_x, x),
            _cast(grad_w, weight),
            _cast(grad_b, bias) if bias is not None else None,
        )

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor.from_op(_cast(out, x), parents, _backward, "conv2d")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """最終次元 (チャネル) に対する画素ごとのアフィン変換

    Args:
        x (Tensor): 入力 (..., C_in)
        weight (Tensor): 重み (C_out, C_in)
        bias (Optional[Tensor], optional): バイアス (C_out,)

    Returns:
        Tensor: 出力 (..., C_out)

    Raises:
        ConfigurationError: 次元が一致しない場合
    """
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ConfigurationError(f"linear の次元が一致しません: x={x.shape}, weight={weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ConfigurationError(f"バイアスの形状が不正です: bias={bias.shape}, C_out={weight.shape[0]}")

    lead = x.shape[:-1]
    x2 = accumulate(x.data).reshape(-1, weight.shape[1])
    w2 = accumulate(weight.data)
    out = x2 @ w2.T
    if bias is not None:
        out = out + accumulate(bias.data)

    def _backward(g):
        g2 = accumulate(g).reshape(-1, weight.shape[0])
        grad_x = (g2 @ w2).reshape(*lead, weight.shape[1])
        grad_w = g2.T @ x2
        grad_b = g2.sum(axis=0) if bias is not None else None
        return (
            _cast(grad_x, x),
            _cast(grad_w, weight),
            _cast(grad_b, bias) if bias is not None else None,
        )

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor.from_op(_cast(out.reshape(*lead, weight.shape[0]), x), parents, _backward, "linear")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """チャネル次元に対する Layer Normalization

    Args:
        x (Tensor): 入力 (..., C)
        gamma (Tensor): スケール (C,)
        beta (Tensor): シフト (C,)
        eps (float, optional): 分散に加える正の定数。デフォルトは1e-6。

    Returns:
        Tensor: 正規化後の特徴マップ
    """
    channels = x.shape[-1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ConfigurationError(f"LayerNorm のアフィンパラメータ形状が不正です: C={channels}, gamma={gamma.shape}, beta={beta.shape}")
    if eps <= 0:
        raise ConfigurationError(f"eps は正である必要があります: {eps}")

    data = accumulate(x.data)
    centered = data - data.mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normalized = centered * rstd
    g64 = accumulate(gamma.data)
    out = normalized * g64 + accumulate(beta.data)

    def _backward(g):
        g = accumulate(g)
        reduce_axes = tuple(range(g.ndim - 1))
        grad_gamma = (g * normalized).sum(axis=reduce_axes)
        grad_beta = g.sum(axis=reduce_axes)
        g_hat = g * g64
        grad_x = rstd * (
            g_hat
            - g_hat.mean(axis=-1, keepdims=True)
            - normalized * (g_hat * normalized).mean(axis=-1, keepdims=True)
        )
        return _cast(grad_x, x), _cast(grad_gamma, gamma), _cast(grad_beta, beta)

    return Tensor.from_op(_cast(out, x), (x, gamma, beta), _backward, "layer_norm")


def gelu(x: Tensor) -> Tensor:
    """GELU (erf による厳密形)"""
    data = accumulate(x.data)
    cdf = 0.5 * (1.0 + erf(data * _INV_SQRT2))

    def _backward(g):
        pdf = np.exp(-0.5 * data * data) * _INV_SQRT2PI
        return (_cast(accumulate(g) * (cdf + data * pdf), x),)

    return Tensor.from_op(_cast(data * cdf, x), (x,), _backward, "gelu")


def sigmoid(x: Tensor) -> Tensor:
    """シグモイド。出力は (0, 1)"""
    out = expit(accumulate(x.data))

    def _backward(g):
        return (_cast(accumulate(g) * out * (1.0 - out), x),)

    return Tensor.from_op(_cast(out, x), (x,), _backward, "sigmoid")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """テンソルを指定軸で連結する"""
    if len(tensors) == 1:
        return tensors[0]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def _backward(g):
        pieces = []
        for start, stop, t in zip(bounds[:-1], bounds[1:], tensors):
            index = [slice(None)] * g.ndim
            index[axis] = slice(int(start), int(stop))
            pieces.append(_cast(g[tuple(index)], t))
        return tuple(pieces)

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor.from_op(data, tuple(tensors), _backward, "concat")


def replace_where(x: Tensor, replacement: np.ndarray, mask: np.ndarray) -> Tensor:
    """mask が真の要素を定数で置き換える。置き換えた要素の勾配はゼロ"""
    keep = ~mask

    def _backward(g):
        return (g * keep,)

    data = np.where(mask, replacement.astype(x.dtype, copy=False), x.data)
    return Tensor.from_op(data, (x,), _backward, "replace_where")


def avg_pool2x2(x: Tensor) -> Tensor:
    """2x2 平均プーリング (奇数端は切り捨て)"""
    height, width = x.shape[0] // 2, x.shape[1] // 2
    shape = x.shape
    cropped = accumulate(x.data[:2 * height, :2 * width])
    out = cropped.reshape(height, 2, width, 2, -1).mean(axis=(1, 3))

    def _backward(g):
        full = np.zeros(shape)
        spread = np.repeat(np.repeat(accumulate(g), 2, axis=0), 2, axis=1) * 0.25
        full[:2 * height, :2 * width] = spread
        return (_cast(full, x),)

    return Tensor.from_op(_cast(out, x), (x,), _backward, "avg_pool2x2")


def _interpolation_matrix(n_out: int, out_origin: int, scale: int, n_src: int, src_origin: int,
                          src_extent: int) -> np.ndarray:
    """半画素中心規約の1次元補間行列 (n_out, n_src) を作成する

    ソース座標は (dst + 0.5) / scale - 0.5 をフレーム範囲 [0, src_extent - 1] にクランプしたもの。
    重みがゼロのタップは参照しない。
    """
    dst = np.arange(out_origin, out_origin + n_out, dtype=np.float64)
    src = np.clip((dst + 0.5) / scale - 0.5, 0.0, src_extent - 1)
    lower = np.floor(src)
    frac = src - lower
    lower = lower.astype(np.int64)
    upper = np.where(frac > 0, lower + 1, lower)
    lower_local = lower - src_origin
    upper_local = upper - src_origin
    if lower_local.min() < 0 or upper_local.max() >= n_src:
        raise ConfigurationError(
            f"補間が未計算の画素を参照します: 必要範囲=[{lower.min()}, {upper.max()}], "
            f"保持範囲=[{src_origin}, {src_origin + n_src - 1}]"
        )
    matrix = np.zeros((n_out, n_src))
    rows = np.arange(n_out)
    np.add.at(matrix, (rows, lower_local), 1.0 - frac)
    np.add.at(matrix, (rows, upper_local), frac)
    return matrix


def bilinear_resample(x: Tensor, scale: int, src_origin: Tuple[int, int] = (0, 0),
                      src_extent: Optional[Tuple[int, int]] = None, dst_origin: Tuple[int, int] = (0, 0),
                      dst_size: Optional[Tuple[int, int]] = None) -> Tensor:
    """大域 (フレーム) 座標で指定した範囲へ双線形アップサンプリングし、同時に切り出す

    Args:
        x (Tensor): 入力 (h, w, C)。x[0, 0] はソース解像度の大域座標 src_origin に対応。
        scale (int): 拡大率 (1以上)
        src_origin (Tuple[int, int], optional): 入力左上の大域座標 (y, x)
        src_extent (Optional[Tuple[int, int]], optional): ソース解像度でのフレームサイズ。未指定時は入力サイズ。
        dst_origin (Tuple[int, int], optional): 出力左上の大域座標 (y, x)
        dst_size (Optional[Tuple[int, int]], optional): 出力サイズ。未指定時は入力サイズ × scale。

    Returns:
        Tensor: 出力 (dst_h, dst_w, C)

    Raises:
        ConfigurationError: scale < 1、または保持範囲外の画素が必要な場合
    """
    if scale < 1:
        raise ConfigurationError(f"拡大率は1以上である必要があります: {scale}")
    height, width = x.shape[0], x.shape[1]
    extent = src_extent or (height, width)
    size = dst_size or (height * scale, width * scale)
    rows = _interpolation_matrix(size[0], dst_origin[0], scale, height, src_origin[0], extent[0])
    cols = _interpolation_matrix(size[1], dst_origin[1], scale, width, src_origin[1], extent[1])

    data = accumulate(x.data)
    out = np.einsum("bj,ajc->abc", cols, np.tensordot(rows, data, axes=(1, 0)), optimize=True)

    def _backward(g):
        partial = np.einsum("abc,bj->ajc", accumulate(g), cols, optimize=True)
        return (_cast(np.tensordot(rows.T, partial, axes=(1, 0)), x),)

    return Tensor.from_op(_cast(out, x), (x,), _backward, "bilinear_resample")


def bilinear_upsample(x: Tensor, scale: int) -> Tensor:
    """特徴マップ全体を scale 倍に双線形アップサンプリングする"""
    return bilinear_resample(x, scale)


def trilinear_sample(grid: Tensor, coords: np.ndarray) -> Tensor:
    """4階グリッド (T', H', W', C') を連続座標 (t, y, x) で三線形補間する

    Args:
        grid (Tensor): 学習可能なグリッド
        coords (np.ndarray): (N, 3) の連続グリッド座標。範囲外は境界にクランプ。

    Returns:
        Tensor: (N, C') の補間結果
    """
    dims = np.asarray(grid.shape[:3])
    points = np.clip(np.asarray(coords, dtype=np.float64), 0.0, dims - 1)
    lower = np.floor(points).astype(np.int64)
    frac = points - lower
    upper = np.minimum(lower + 1, dims - 1)
    data = accumulate(grid.data)

    corners: List[Tuple[Tuple[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = []
    for dt in (0, 1):
        it = upper[:, 0] if dt else lower[:, 0]
        wt = frac[:, 0] if dt else 1.0 - frac[:, 0]
        for dy in (0, 1):
            iy = upper[:, 1] if dy else lower[:, 1]
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            for dx in (0, 1):
                ix = upper[:, 2] if dx else lower[:, 2]
                wx = frac[:, 2] if dx else 1.0 - frac[:, 2]
                corners.append(((it, iy, ix), wt * wy * wx))

    out = np.zeros((points.shape[0], grid.shape[3]))
    for index, w in corners:
        out += w[:, None] * data[index]

    def _backward(g):
        g = accumulate(g)
        grad = np.zeros(grid.shape)
        for index, w in corners:
            np.add.at(grad, index, w[:, None] * g)
        return (_cast(grad, grid),)

    return Tensor.from_op(_cast(out, grid), (grid,), _backward, "trilinear_sample")
