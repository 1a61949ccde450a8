"""
画質指標モジュール

PSNR・MS-SSIM と、学習に用いる L1 + MS-SSIM の複合損失を提供します。
MS-SSIM と損失は Tensor 演算で構成されるため微分可能です。
"""

import logging
from typing import Optional, Tuple, Union

import numpy as np

from ..autodiff import Tensor, functional as F
from ..errors import ConfigurationError

logger = logging.getLogger(__name__)

PSNR_CAP = 100.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_SIGMA = 1.5
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
# relu 後の各項を累乗するときの下限 (0 での勾配発散を防ぐ)
_POWER_FLOOR = 1e-12

ImageLike = Union[Tensor, np.ndarray]


def _as_tensor(image: ImageLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(image, Tensor):
        return image
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(image), dtype=dtype)


def psnr(pred: np.ndarray, target: np.ndarray, peak: float = 1.0) -> float:
    """PSNR (dB)。MSE がゼロなら上限値 100 dB を返す"""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ConfigurationError(f"画像の形状が一致しません: {pred.shape} != {target.shape}")
    mse = float(np.mean((pred - target) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def gaussian_window(size: int, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """正規化済みの2次元ガウス窓 (size × size)"""
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(offsets ** 2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def ms_ssim_levels(height: int, width: int, window: int) -> int:
    """min(H, W) ≥ window · 2^(L-1) を満たす最大のスケール数 L (最大5)"""
    size = min(height, width)
    if size < window:
        raise ConfigurationError(f"画像 {height}x{width} が SSIM の窓 {window}x{window} より小さいです")
    levels = 1
    while levels < len(MS_SSIM_WEIGHTS) and size >= window * 2 ** levels:
        levels += 1
    return levels


def _filter(x: Tensor, kernel: Tensor) -> Tensor:
    return F.conv2d(x, kernel, groups=x.shape[-1])


def _ssim_terms(x: Tensor, y: Tensor, kernel: Tensor, peak: float) -> Tuple[Tensor, Tensor]:
    """(平均輝度比較 × コントラスト構造, コントラスト構造) の空間平均"""
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_x = _filter(x, kernel)
    mu_y = _filter(y, kernel)
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    mu_xy = mu_x * mu_y
    sigma_xx = _filter(x * x, kernel) - mu_xx
    sigma_yy = _filter(y * y, kernel) - mu_yy
    sigma_xy = _filter(x * y, kernel) - mu_xy
    cs_map = (sigma_xy * 2.0 + c2) / (sigma_xx + sigma_yy + c2)
    luminance = (mu_xy * 2.0 + c1) / (mu_xx + mu_yy + c1)
    return (luminance * cs_map).mean(), cs_map.mean()


def ms_ssim_tensor(pred: ImageLike, target: ImageLike, window: int = 5, peak: float = 1.0) -> Tensor:
    """微分可能な MS-SSIM (H, W, C 画像)

    スケール数は画像サイズから決め、標準の重みを切り詰めて正規化し直します。

    Raises:
        ConfigurationError: 形状が一致しない、または画像が窓より小さい場合
    """
    x = _as_tensor(pred)
    y = _as_tensor(target, like=x)
    if x.shape != y.shape or x.ndim != 3:
        raise ConfigurationError(f"MS-SSIM の入力形状が不正です: {x.shape}, {y.shape}")
    levels = ms_ssim_levels(x.shape[0], x.shape[1], window)
    if levels < len(MS_SSIM_WEIGHTS):
        logger.debug(f"MS-SSIM のスケール数を {levels} に削減しました ({x.shape[0]}x{x.shape[1]})")
    weights = np.asarray(MS_SSIM_WEIGHTS[:levels])
    weights = weights / weights.sum()

    channels = x.shape[-1]
    kernel_data = np.broadcast_to(gaussian_window(window), (channels, 1, window, window))
    kernel = Tensor(np.ascontiguousarray(kernel_data), dtype=x.dtype)

    result = None
    for level in range(levels):
        ssim_mean, cs_mean = _ssim_terms(x, y, kernel, peak)
        term = ssim_mean if level == levels - 1 else cs_mean
        factor = term.clamp_min(_POWER_FLOOR) ** float(weights[level])
        result = factor if result is None else result * factor
        if level < levels - 1:
            x = F.avg_pool2x2(x)
            y = F.avg_pool2x2(y)
    return result


def ms_ssim(pred: ImageLike, target: ImageLike, window: int = 5, peak: float = 1.0) -> float:
    """MS-SSIM の値 (0〜1)"""
    x = pred.data if isinstance(pred, Tensor) else pred
    y = target.data if isinstance(target, Tensor) else target
    value = ms_ssim_tensor(Tensor(np.asarray(x), dtype=np.float64), Tensor(np.asarray(y), dtype=np.float64),
                           window=window, peak=peak)
    return float(value.item())


def reconstruction_loss(pred: Tensor, target: ImageLike, alpha: float = 0.7, window: int = 5) -> Tensor:
    """α·L1 + (1 - α)·(1 - MS-SSIM)

    Args:
        pred (Tensor): 再構成 (H, W, C)
        target (ImageLike): 正解 (H, W, C)
        alpha (float, optional): L1 の重み。デフォルトは0.7。
        window (int, optional): SSIM の窓サイズ。デフォルトは5。

    Returns:
        Tensor: スカラー損失
    """
    target = _as_tensor(target, like=pred)
    loss = None
    if alpha > 0.0:
        loss = (pred - target).abs().mean() * alpha
    if alpha < 1.0:
        structural = (1.0 - ms_ssim_tensor(pred, target, window=window)) * (1.0 - alpha)
        loss = structural if loss is None else loss + structural
    return loss

