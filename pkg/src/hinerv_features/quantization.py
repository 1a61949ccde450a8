"""
量子化モジュール

テンソル単位の対称固定小数点量子化と、量子化を意識した微調整で用いる
Quant-Noise (ランダムな一部の要素だけを量子化値へ置き換える) を提供します。
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from ..autodiff import Tensor, functional as F
from ..errors import UsageError
from .network import HiNeRVModel

logger = logging.getLogger(__name__)

MIN_BITS = 2
MAX_BITS = 8


@dataclass(frozen=True)
class QuantSpec:
    """量子化パラメータ (ビット幅とテンソル単位のスケール)"""

    bits: int
    scale: float

    @property
    def qmax(self) -> int:
        return 2 ** (self.bits - 1) - 1

    @property
    def offset(self) -> int:
        """エントロピー符号化のシンボル番号 = q + offset"""
        return 2 ** (self.bits - 1)

    @property
    def alphabet(self) -> int:
        return 2 ** self.bits


@dataclass
class QuantizedTensor:
    values: np.ndarray
    spec: QuantSpec

    def dequantize(self) -> np.ndarray:
        return dequantize(self.values, self.spec)


def _check_bits(bits: int) -> None:
    if not MIN_BITS <= bits <= MAX_BITS:
        raise UsageError(f"ビット幅は {MIN_BITS}〜{MAX_BITS} である必要があります: {bits}")


def quant_spec(w: np.ndarray, bits: int) -> QuantSpec:
    """scale = max|w| / (2^(b-1) - 1) を float32 で表現したもの。全要素ゼロなら scale = 1"""
    _check_bits(bits)
    peak = float(np.max(np.abs(w))) if np.size(w) else 0.0
    qmax = 2 ** (bits - 1) - 1
    scale = float(np.float32(peak / qmax)) if peak > 0.0 else 1.0
    if scale == 0.0:
        scale = float(np.finfo(np.float32).tiny)
    return QuantSpec(bits=bits, scale=scale)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_with(w: np.ndarray, spec: QuantSpec) -> np.ndarray:
    scaled = np.asarray(w, dtype=np.float64) / spec.scale
    return np.clip(round_half_away(scaled), -spec.qmax, spec.qmax).astype(np.int32)


def quantize_tensor(w: np.ndarray, bits: int = 6) -> QuantizedTensor:
    """対称な符号付き整数へ量子化する (四捨五入は0から遠い側へ)

    Raises:
        UsageError: ビット幅が範囲外の場合
    """
    spec = quant_spec(w, bits)
    return QuantizedTensor(values=quantize_with(w, spec), spec=spec)


def dequantize(values: np.ndarray, spec: QuantSpec) -> np.ndarray:
    """q × scale (float32 で計算するため復号はマシン間で一致します)"""
    return values.astype(np.float32) * np.float32(spec.scale)


def quant_noise_forward(w: Tensor, spec: QuantSpec, noise_ratio: float, rng: np.random.Generator) -> Tensor:
    """noise_ratio の割合の要素を量子化値に置き換える

    置き換えた要素は定数として扱い勾配はゼロ、それ以外は通常の勾配が流れます。
    """
    if not 0.0 <= noise_ratio <= 1.0:
        raise UsageError(f"ノイズ率は 0〜1 である必要があります: {noise_ratio}")
    if noise_ratio == 0.0:
        return w
    mask = rng.random(w.shape) < noise_ratio
    replacement = dequantize(quantize_with(w.data, spec), spec)
    return F.replace_where(w, replacement, mask)


class QuantNoise:
    """モデルの param_transform として設定する Quant-Noise

    呼び出しごとに現在の重みから量子化パラメータを求め直し、新しい部分集合を置き換えます。
    """

    def __init__(self, bits: int, noise_ratio: float, rng: np.random.Generator):
        _check_bits(bits)
        self.bits = bits
        self.noise_ratio = noise_ratio
        self.rng = rng

    def __call__(self, name: str, param: Tensor) -> Tensor:
        return quant_noise_forward(param, quant_spec(param.data, self.bits), self.noise_ratio, self.rng)


def quantize_model(model: HiNeRVModel, bits: int = 6) -> Dict[str, QuantizedTensor]:
    """全パラメータ (グリッドを含む) を量子化する"""
    return {name: quantize_tensor(param.data, bits) for name, param in model.named_parameters()}


def apply_quantization(model: HiNeRVModel, quantized: Dict[str, QuantizedTensor]) -> None:
    """量子化後の値でモデルの重みを置き換える"""
    model.load_state_dict({name: q.dequantize() for name, q in quantized.items()})


def max_quantization_error(w: np.ndarray, quantized: QuantizedTensor) -> Optional[float]:
    if w.size == 0:
        return None
    return float(np.max(np.abs(quantized.dequantize().astype(np.float64) - np.asarray(w, dtype=np.float64))))
