"""
エントロピー符号化モジュール

ヒストグラムを静的なモデルとする 32bit 整数算術符号化と、
枝刈りマスクの可変長整数ランレングス符号化を提供します。
"""

import logging
from typing import List, Sequence, Tuple

import numpy as np

from ..errors import BitstreamError, UsageError

logger = logging.getLogger(__name__)

# 32bit レンジの定数
_TOP = 1 << 32
_HALF = 1 << 31
_QTR = 1 << 30
# 頻度の合計は 1/4 レンジ未満である必要があります
MAX_TOTAL_FREQUENCY = _QTR - 1


class _BitWriter:
    __slots__ = ("bits",)

    def __init__(self):
        self.bits: List[int] = []

    def put(self, bit: int, pending: int = 0) -> None:
        self.bits.append(bit)
        if pending:
            self.bits.extend([bit ^ 1] * pending)

    def finish(self) -> bytes:
        if not self.bits:
            return b""
        return np.packbits(np.asarray(self.bits, dtype=np.uint8)).tobytes()


class _BitReader:
    __slots__ = ("bits", "index")

    def __init__(self, data: bytes):
        self.bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8)).tolist()
        self.index = 0

    def get(self) -> int:
        # 末尾以降はゼロで埋める
        if self.index >= len(self.bits):
            return 0
        bit = self.bits[self.index]
        self.index += 1
        return bit


def symbol_histogram(symbols: np.ndarray, alphabet: int) -> np.ndarray:
    symbols = np.asarray(symbols, dtype=np.int64)
    if symbols.size and (symbols.min() < 0 or symbols.max() >= alphabet):
        raise UsageError(f"シンボルがアルファベット [0, {alphabet}) の範囲外です")
    return np.bincount(symbols, minlength=alphabet).astype(np.uint32)


def _cumulative(histogram: Sequence[int]) -> Tuple[List[int], int]:
    cumulative = [0]
    for count in histogram:
        cumulative.append(cumulative[-1] + int(count))
    total = cumulative[-1]
    if total > MAX_TOTAL_FREQUENCY:
        raise UsageError(f"頻度の合計 {total} が上限 {MAX_TOTAL_FREQUENCY} を超えています")
    return cumulative, total


def entropy_encode(symbols: np.ndarray, histogram: Sequence[int]) -> bytes:
    """静的ヒストグラムでシンボル列を算術符号化する

    Args:
        symbols (np.ndarray): 0 以上 len(histogram) 未満の整数列
        histogram (Sequence[int]): シンボルごとの出現数 (復号側にも伝送されます)

    Returns:
        bytes: 符号化されたバイト列 (シンボル数 0 のときは空)
    """
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    if symbols.size == 0:
        return b""
    cumulative, total = _cumulative(histogram)
    low, high, pending = 0, _TOP - 1, 0
    writer = _BitWriter()

    for symbol in symbols.tolist():
        span = high - low + 1
        if cumulative[symbol + 1] == cumulative[symbol]:
            raise UsageError(f"ヒストグラムで頻度ゼロのシンボルです: {symbol}")
        high = low + span * cumulative[symbol + 1] // total - 1
        low = low + span * cumulative[symbol] // total
        while True:
            if high < _HALF:
                writer.put(0, pending)
                pending = 0
            elif low >= _HALF:
                writer.put(1, pending)
                pending = 0
                low -= _HALF
                high -= _HALF
            elif low >= _QTR and high < 3 * _QTR:
                pending += 1
                low -= _QTR
                high -= _QTR
            else:
                break
            low = low << 1
            high = (high << 1) | 1

    # 最終区間を確定させる2ビット
    pending += 1
    writer.put(0 if low < _QTR else 1, pending)
    return writer.finish()


def entropy_decode(data: bytes, histogram: Sequence[int], count: int) -> np.ndarray:
    """entropy_encode の逆変換

    Raises:
        BitstreamError: 符号列がヒストグラムと矛盾する場合
    """
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    cumulative, total = _cumulative(histogram)
    if total == 0:
        raise BitstreamError("空のヒストグラムでシンボルを復号しようとしました")
    bounds = np.asarray(cumulative, dtype=np.int64)
    reader = _BitReader(data)
    value = 0
    for _ in range(32):
        value = (value << 1) | reader.get()

    low, high = 0, _TOP - 1
    out = np.empty(count, dtype=np.int64)
    for k in range(count):
        span = high - low + 1
        scaled = ((value - low + 1) * total - 1) // span
        symbol = int(np.searchsorted(bounds, scaled, side="right")) - 1
        if not 0 <= symbol < len(histogram):
            raise BitstreamError("算術符号の復号に失敗しました")
        out[k] = symbol
        high = low + span * cumulative[symbol + 1] // total - 1
        low = low + span * cumulative[symbol] // total
        while True:
            if high < _HALF:
                pass
            elif low >= _HALF:
                value -= _HALF
                low -= _HALF
                high -= _HALF
            elif low >= _QTR and high < 3 * _QTR:
                value -= _QTR
                low -= _QTR
                high -= _QTR
            else:
                break
            low = low << 1
            high = (high << 1) | 1
            value = (value << 1) | reader.get()
    return out


def shannon_bytes(histogram: Sequence[int]) -> float:
    """静的モデルでの理論符号長 (バイト)"""
    counts = np.asarray(histogram, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        return 0.0
    nonzero = counts[counts > 0]
    return float(-(nonzero * np.log2(nonzero / total)).sum() / 8.0)


# --- 可変長整数とマスクのランレングス ---
def encode_varint(value: int) -> bytes:
    """LEB128 形式の符号なし可変長整数"""
    if value < 0:
        raise UsageError(f"可変長整数は非負である必要があります: {value}")
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def decode_varint(data: bytes, offset: int) -> Tuple[int, int]:
    """(値, 次のオフセット)"""
    value = 0
    shift = 0
    while True:
        if offset >= len(data):
            raise BitstreamError("可変長整数が途中で終わっています")
        byte = data[offset]
        offset += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, offset
        shift += 7


def encode_mask_rle(keep: np.ndarray) -> bytes:
    """保持マスクを「保持の連長, 削除の連長, ...」の可変長整数列にする

    最初の連長は保持側 (0 の場合あり)。削除がなければ空のバイト列。
    """
    flat = np.asarray(keep, dtype=bool).ravel()
    if flat.all():
        return b""
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if not flat[0]:
        runs.insert(0, 0)
    return b"".join(encode_varint(int(run)) for run in runs)


def decode_mask_rle(data: bytes, size: int) -> np.ndarray:
    """encode_mask_rle の逆変換

    Raises:
        BitstreamError: 連長の合計が要素数と一致しない場合
    """
    if not data:
        return np.ones(size, dtype=bool)
    keep = np.empty(size, dtype=bool)
    position = 0
    offset = 0
    state = True
    while offset < len(data):
        run, offset = decode_varint(data, offset)
        if position + run > size:
            raise BitstreamError(f"マスクの連長が要素数 {size} を超えています")
        keep[position:position + run] = state
        position += run
        state = not state
    if position != size:
        raise BitstreamError(f"マスクの連長の合計 {position} が要素数 {size} と一致しません")
    return keep
