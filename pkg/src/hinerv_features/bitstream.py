"""
ビットストリームモジュール

量子化済みモデルを1つのバイト列にまとめます。

    "HNRV" | u16 バージョン | u32 長 + JSON 構成 | u32 テンソル数
    | テンソルごと: u32 名前番号, u8 階数, u32 次元[], u8 ビット幅, f32 スケール,
      u32 長 + マスク RLE, 2^b 個の u32 ヒストグラム, u32 長 + 算術符号
    | u32 CRC32

数値はすべてリトルエンディアン。名前番号は named_parameters() の順序です。
"""

import json
import logging
import struct
import zlib
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from ..errors import BitstreamError
from ..models import BitstreamInfo, ModelConfig, TensorInfo
from .entropy_coder import (
    decode_mask_rle,
    encode_mask_rle,
    entropy_decode,
    entropy_encode,
    symbol_histogram,
)
from .network import HiNeRVModel
from .pruning import PruneMask
from .quantization import QuantizedTensor, QuantSpec, apply_quantization

logger = logging.getLogger(__name__)

MAGIC = b"HNRV"
BITSTREAM_VERSION = 1
_CRC_BYTES = 4


@dataclass
class DecodedBitstream:
    """復号したビットストリームの内容"""

    version: int
    config: ModelConfig
    tensors: Dict[str, QuantizedTensor]
    keep: Dict[str, np.ndarray]
    info: BitstreamInfo
    model: HiNeRVModel

    def build_model(self) -> HiNeRVModel:
        """量子化値を読み込んだモデルを返す"""
        apply_quantization(self.model, self.tensors)
        return self.model


def _encode_tensor(name_id: int, q: QuantizedTensor, keep: Optional[np.ndarray]) -> Tuple[bytes, int, int]:
    spec = q.spec
    shape = q.values.shape
    flat = q.values.ravel()
    mask_bytes = b""
    if keep is not None:
        mask_bytes = encode_mask_rle(keep)
        flat = flat[keep.ravel()]
    symbols = flat.astype(np.int64) + spec.offset
    histogram = symbol_histogram(symbols, spec.alphabet)
    payload = entropy_encode(symbols, histogram)

    record = b"".join([
        struct.pack("<IB", name_id, len(shape)),
        struct.pack(f"<{len(shape)}I", *shape),
        struct.pack("<Bf", spec.bits, spec.scale),
        struct.pack("<I", len(mask_bytes)), mask_bytes,
        histogram.astype("<u4").tobytes(),
        struct.pack("<I", len(payload)), payload,
    ])
    return record, len(mask_bytes), len(payload)


def serialize(model: HiNeRVModel, quantized: Dict[str, QuantizedTensor], masks: Optional[PruneMask] = None) -> bytes:
    """量子化済みのパラメータとマスクをビットストリームにする

    Args:
        model (HiNeRVModel): 構成とパラメータ順序を与えるモデル
        quantized (Dict[str, QuantizedTensor]): パラメータ名ごとの量子化値
        masks (Optional[PruneMask], optional): 枝刈りマスク

    Returns:
        bytes: ビットストリーム

    Raises:
        BitstreamError: 量子化値がモデルのパラメータと一致しない場合
    """
    names = [name for name, _ in model.named_parameters()]
    if set(names) != set(quantized):
        raise BitstreamError("量子化値とモデルのパラメータ名が一致しません", stage="serialize")
    config = model.config.model_dump_json().encode("utf-8")
    chunks = [MAGIC, struct.pack("<HI", BITSTREAM_VERSION, len(config)), config, struct.pack("<I", len(names))]
    for name_id, name in enumerate(names):
        keep = masks.mask_for(name) if masks is not None else None
        record, mask_len, payload_len = _encode_tensor(name_id, quantized[name], keep)
        logger.debug(f"{name}: mask={mask_len} bytes, payload={payload_len} bytes")
        chunks.append(record)
    body = b"".join(chunks)
    blob = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    logger.info(f"ビットストリームを生成しました: {len(blob):,} bytes, {len(names)} テンソル")
    return blob


class _Reader:
    def __init__(self, blob: bytes, end: int):
        self.blob = blob
        self.offset = 0
        self.end = end

    def take(self, size: int) -> bytes:
        if self.offset + size > self.end:
            raise BitstreamError("ビットストリームが途中で終わっています")
        chunk = self.blob[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize(blob: bytes) -> DecodedBitstream:
    """ビットストリームを解析し、量子化値とマスクを復元する

    Raises:
        BitstreamError: マジック・バージョン不一致、CRC 不一致、途中で終わっている場合
    """
    if len(blob) < len(MAGIC) + 6 + _CRC_BYTES or blob[:4] != MAGIC:
        raise BitstreamError("ビットストリームのマジックが一致しません")
    body_end = len(blob) - _CRC_BYTES
    (stored_crc,) = struct.unpack_from("<I", blob, body_end)
    if zlib.crc32(blob[:body_end]) & 0xFFFFFFFF != stored_crc:
        raise BitstreamError("CRC32 が一致しません (ビットストリームが破損しています)")

    reader = _Reader(blob, body_end)
    reader.take(4)
    version, config_len = reader.unpack("<HI")
    if version != BITSTREAM_VERSION:
        raise BitstreamError(f"未対応のビットストリームバージョンです: {version}")
    try:
        config = ModelConfig(**json.loads(reader.take(config_len).decode("utf-8")))
    except (ValueError, ValidationError) as e:
        raise BitstreamError(f"ビットストリームの構成が不正です: {e}") from e
    (count,) = reader.unpack("<I")
    header_bytes = reader.offset

    model = HiNeRVModel(config)
    params = model.named_parameters()
    if count != len(params):
        raise BitstreamError(f"テンソル数 {count} が構成のパラメータ数 {len(params)} と一致しません")

    tensors: Dict[str, QuantizedTensor] = {}
    keep: Dict[str, np.ndarray] = {}
    infos: List[TensorInfo] = []
    for _ in range(count):
        start = reader.offset
        name_id, rank = reader.unpack("<IB")
        if name_id >= len(params):
            raise BitstreamError(f"不正な名前番号です: {name_id}")
        name, param = params[name_id]
        shape = reader.unpack(f"<{rank}I") if rank else ()
        if tuple(shape) != param.shape:
            raise BitstreamError(f"{name} の形状 {shape} が構成 {param.shape} と一致しません")
        bits, scale = reader.unpack("<Bf")
        if not 2 <= bits <= 8:
            raise BitstreamError(f"{name} のビット幅が不正です: {bits}")
        spec = QuantSpec(bits=bits, scale=float(scale))
        (mask_len,) = reader.unpack("<I")
        mask = decode_mask_rle(reader.take(mask_len), param.size)
        histogram = np.frombuffer(reader.take(4 * spec.alphabet), dtype="<u4").astype(np.int64)
        (payload_len,) = reader.unpack("<I")
        payload = reader.take(payload_len)

        kept = int(np.count_nonzero(mask))
        if int(histogram.sum()) != kept:
            raise BitstreamError(f"{name} のヒストグラムの合計が保持要素数と一致しません")
        symbols = entropy_decode(payload, histogram.tolist(), kept)
        values = np.zeros(param.size, dtype=np.int32)
        values[mask] = (symbols - spec.offset).astype(np.int32)
        tensors[name] = QuantizedTensor(values=values.reshape(param.shape), spec=spec)
        if mask_len:
            keep[name] = mask.reshape(param.shape)
        infos.append(TensorInfo(
            name_id=name_id, name=name, shape=param.shape, bits=bits, scale=spec.scale,
            pruned=param.size - kept, sparsity=(param.size - kept) / param.size if param.size else 0.0,
            mask_bytes=mask_len, payload_bytes=payload_len, record_bytes=reader.offset - start,
        ))

    if reader.offset != body_end:
        raise BitstreamError("ビットストリームの末尾に余分なデータがあります")
    if len(tensors) != count:
        raise BitstreamError("同じテンソルが複数回記録されています")
    info = BitstreamInfo(version=version, config=config, header_bytes=header_bytes, checksum_bytes=_CRC_BYTES,
                         file_bytes=len(blob), tensors=infos)
    return DecodedBitstream(version=version, config=config, tensors=tensors, keep=keep, info=info,
                            model=model)


def inspect_bitstream(blob: bytes) -> BitstreamInfo:
    """ヘッダとテンソルごとのサイズ内訳を返す"""
    return deserialize(blob).info


def load_model(blob: bytes) -> HiNeRVModel:
    """ビットストリームから復号用のモデルを生成する"""
    return deserialize(blob).build_model()


def size_breakdown(info: BitstreamInfo) -> Dict[str, int]:
    """ヘッダ・マスク・符号・その他 (形状, ヒストグラム) のバイト数"""
    masks = sum(t.mask_bytes for t in info.tensors)
    payloads = sum(t.payload_bytes for t in info.tensors)
    records = sum(t.record_bytes for t in info.tensors)
    return {
        "header": info.header_bytes,
        "masks": masks,
        "payloads": payloads,
        "tables": records - masks - payloads,
        "checksum": info.checksum_bytes,
        "total": info.file_bytes,
    }

