"""
チェックポイントモジュール

学習途中のモデルを非圧縮 (float32) で保存・復元します。
形式: "HNRV" | u16 バージョン (0x8001) | u32 長 + JSON 構成 | named_parameters 順の f32 LE 値
"""

import json
import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np
from pydantic import ValidationError

from ..errors import BitstreamError, VideoIOError
from ..models import ModelConfig
from .network import HiNeRVModel

logger = logging.getLogger(__name__)

MAGIC = b"HNRV"
CHECKPOINT_VERSION = 0x8001


def save_checkpoint(model: HiNeRVModel, path: Union[str, Path]) -> int:
    """モデルをチェックポイントファイルに保存し、書き込んだバイト数を返す

    Raises:
        VideoIOError: 書き込みに失敗した場合
    """
    config = model.config.model_dump_json().encode("utf-8")
    chunks = [MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(config)), config]
    for _, param in model.named_parameters():
        chunks.append(param.data.astype("<f4").tobytes())
    blob = b"".join(chunks)
    try:
        Path(path).write_bytes(blob)
    except OSError as e:
        raise VideoIOError(f"チェックポイントを書き込めません: {path}: {e}", stage="checkpoint") from e
    logger.info(f"チェックポイントを保存しました: {path} ({len(blob):,} bytes)")
    return len(blob)


def load_checkpoint(path: Union[str, Path]) -> HiNeRVModel:
    """チェックポイントからモデルを復元する

    Raises:
        VideoIOError: ファイルを読めない場合
        BitstreamError: 形式が不正な場合
    """
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise VideoIOError(f"チェックポイントを読み込めません: {path}: {e}", stage="checkpoint") from e

    if len(blob) < 10 or blob[:4] != MAGIC:
        raise BitstreamError("チェックポイントのマジックが一致しません", stage="checkpoint")
    version, config_len = struct.unpack_from("<HI", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise BitstreamError(f"未対応のチェックポイントバージョンです: {version:#x}", stage="checkpoint")
    offset = 10 + config_len
    try:
        config = ModelConfig(**json.loads(blob[10:offset].decode("utf-8")))
    except (ValueError, ValidationError) as e:
        raise BitstreamError(f"チェックポイントの構成が不正です: {e}", stage="checkpoint") from e

    model = HiNeRVModel(config)
    state = {}
    for name, param in model.named_parameters():
        nbytes = 4 * param.size
        if offset + nbytes > len(blob):
            raise BitstreamError(f"チェックポイントが途中で終わっています: {name}", stage="checkpoint")
        state[name] = np.frombuffer(blob, dtype="<f4", count=param.size, offset=offset).reshape(param.shape)
        offset += nbytes
    if offset != len(blob):
        raise BitstreamError("チェックポイントの末尾に余分なデータがあります", stage="checkpoint")
    model.load_state_dict(state)
    return model
