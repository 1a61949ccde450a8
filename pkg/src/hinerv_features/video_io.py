"""
動画入出力モジュール

連番 PNG ディレクトリ (%06d.png) と、寸法を JSON サイドカーに持つ raw RGB8 形式を読み書きします。
内部表現は [0, 1] の float32 で形状は (T, H, W, 3) です。
"""

import io
import logging
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from pydantic import ValidationError

from ..errors import UsageError, VideoIOError
from ..models import RawVideoHeader

logger = logging.getLogger(__name__)

PNG_PATTERN = re.compile(r"^(\d{6})\.png$")
FORMAT_PNG = "png"
FORMAT_RAW = "raw"
VIDEO_FORMATS = (FORMAT_PNG, FORMAT_RAW)

PathLike = Union[str, Path]


@dataclass
class VideoClip:
    """動画 (T, H, W, 3) と読み込み元の形式"""

    frames: np.ndarray
    source_format: str = FORMAT_PNG

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


def to_float(pixels: np.ndarray) -> np.ndarray:
    """8bit 値を [0, 1] へ (v / 255)"""
    return pixels.astype(np.float32) / np.float32(255.0)


def to_uint8(values: np.ndarray) -> np.ndarray:
    """[0, 1] 値を 8bit へ (round(v × 255))"""
    return np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def raw_header_path(path: PathLike) -> Path:
    return Path(f"{path}.json")


def detect_format(path: PathLike) -> str:
    return FORMAT_PNG if Path(path).is_dir() else FORMAT_RAW


def _read_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as image:
            return np.asarray(image.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as e:
        raise VideoIOError(f"フレームを読み込めません: {path.name}: {e}") from e


def _read_png_directory(directory: Path) -> np.ndarray:
    indices = sorted(int(m.group(1)) for m in (PNG_PATTERN.match(name) for name in os.listdir(directory)) if m)
    if not indices:
        raise VideoIOError(f"フレーム (%06d.png) が見つかりません: {directory}")
    for expected, index in enumerate(indices):
        if index != expected:
            raise VideoIOError(f"フレーム {expected:06d}.png がありません: {directory}")

    frames = []
    for index in indices:
        frame = _read_png(directory / f"{index:06d}.png")
        if frames and frame.shape != frames[0].shape:
            raise VideoIOError(f"フレーム {index:06d}.png の寸法 {frame.shape[:2]} が "
                               f"先頭フレーム {frames[0].shape[:2]} と一致しません")
        frames.append(frame)
    return np.stack(frames)


def read_raw_header(path: PathLike) -> RawVideoHeader:
    header_path = raw_header_path(path)
    try:
        return RawVideoHeader.model_validate_json(header_path.read_text())
    except OSError as e:
        raise VideoIOError(f"寸法ファイルを読み込めません: {header_path}: {e}") from e
    except ValidationError as e:
        raise VideoIOError(f"寸法ファイルが不正です: {header_path}: {e}") from e


def _read_raw(path: Path) -> np.ndarray:
    header = read_raw_header(path)
    try:
        data = np.fromfile(path, dtype=np.uint8)
    except OSError as e:
        raise VideoIOError(f"動画ファイルを読み込めません: {path}: {e}") from e
    frame_bytes = header.height * header.width * 3
    if data.size != header.frames * frame_bytes:
        complete = data.size // frame_bytes
        raise VideoIOError(f"raw 動画の長さが寸法と一致しません: フレーム {complete} が不完全です "
                           f"({data.size} bytes, 期待値 {header.frames * frame_bytes} bytes)")
    return data.reshape(header.frames, header.height, header.width, 3)


def read_video(path: PathLike, fmt: Optional[str] = None) -> VideoClip:
    """動画を読み込む

    Args:
        path (PathLike): PNG ディレクトリまたは raw ファイル
        fmt (Optional[str], optional): "png" または "raw"。未指定時はパスから判定。

    Returns:
        VideoClip: [0, 1] の動画

    Raises:
        VideoIOError: フレームの欠落・寸法の不一致・読み込み失敗
    """
    path = Path(path)
    fmt = fmt or detect_format(path)
    if fmt not in VIDEO_FORMATS:
        raise UsageError(f"未対応の動画形式です: {fmt}")
    if not path.exists():
        raise VideoIOError(f"動画が見つかりません: {path}")
    pixels = _read_png_directory(path) if fmt == FORMAT_PNG else _read_raw(path)
    logger.info(f"動画を読み込みました: {path} ({pixels.shape[0]} フレーム, {pixels.shape[1]}x{pixels.shape[2]})")
    return VideoClip(frames=to_float(pixels), source_format=fmt)


def write_frame(frame: np.ndarray, path: PathLike) -> None:
    try:
        Image.fromarray(to_uint8(frame)).save(path, format="PNG")
    except OSError as e:
        raise VideoIOError(f"フレームを書き込めません: {path}: {e}") from e


def write_video(frames: np.ndarray, path: PathLike, fmt: str = FORMAT_PNG, start: int = 0) -> None:
    """動画を書き出す

    Args:
        frames (np.ndarray): (T, H, W, 3) の [0, 1] 値
        path (PathLike): 出力先 (PNG はディレクトリ、raw はファイル)
        fmt (str, optional): "png" または "raw"
        start (int, optional): PNG のファイル名に使う先頭フレーム番号
    """
    if fmt not in VIDEO_FORMATS:
        raise UsageError(f"未対応の動画形式です: {fmt}")
    path = Path(path)
    if fmt == FORMAT_PNG:
        path.mkdir(parents=True, exist_ok=True)
        for offset, frame in enumerate(frames):
            write_frame(frame, path / f"{start + offset:06d}.png")
    else:
        header = RawVideoHeader(frames=frames.shape[0], height=frames.shape[1], width=frames.shape[2])
        try:
            to_uint8(frames).tofile(path)
            raw_header_path(path).write_text(header.model_dump_json())
        except OSError as e:
            raise VideoIOError(f"動画を書き込めません: {path}: {e}") from e
    logger.info(f"動画を書き出しました: {path} ({frames.shape[0]} フレーム, {fmt})")


def encode_png(frame: np.ndarray) -> bytes:
    """1フレームを PNG のバイト列にする"""
    buffer = io.BytesIO()
    Image.fromarray(to_uint8(frame)).save(buffer, format="PNG")
    return buffer.getvalue()
