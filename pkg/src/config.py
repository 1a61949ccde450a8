"""
設定モジュール

1行1キーの key=value 形式の設定ファイルを読み込み、モデル構成・学習設定・圧縮設定に振り分けます。
プロセス全体の設定 (並列数・ログレベル・ディレクトリ) は環境変数から取得します。
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

from dotenv import dotenv_values
from pydantic import BaseModel, Field, ValidationError

from .errors import ConfigurationError
from .models import CompressionConfig, ModelConfig, TrainConfig

logger = logging.getLogger(__name__)

# ModelConfig 以外で設定ファイルに書けるキー
PRESET_KEYS = ("preset", "dataset")
VIDEO_KEYS = ("height", "width", "frames")


class CodecConfig(BaseModel):
    """設定ファイル1つ分の内容"""

    model: ModelConfig
    train: TrainConfig = Field(default_factory=TrainConfig)
    compression: CompressionConfig = Field(default_factory=CompressionConfig)


class Settings(BaseModel):
    """環境変数から読み込むプロセス設定"""

    threads: Optional[int] = Field(None, gt=0, description="HINERV_THREADS: 並列数の上限")
    log_level: str = Field("INFO", description="HINERV_LOG_LEVEL")
    bitstream_dir: str = Field("./bitstreams", description="HINERV_BITSTREAM_DIR: HTTP サービスが公開するビットストリーム")
    cache_path: str = Field("./cache", description="HINERV_CACHE_PATH: 復号フレームのキャッシュ")


def get_settings() -> Settings:
    """現在の環境変数から Settings を生成する"""
    try:
        return Settings(
            threads=os.getenv("HINERV_THREADS") or None,
            log_level=os.getenv("HINERV_LOG_LEVEL", "INFO"),
            bitstream_dir=os.getenv("HINERV_BITSTREAM_DIR", "./bitstreams"),
            cache_path=os.getenv("HINERV_CACHE_PATH", "./cache"),
        )
    except ValidationError as e:
        raise ConfigurationError(f"環境変数が不正です: {e}") from e


def configure_logging(level: Optional[str] = None) -> None:
    """エントリポイントからのみ呼び出すログ設定"""
    level = (level or get_settings().log_level).upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _fields(model: type) -> set:
    return set(model.model_fields)


def split_config(values: Mapping[str, Any], video_shape: Optional[Tuple[int, int, int]] = None) -> CodecConfig:
    """キーと値の組を3つの設定モデルに振り分ける

    Args:
        values (Mapping[str, Any]): 設定値 (文字列でも可)
        video_shape (Optional[Tuple[int, int, int]], optional): 入力動画の (T, H, W)。
            height, width, frames が未指定の場合に使用します。

    Returns:
        CodecConfig: 設定

    Raises:
        ConfigurationError: 未知のキー、値の検証エラー、寸法が決まらない場合
    """
    model_keys = _fields(ModelConfig)
    train_keys = _fields(TrainConfig)
    compression_keys = _fields(CompressionConfig)

    model_values: Dict[str, Any] = {}
    train_values: Dict[str, Any] = {}
    compression_values: Dict[str, Any] = {}
    preset: Dict[str, str] = {}
    for key, value in values.items():
        if value is None or value == "":
            continue
        if key in PRESET_KEYS:
            preset[key] = str(value)
        elif key in model_keys:
            model_values[key] = value
        elif key in train_keys:
            train_values[key] = value
        elif key in compression_keys:
            compression_values[key] = value
        else:
            raise ConfigurationError(f"未知の設定キーです: {key}")

    if video_shape is not None:
        for key, size in zip(("frames", "height", "width"), video_shape):
            model_values.setdefault(key, size)
    missing = [key for key in VIDEO_KEYS if key not in model_values]
    if missing:
        raise ConfigurationError(f"動画の寸法が決まりません: {', '.join(missing)}")

    try:
        if "preset" in preset:
            dims = {key: int(model_values.pop(key)) for key in VIDEO_KEYS}
            model = ModelConfig.preset(preset["preset"], dims["height"], dims["width"], dims["frames"],
                                       dataset=preset.get("dataset", "uvg"), **model_values)
        else:
            model = ModelConfig(**model_values)
        return CodecConfig(model=model, train=TrainConfig(**train_values),
                           compression=CompressionConfig(**compression_values))
    except (ValidationError, ValueError) as e:
        raise ConfigurationError(f"設定値が不正です: {e}") from e


def load_config(path: Union[str, Path], video_shape: Optional[Tuple[int, int, int]] = None,
                overrides: Optional[Mapping[str, Any]] = None) -> CodecConfig:
    """key=value 形式の設定ファイルを読み込む

    Args:
        path (Union[str, Path]): 設定ファイル (# でコメント)
        video_shape (Optional[Tuple[int, int, int]], optional): 入力動画の (T, H, W)
        overrides (Optional[Mapping[str, Any]], optional): コマンドライン引数などによる上書き

    Raises:
        ConfigurationError: ファイルが存在しない、または内容が不正な場合
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"設定ファイルが見つかりません: {path}")
    values: Dict[str, Any] = dict(dotenv_values(path))
    if overrides:
        values.update({key: value for key, value in overrides.items() if value is not None})
    config = split_config(values, video_shape)
    logger.info(f"設定を読み込みました: {path}")
    return config
