"""
フレームキャッシュモジュール

HTTP サービスで復号したフレーム (PNG) をディスクにキャッシュするハンドラークラスを提供します。
キーはビットストリーム名・CRC32・フレーム番号で、ビットストリームが更新されると別のキーになります。
"""

import logging
import os
import time
from typing import Optional

logger = logging.getLogger(__name__)

CACHE_DIR_NAME = "decoded_frames"
DEFAULT_MAX_AGE = 24 * 3600


def default_cache_dir() -> str:
    return os.path.join(os.getenv("HINERV_CACHE_PATH", "./cache"), CACHE_DIR_NAME)


def frame_cache_key(bitstream: str, crc: int, frame: int, mode: str = "frame") -> str:
    return f"{bitstream}_{crc:08x}_{frame:06d}_{mode}"


class FrameCache:
    """復号済みフレームのキャッシングを担当するクラス"""

    def __init__(self, cache_dir: Optional[str] = None):
        """FrameCacheの初期化

        Args:
            cache_dir (Optional[str], optional): キャッシュディレクトリのパス。未指定時は HINERV_CACHE_PATH 配下。
        """
        self.cache_dir = cache_dir or default_cache_dir()
        self._ensure_cache_directory()

    def _ensure_cache_directory(self) -> None:
        if not os.path.exists(self.cache_dir):
            os.makedirs(self.cache_dir, exist_ok=True)
            logger.info(f"キャッシュディレクトリを作成しました: {self.cache_dir}")

    def _get_cache_path(self, cache_key: str) -> str:
        # ファイル名に使えない文字は置換
        safe_key = "".join(c if c.isalnum() or c in "-_" else "_" for c in cache_key)
        return os.path.join(self.cache_dir, f"{safe_key}.png")

    def get(self, cache_key: str, max_age: int = DEFAULT_MAX_AGE) -> Optional[bytes]:
        """キャッシュから PNG を取得

        Args:
            cache_key (str): キャッシュキー
            max_age (int, optional): 最大有効期間 (秒)。デフォルトは24時間。

        Returns:
            Optional[bytes]: PNG のバイト列。存在しないか期限切れの場合は None。
        """
        cache_path = self._get_cache_path(cache_key)
        if not os.path.exists(cache_path):
            logger.debug(f"キャッシュが存在しません: {cache_key}")
            return None
        if (time.time() - os.path.getmtime(cache_path)) > max_age:
            logger.debug(f"キャッシュの期限が切れています: {cache_key}")
            self.remove(cache_key)
            return None
        try:
            with open(cache_path, "rb") as f:
                return f.read()
        except OSError as e:
            logger.warning(f"キャッシュの読み込みに失敗しました ({cache_key}): {e}")
            return None

    def put(self, cache_key: str, png: bytes) -> None:
        """PNG をキャッシュに保存 (失敗しても処理は継続)"""
        self._ensure_cache_directory()
        cache_path = self._get_cache_path(cache_key)
        try:
            with open(cache_path, "wb") as f:
                f.write(png)
            logger.debug(f"フレームをキャッシュに保存しました: {cache_key}")
        except OSError as e:
            logger.warning(f"キャッシュの保存に失敗しました ({cache_key}): {e}")

    def remove(self, cache_key: str) -> bool:
        cache_path = self._get_cache_path(cache_key)
        if not os.path.exists(cache_path):
            return False
        try:
            os.remove(cache_path)
            return True
        except OSError as e:
            logger.error(f"キャッシュの削除に失敗しました ({cache_key}): {e}")
            return False

    def clear(self) -> int:
        """すべてのキャッシュを削除し、削除した数を返す"""
        self._ensure_cache_directory()
        count = 0
        for item in os.listdir(self.cache_dir):
            if item.endswith(".png"):
                try:
                    os.remove(os.path.join(self.cache_dir, item))
                    count += 1
                except OSError as e:
                    logger.error(f"キャッシュファイルの削除に失敗しました ({item}): {e}")
        logger.info(f"{count}個のキャッシュファイルを削除しました")
        return count

    def size(self) -> int:
        """キャッシュディレクトリの合計サイズ (バイト)"""
        self._ensure_cache_directory()
        total = 0
        for item in os.listdir(self.cache_dir):
            path = os.path.join(self.cache_dir, item)
            if item.endswith(".png") and os.path.isfile(path):
                total += os.path.getsize(path)
        return total
