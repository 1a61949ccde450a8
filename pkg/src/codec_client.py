"""
HiNeRVCodec のシンプルなファクトリー

CLI と HTTP ルーターで同一のファサードインスタンスを共有します。
"""
from functools import lru_cache

from .codec_tools import HiNeRVCodec
from .hinerv_features.frame_cache import FrameCache


@lru_cache(maxsize=1)
def get_codec_tools() -> HiNeRVCodec:
    """
    HiNeRVCodec インスタンスを取得

    LRUキャッシュにより、同一インスタンス (復号済みモデルとフレームキャッシュ) を再利用します。

    Returns:
        HiNeRVCodec: コーデック機能の統合インターフェース
    """
    return HiNeRVCodec(frame_cache=FrameCache())


def clear_codec_tools_cache():
    """
    キャッシュをクリアして新しいインスタンスを強制作成
    主にテスト用途で使用します。
    """
    get_codec_tools.cache_clear()
