# src/routers/codec.py
import logging
from typing import Any, Callable, Dict, List, TypeVar

from fastapi import APIRouter, HTTPException, Query
from fastapi.responses import Response
from pydantic import BaseModel

from ..codec_client import get_codec_tools
from ..errors import HiNeRVError
from ..hinerv_features.bitstream import size_breakdown
from ..hinerv_features.decoder import DECODE_MODES
from ..models import BitstreamInfo

logger = logging.getLogger(__name__)

router = APIRouter()

T = TypeVar("T")


# === レスポンスモデル定義 ===
class BitstreamList(BaseModel):
    bitstreams: List[str]


class BitstreamDetail(BaseModel):
    name: str
    info: BitstreamInfo
    bpp: float
    sizes: Dict[str, int]


class CacheStatus(BaseModel):
    decoders: int
    frame_bytes: int


class CacheCleared(BaseModel):
    decoders: int
    frames: int


def _call_codec(func: Callable[..., T], *args: Any, **kwargs: Any) -> T:
    """コーデックの例外を HTTPException に変換して呼び出す"""
    try:
        return func(*args, **kwargs)
    except HiNeRVError as e:
        logger.error(f"コーデックエラー: {e}")
        raise HTTPException(status_code=e.status_code, detail=str(e))
    except Exception as e:
        logger.exception(f"予期せぬエラー: {e}")
        raise HTTPException(status_code=500, detail=f"予期せぬエラー: {str(e)}")


@router.get("/bitstreams", response_model=BitstreamList, operation_id="list_bitstreams")
def list_bitstreams():
    """公開ディレクトリ (HINERV_BITSTREAM_DIR) にあるビットストリームの一覧を取得"""
    return BitstreamList(bitstreams=_call_codec(get_codec_tools().list_bitstreams))


@router.get("/{name}/info", response_model=BitstreamDetail, operation_id="get_bitstream_info")
def get_bitstream_info(name: str):
    """ビットストリームの構成・テンソルごとのサイズ・スパース率・bpp を取得"""
    codec = get_codec_tools()
    path = _call_codec(codec.resolve_bitstream, name)
    info = _call_codec(codec.info, path)
    config = info.config
    bpp = 8.0 * info.file_bytes / (config.frames * config.height * config.width)
    return BitstreamDetail(name=name, info=info, bpp=bpp, sizes=size_breakdown(info))


@router.get(
    "/{name}/frames/{t}",
    response_class=Response,
    responses={200: {"content": {"image/png": {}}}},
    operation_id="decode_frame",
)
def decode_frame(name: str, t: int, mode: str = Query("frame", description="frame または patch")):
    """ビットストリームの t 番目のフレームを復号して PNG で返す"""
    if mode not in DECODE_MODES:
        raise HTTPException(status_code=400, detail=f"mode は {', '.join(DECODE_MODES)} のいずれかです")
    png = _call_codec(get_codec_tools().frame_png, name, t, mode)
    return Response(content=png, media_type="image/png")


@router.get("/cache", response_model=CacheStatus, operation_id="get_cache_status")
def get_cache_status():
    """メモリ上の復号器の数とディスク上のフレームキャッシュのサイズを取得"""
    return CacheStatus(**_call_codec(get_codec_tools().cache_status))


@router.delete("/cache", response_model=CacheCleared, operation_id="clear_cache")
def clear_cache():
    """復号器とフレームキャッシュをすべて破棄する"""
    return CacheCleared(**_call_codec(get_codec_tools().clear_cache))
