"""
HiNeRV コーデックの機能を提供する各モジュール群のパッケージ

このパッケージには、以下のモジュールが含まれています：
- grid_encoding: 基本エンコーディングと階層的エンコーディング
- network: HiNeRVModel (フレーム/パッチ統一の順伝播)
- checkpoint: 非圧縮チェックポイントの保存・復元
- metrics: PSNR・MS-SSIM・学習損失
- optimizer: Adam と学習率スケジュール
- trainer: TrainingManager (パッチ単位の学習)
- pruning / quantization / entropy_coder / bitstream: 圧縮の各段階
- compression_manager: CompressionManager (枝刈り → Quant-Noise → 量子化 → 符号化)
- decoder: DecodeManager (フレーム/パッチ単位の復号)
- video_io: 動画の読み書き
- frame_cache: FrameCache (HTTP サービスの復号フレームキャッシュ)
"""

from .compression_manager import CompressionManager
from .decoder import DecodeManager
from .frame_cache import FrameCache
from .network import HiNeRVModel
from .trainer import TrainingManager

__all__ = [
    "HiNeRVModel",
    "TrainingManager",
    "CompressionManager",
    "DecodeManager",
    "FrameCache",
]
