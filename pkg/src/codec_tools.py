"""
HiNeRV コーデックのファサードモジュール

学習・圧縮・復号・評価の各フィーチャーマネージャーを呼び出すファサードとしての役割を持つクラスを提供します。
CLI と HTTP サービスはこのクラスを経由して機能を利用します。
"""

import csv
import logging
import threading
import time
import zlib
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .config import CodecConfig, get_settings, load_config
from .errors import UsageError, VideoIOError
from .hinerv_features.bitstream import deserialize
from .hinerv_features.checkpoint import save_checkpoint
from .hinerv_features.compression_manager import CompressionManager
from .hinerv_features.decoder import DecodeManager, parse_frame_range
from .hinerv_features.frame_cache import FrameCache, frame_cache_key
from .hinerv_features.metrics import ms_ssim, psnr
from .hinerv_features.network import HiNeRVModel
from .hinerv_features.trainer import TrainingManager
from .hinerv_features.video_io import encode_png, read_video, write_video
from .models import BitstreamInfo, FrameMetrics, RunReport

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
BITSTREAM_SUFFIX = ".hnrv"
EVAL_CSV_FIELDS = ("frame", "psnr", "msssim")


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise VideoIOError(f"ビットストリームを読み込めません: {path}: {e}") from e


def frame_metrics(original: np.ndarray, reconstructed: np.ndarray, start: int = 0,
                  window: int = 5) -> List[FrameMetrics]:
    """フレームごとの PSNR と MS-SSIM"""
    if original.shape != reconstructed.shape:
        raise UsageError(f"動画の寸法が一致しません: {original.shape} != {reconstructed.shape}")
    return [
        FrameMetrics(frame=start + k, psnr=psnr(reconstructed[k], original[k]),
                     msssim=ms_ssim(reconstructed[k], original[k], window=window))
        for k in range(original.shape[0])
    ]


def write_eval_csv(report: RunReport, path: PathLike) -> None:
    """frame,psnr,msssim の CSV (最終行は平均)"""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(EVAL_CSV_FIELDS)
        for entry in report.frames:
            writer.writerow([entry.frame, f"{entry.psnr:.6f}", f"{entry.msssim:.6f}"])
        writer.writerow(["mean", f"{report.mean_psnr:.6f}", f"{report.mean_msssim:.6f}"])


def format_info(info: BitstreamInfo) -> str:
    """ビットストリーム情報を人が読める形式にする"""
    lines = [
        f"version: {info.version}",
        f"file bytes: {info.file_bytes}",
        f"header bytes: {info.header_bytes}",
        f"checksum bytes: {info.checksum_bytes}",
        f"sparsity: {info.sparsity:.6f}",
        "config:",
    ]
    for key, value in info.config.model_dump().items():
        lines.append(f"  {key}={value}")
    lines.append("tensors:")
    lines.append(f"  {'id':>4} {'name':<36} {'shape':<20} {'bits':>4} {'sparsity':>8} "
                 f"{'mask':>8} {'payload':>9} {'record':>9}")
    for t in info.tensors:
        shape = "x".join(str(d) for d in t.shape)
        lines.append(f"  {t.name_id:>4} {t.name:<36} {shape:<20} {t.bits:>4} {t.sparsity:>8.4f} "
                     f"{t.mask_bytes:>8} {t.payload_bytes:>9} {t.record_bytes:>9}")
    lines.append(f"total payload bytes: {sum(t.payload_bytes for t in info.tensors)}")
    lines.append(f"total record bytes: {sum(t.record_bytes for t in info.tensors)}")
    return "\n".join(lines)


class HiNeRVCodec:
    """HiNeRV コーデックの機能へのアクセスを提供するファサードクラス"""

    def __init__(self, frame_cache: Optional[FrameCache] = None):
        """HiNeRVCodecの初期化

        Args:
            frame_cache (Optional[FrameCache], optional): HTTP サービス用の復号フレームキャッシュ
        """
        self.frame_cache = frame_cache
        # パスごとに最新の CRC32 と復号器だけを保持する
        self._decoders: Dict[str, Tuple[int, DecodeManager]] = {}
        self._lock = threading.Lock()

    # --- エンコード ---
    def encode(self, video: PathLike, config_path: PathLike, output: PathLike, *,
               seed: Optional[int] = None, epochs: Optional[int] = None, prune_ratio: Optional[float] = None,
               prune_epochs: Optional[int] = None, qat_epochs: Optional[int] = None, bits: Optional[int] = None,
               checkpoint: Optional[PathLike] = None, video_format: Optional[str] = None) -> RunReport:
        """学習 → 枝刈り + 微調整 → Quant-Noise 微調整 → 量子化 → 符号化 を行い、ビットストリームを書き出す

        Args:
            video (PathLike): 入力動画
            config_path (PathLike): key=value 形式の設定ファイル
            output (PathLike): 出力ビットストリーム
            seed, epochs, prune_ratio, prune_epochs, qat_epochs, bits: 設定ファイルの上書き
            checkpoint (Optional[PathLike], optional): 学習直後の非圧縮モデルの保存先
            video_format (Optional[str], optional): 入力動画の形式

        Returns:
            RunReport: 復号結果の画質とレート

        Raises:
            HiNeRVError: いずれかの段階で失敗した場合 (stage に段階名)
        """
        started = time.perf_counter()
        clip = read_video(video, video_format)
        overrides = {"seed": seed, "epochs": epochs, "prune_ratio": prune_ratio, "prune_epochs": prune_epochs,
                     "qat_epochs": qat_epochs, "bits": bits}
        config = load_config(config_path, clip.frames.shape[:3], overrides)

        output = Path(output)
        model = HiNeRVModel(config.model, seed=config.train.seed)
        trainer = TrainingManager(model, clip.frames, config.train)
        trainer.train(log_path=output.with_name(output.name + ".train.csv"))
        if checkpoint is not None:
            save_checkpoint(model, checkpoint)

        result = CompressionManager(trainer, config.compression).compress()
        try:
            output.write_bytes(result.bitstream)
        except OSError as e:
            raise VideoIOError(f"ビットストリームを書き込めません: {output}: {e}", stage="serialize") from e
        encode_seconds = time.perf_counter() - started

        started = time.perf_counter()
        decoded = DecodeManager(deserialize(result.bitstream).build_model()).decode()
        decode_seconds = time.perf_counter() - started
        report = RunReport.build(
            frame_metrics(clip.frames, decoded, window=config.train.ssim_window), len(result.bitstream),
            clip.height, clip.width, encode_seconds=encode_seconds, decode_seconds=decode_seconds,
            config=self._config_echo(config), seed=config.train.seed,
        )
        output.with_name(output.name + ".report.json").write_text(report.model_dump_json(indent=2))
        logger.info(f"エンコード完了: {len(result.bitstream):,} bytes, {report.bpp:.5f} bpp, "
                    f"PSNR {report.mean_psnr:.2f} dB, スパース率 {result.sparsity:.4f}")
        return report

    @staticmethod
    def _config_echo(config: CodecConfig) -> Dict[str, Any]:
        return {
            "model": config.model.model_dump(),
            "train": config.train.model_dump(),
            "compression": config.compression.model_dump(),
        }

    # --- デコード ---
    def decoder_for(self, path: PathLike) -> Tuple[DecodeManager, int]:
        """ビットストリームの復号器を返す。内容 (CRC32) が変わったパスは復号し直して置き換える"""
        blob = _read_bytes(path)
        crc = zlib.crc32(blob) & 0xFFFFFFFF
        key = str(Path(path).resolve())
        with self._lock:
            entry = self._decoders.get(key)
        if entry is not None and entry[0] == crc:
            return entry[1], crc
        decoder = DecodeManager(deserialize(blob).build_model(), workers=get_settings().threads)
        with self._lock:
            self._decoders[key] = (crc, decoder)
        return decoder, crc

    def decode(self, bitstream: PathLike, output: PathLike, frames: Optional[str] = None, mode: str = "frame",
               video_format: str = "png") -> np.ndarray:
        """ビットストリームを復号して動画を書き出す

        Args:
            bitstream (PathLike): 入力ビットストリーム
            output (PathLike): 出力先 (PNG ディレクトリまたは raw ファイル)
            frames (Optional[str], optional): 'a..b' 形式のフレーム範囲
            mode (str, optional): "frame" または "patch"
            video_format (str, optional): 出力形式

        Returns:
            np.ndarray: 復号したフレーム (n, H, W, 3)
        """
        decoder, _ = self.decoder_for(bitstream)
        selected = parse_frame_range(frames, decoder.model.config.frames)
        decoded = decoder.decode(selected, mode=mode)
        write_video(decoded, output, video_format, start=selected.start)
        return decoded

    # --- 評価 ---
    def evaluate(self, original: PathLike, reconstructed: PathLike, bitstream: PathLike,
                 csv_path: Optional[PathLike] = None, window: int = 5) -> RunReport:
        """元動画と再構成動画の画質、ビットストリームのレートを評価する

        Raises:
            UsageError: 動画の寸法が一致しない場合
        """
        source = read_video(original)
        decoded = read_video(reconstructed)
        size = len(_read_bytes(bitstream))
        report = RunReport.build(frame_metrics(source.frames, decoded.frames, window=window), size,
                                 source.height, source.width)
        if csv_path is not None:
            write_eval_csv(report, csv_path)
        return report

    # --- 情報 ---
    def info(self, bitstream: PathLike) -> BitstreamInfo:
        return deserialize(_read_bytes(bitstream)).info

    # --- HTTP サービス向け ---
    def list_bitstreams(self, directory: Optional[PathLike] = None) -> List[str]:
        directory = Path(directory or get_settings().bitstream_dir)
        if not directory.is_dir():
            return []
        return sorted(p.stem for p in directory.glob(f"*{BITSTREAM_SUFFIX}") if p.is_file())

    def resolve_bitstream(self, name: str, directory: Optional[PathLike] = None) -> Path:
        """公開ディレクトリ内のビットストリーム名をパスに変換する

        Raises:
            VideoIOError: 存在しない場合
            UsageError: 名前がディレクトリ外を指す場合
        """
        if not name or "/" in name or "\\" in name or name.startswith("."):
            raise UsageError(f"不正なビットストリーム名です: {name}")
        path = Path(directory or get_settings().bitstream_dir) / f"{name}{BITSTREAM_SUFFIX}"
        if not path.is_file():
            raise VideoIOError(f"ビットストリームが見つかりません: {name}")
        return path

    def frame_png(self, name: str, t: int, mode: str = "frame", directory: Optional[PathLike] = None) -> bytes:
        """公開ビットストリームの1フレームを PNG で返す (ディスクキャッシュを利用)"""
        decoder, crc = self.decoder_for(self.resolve_bitstream(name, directory))
        key = frame_cache_key(name, crc, t, mode)
        if self.frame_cache is not None:
            cached = self.frame_cache.get(key)
            if cached is not None:
                return cached
        png = encode_png(decoder.decode_frame(t, mode))
        if self.frame_cache is not None:
            self.frame_cache.put(key, png)
        return png

    def cache_status(self) -> Dict[str, int]:
        """保持している復号器の数とフレームキャッシュのバイト数"""
        with self._lock:
            decoders = len(self._decoders)
        frame_bytes = self.frame_cache.size() if self.frame_cache is not None else 0
        return {"decoders": decoders, "frame_bytes": frame_bytes}

    def clear_cache(self) -> Dict[str, int]:
        """復号器とフレームキャッシュを破棄し、破棄した数を返す"""
        with self._lock:
            decoders = len(self._decoders)
            self._decoders.clear()
        frames = self.frame_cache.clear() if self.frame_cache is not None else 0
        logger.info(f"キャッシュを破棄しました: 復号器 {decoders} 個, フレーム {frames} 枚")
        return {"decoders": decoders, "frames": frames}

