"""
コマンドラインインターフェース

    python -m src.cli encode VIDEO CONFIG OUT.hnrv [--seed N] [--epochs N] [--prune-ratio R] ...
    python -m src.cli decode IN.hnrv OUT [--frames a..b] [--mode frame|patch]
    python -m src.cli eval ORIGINAL RECONSTRUCTED IN.hnrv [--csv OUT.csv]
    python -m src.cli info IN.hnrv

終了コード: 0 正常, 2 使用法・設定, 3 入出力, 4 ビットストリーム破損, 5 数値エラー, 1 想定外
"""

import argparse
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv

from . import __version__
from .codec_client import get_codec_tools
from .codec_tools import format_info
from .config import configure_logging
from .errors import HiNeRVError
from .models import RunReport

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1


def _report_text(report: RunReport) -> str:
    lines = [f"frames: {len(report.frames)}",
             f"mean PSNR: {report.mean_psnr:.4f} dB",
             f"mean MS-SSIM: {report.mean_msssim:.6f}",
             f"bitstream bytes: {report.bitstream_bytes}",
             f"bpp: {report.bpp:.6f}"]
    if report.encode_seconds is not None:
        lines.append(f"encode seconds: {report.encode_seconds:.1f}")
    if report.decode_seconds is not None:
        lines.append(f"decode seconds: {report.decode_seconds:.1f}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hinerv", description="HiNeRV ニューラル動画コーデック")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="ログレベル (既定: HINERV_LOG_LEVEL または INFO)")
    commands = parser.add_subparsers(dest="command", required=True)

    encode = commands.add_parser(
        "encode", help="動画を学習・圧縮してビットストリームを書き出す",
        description="学習 → 枝刈り + 微調整 → Quant-Noise 微調整 → 量子化 → 算術符号化。"
                    "圧縮の既定値は公開実験の設定 (枝刈り 15%%, 微調整 60 エポック, QAT 30 エポック, "
                    "ノイズ率 0.9, 6bit)。")
    encode.add_argument("video", help="入力動画 (PNG ディレクトリまたは raw ファイル)")
    encode.add_argument("config", help="key=value 形式の設定ファイル")
    encode.add_argument("output", help="出力ビットストリーム (.hnrv)")
    encode.add_argument("--seed", type=int, help="乱数シード (既定: 設定ファイルまたは 0)")
    encode.add_argument("--epochs", type=int, help="学習エポック数 (既定: 300)")
    encode.add_argument("--prune-ratio", type=float, help="枝刈り率 (既定: 0.15, 0 で枝刈りなし)")
    encode.add_argument("--prune-epochs", type=int, help="枝刈り後の微調整エポック数 (既定: 60)")
    encode.add_argument("--qat-epochs", type=int, help="Quant-Noise 微調整のエポック数 (既定: 30, 0 で学習後量子化のみ)")
    encode.add_argument("--bits", type=int, help="量子化ビット幅 2〜8 (既定: 6)")
    encode.add_argument("--checkpoint", help="学習直後の非圧縮モデルの保存先")
    encode.add_argument("--format", choices=("png", "raw"), help="入力動画の形式 (既定: パスから判定)")

    decode = commands.add_parser("decode", help="ビットストリームを復号する")
    decode.add_argument("bitstream", help="入力ビットストリーム")
    decode.add_argument("output", help="出力先 (PNG ディレクトリまたは raw ファイル)")
    decode.add_argument("--frames", help="フレーム範囲 a..b (b は含まない)")
    decode.add_argument("--mode", choices=("frame", "patch"), default="frame", help="復号の単位 (既定: frame)")
    decode.add_argument("--format", choices=("png", "raw"), default="png", help="出力形式 (既定: png)")

    evaluate = commands.add_parser("eval", help="再構成動画の画質とレートを評価する")
    evaluate.add_argument("original", help="元動画")
    evaluate.add_argument("reconstructed", help="再構成動画")
    evaluate.add_argument("bitstream", help="ビットストリーム (bpp の計算に使用)")
    evaluate.add_argument("--csv", help="frame,psnr,msssim の CSV 出力先")
    evaluate.add_argument("--json", help="RunReport JSON の出力先")

    info = commands.add_parser("info", help="ビットストリームの内容を表示する")
    info.add_argument("bitstream", help="入力ビットストリーム")
    return parser


def run(args: argparse.Namespace) -> None:
    codec = get_codec_tools()
    if args.command == "encode":
        report = codec.encode(args.video, args.config, args.output, seed=args.seed, epochs=args.epochs,
                              prune_ratio=args.prune_ratio, prune_epochs=args.prune_epochs,
                              qat_epochs=args.qat_epochs, bits=args.bits, checkpoint=args.checkpoint,
                              video_format=args.format)
        print(_report_text(report))
    elif args.command == "decode":
        decoded = codec.decode(args.bitstream, args.output, frames=args.frames, mode=args.mode,
                               video_format=args.format)
        print(f"decoded frames: {decoded.shape[0]}")
    elif args.command == "eval":
        report = codec.evaluate(args.original, args.reconstructed, args.bitstream, csv_path=args.csv)
        if args.json:
            with open(args.json, "w") as f:
                f.write(report.model_dump_json(indent=2))
        print(_report_text(report))
    elif args.command == "info":
        print(format_info(codec.info(args.bitstream)))


def main(argv: Optional[List[str]] = None) -> int:
    """CLI のエントリポイント。終了コードを返す"""
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        run(args)
    except HiNeRVError as e:
        logger.error(f"{args.command} に失敗しました: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception:
        logger.exception(f"{args.command} で想定外のエラーが発生しました")
        return EXIT_UNEXPECTED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
