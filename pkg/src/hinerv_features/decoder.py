"""
復号モジュール

モデルからフレームを再構成します。フレーム単位 (1回の順伝播) とパッチ単位
(パディング付きパッチを並列に計算して貼り合わせ) のどちらでも同じ画素を出力します。
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence, Tuple

import numpy as np

from ..autodiff import no_grad
from ..errors import UsageError
from ..models import PatchCoordinate
from .network import HiNeRVModel

logger = logging.getLogger(__name__)

MODE_FRAME = "frame"
MODE_PATCH = "patch"
DECODE_MODES = (MODE_FRAME, MODE_PATCH)


def thread_limit() -> int:
    """HINERV_THREADS で指定された並列数の上限 (未指定時は CPU 数)"""
    value = os.getenv("HINERV_THREADS")
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            logger.warning(f"HINERV_THREADS が整数ではありません: {value}")
    return os.cpu_count() or 1


def parse_frame_range(spec: Optional[str], frames: int) -> range:
    """'a..b' (b は含まない) をフレーム範囲に変換する。未指定時は全フレーム

    Raises:
        UsageError: 書式が不正、または範囲が空・範囲外の場合
    """
    if not spec:
        return range(frames)
    try:
        start_text, stop_text = spec.split("..")
        start = int(start_text) if start_text else 0
        stop = int(stop_text) if stop_text else frames
    except ValueError as e:
        raise UsageError(f"フレーム範囲の書式が不正です (a..b): {spec}") from e
    if not 0 <= start < stop <= frames:
        raise UsageError(f"フレーム範囲 {spec} が 0..{frames} の範囲外か空です")
    return range(start, stop)


class DecodeManager:
    """フレーム再構成を管理するクラス"""

    def __init__(self, model: HiNeRVModel, workers: Optional[int] = None):
        """DecodeManagerの初期化

        Args:
            model (HiNeRVModel): 復号に使うモデル
            workers (Optional[int], optional): 並列数。未指定時は HINERV_THREADS。
        """
        self.model = model
        self.workers = min(workers or thread_limit(), thread_limit())

    def _patch(self, patch: PatchCoordinate) -> Tuple[PatchCoordinate, np.ndarray]:
        # スレッドにはコンテキスト変数が引き継がれないため、ワーカー内で no_grad に入る
        with no_grad():
            return patch, self.model.forward_patch(patch).data

    def decode_frame(self, t: int, mode: str = MODE_FRAME) -> np.ndarray:
        """1フレーム (H, W, 3) を復号する"""
        if mode not in DECODE_MODES:
            raise UsageError(f"未対応の復号モードです: {mode}")
        if not 0 <= t < self.model.config.frames:
            raise UsageError(f"フレーム番号 {t} が範囲外です (0..{self.model.config.frames})")
        if mode == MODE_FRAME:
            with no_grad():
                return self.model.forward_frame(t).data

        config = self.model.config
        rows, cols = config.patch_grid
        size = config.patch_size
        patches = [PatchCoordinate(i=i, j=j, t=t) for j in range(rows) for i in range(cols)]
        frame = np.empty((config.height, config.width, config.out_channels), dtype=self.model.dtype)
        if self.workers > 1 and len(patches) > 1:
            with ThreadPoolExecutor(max_workers=min(self.workers, len(patches))) as pool:
                results = list(pool.map(self._patch, patches))
        else:
            results = [self._patch(patch) for patch in patches]
        for patch, pixels in results:
            frame[patch.j * size:(patch.j + 1) * size, patch.i * size:(patch.i + 1) * size] = pixels
        return frame

    def decode(self, frames: Optional[Sequence[int]] = None, mode: str = MODE_FRAME) -> np.ndarray:
        """複数フレーム (n, H, W, 3) を復号する"""
        frames = range(self.model.config.frames) if frames is None else frames
        logger.info(f"{len(frames)} フレームを復号します (mode={mode}, workers={self.workers})")
        return np.stack([self.decode_frame(t, mode) for t in frames])
