"""
最適化モジュール

Adam、勾配の大域ノルムクリッピング、線形ウォームアップ付きコサイン学習率スケジュールを提供します。
"""

import logging
import math
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from ..autodiff import Tensor

logger = logging.getLogger(__name__)


def warmup_cosine_lr(step: int, total_steps: int, base_lr: float, warmup: float = 0.1) -> float:
    """ステップ step (0始まり) の学習率

    最初の warmup 割合で 0 から base_lr へ線形に上げ、その後コサインで 0 付近まで下げます。
    """
    if total_steps <= 0:
        return base_lr
    warmup_steps = int(math.floor(warmup * total_steps))
    if step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    decay_steps = max(total_steps - warmup_steps, 1)
    progress = min((step - warmup_steps) / decay_steps, 1.0)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))


def global_grad_norm(params: Sequence[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            g = p.grad.astype(np.float64, copy=False)
            total += float(np.dot(g.ravel(), g.ravel()))
    return math.sqrt(total)


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """勾配の大域ノルムが max_norm を超える場合に一律に縮小し、クリップ前のノルムを返す"""
    norm = global_grad_norm(params)
    if norm > max_norm:
        factor = max_norm / (norm + 1e-6)
        for p in params:
            if p.grad is not None:
                p.grad = (p.grad * factor).astype(p.dtype, copy=False)
    return norm


class Adam:
    """Adam (重み減衰なし)。モーメントは 64bit で保持"""

    def __init__(self, params: Sequence[Tuple[str, Tensor]], lr: float = 2e-3,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        """Adamの初期化

        Args:
            params (Sequence[Tuple[str, Tensor]]): (名前, パラメータ) の列
            lr (float, optional): 学習率。デフォルトは2e-3。
            betas (Tuple[float, float], optional): モーメントの減衰率
            eps (float, optional): 分母の安定化項
        """
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}

    def step(self, lr: Optional[float] = None) -> None:
        """勾配を持つパラメータを1ステップ更新する"""
        lr = self.lr if lr is None else lr
        self.step_count += 1
        bias1 = 1.0 - self.beta1 ** self.step_count
        bias2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64, copy=False)
            m = self._m.get(name)
            v = self._v.get(name)
            if m is None:
                m = np.zeros(p.shape)
                v = np.zeros(p.shape)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self._m[name], self._v[name] = m, v
            update = lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.data = (p.data - update).astype(p.dtype, copy=False)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()
