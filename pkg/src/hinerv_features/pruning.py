"""
枝刈りモジュール

テンソルの要素数で正規化した重要度 |θ| / P^λ による大域的な枝刈りと、
微調整中に枝刈り済みの重みをゼロに保つマスクを提供します。
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from ..errors import UsageError
from .network import HiNeRVModel

logger = logging.getLogger(__name__)

DEFAULT_PRUNE_LAMBDA = 0.5


def prune_scores(tensors: Mapping[str, np.ndarray], lam: float = DEFAULT_PRUNE_LAMBDA) -> Dict[str, np.ndarray]:
    """重みごとの重要度 |θ| / P^λ (P はその重みが属するテンソルの要素数)"""
    return {
        name: np.abs(np.asarray(w, dtype=np.float64)) / float(np.asarray(w).size) ** lam
        for name, w in tensors.items()
    }


@dataclass
class PruneMask:
    """テンソルごとの保持マスク (True = 保持)"""

    keep: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(mask.size for mask in self.keep.values())

    @property
    def pruned(self) -> int:
        return sum(int(mask.size - np.count_nonzero(mask)) for mask in self.keep.values())

    @property
    def sparsity(self) -> float:
        total = self.total
        return self.pruned / total if total else 0.0

    def mask_for(self, name: str) -> Optional[np.ndarray]:
        return self.keep.get(name)

    def apply(self, model: HiNeRVModel) -> None:
        """枝刈り済みの重みをゼロにする"""
        for name, mask in self.keep.items():
            param = model.parameter(name)
            param.data = np.where(mask, param.data, 0).astype(param.dtype, copy=False)

    # 学習ループの制約フック
    def before_step(self, model: HiNeRVModel) -> None:
        for name, mask in self.keep.items():
            param = model.parameter(name)
            if param.grad is not None:
                param.grad = np.where(mask, param.grad, 0).astype(param.grad.dtype, copy=False)

    def after_step(self, model: HiNeRVModel) -> None:
        self.apply(model)


def prune(model: HiNeRVModel, ratio: float, lam: float = DEFAULT_PRUNE_LAMBDA,
          existing: Optional[PruneMask] = None) -> PruneMask:
    """残っている重みのうち重要度の低い ⌊ratio × 残数⌋ 個を大域的に枝刈りする

    同点は (テンソル番号, 平坦化インデックス) の順で先に並ぶものから枝刈りします。

    Args:
        model (HiNeRVModel): 対象モデル (重みはその場でゼロにされます)
        ratio (float): 枝刈り率 (0 ≤ ratio < 1)
        lam (float, optional): 要素数による正規化の指数。0 で単純な絶対値枝刈り。
        existing (Optional[PruneMask], optional): 反復枝刈りの前回マスク

    Returns:
        PruneMask: 累積のマスク

    Raises:
        UsageError: ratio が範囲外の場合
    """
    if not 0.0 <= ratio < 1.0:
        raise UsageError(f"枝刈り率は 0 以上 1 未満である必要があります: {ratio}")

    names = model.prunable_names()
    weights = {name: model.parameter(name).data for name in names}
    scores = prune_scores(weights, lam)
    keep = {
        name: (existing.keep[name].copy() if existing is not None and name in existing.keep
               else np.ones(weights[name].shape, dtype=bool))
        for name in names
    }

    candidate_scores, candidate_tensor, candidate_index = [], [], []
    for tensor_id, name in enumerate(names):
        flat_keep = keep[name].ravel()
        index = np.flatnonzero(flat_keep)
        candidate_scores.append(scores[name].ravel()[index])
        candidate_tensor.append(np.full(index.size, tensor_id, dtype=np.int64))
        candidate_index.append(index)
    remaining = int(sum(c.size for c in candidate_index))
    count = int(np.floor(ratio * remaining))

    if count > 0:
        all_scores = np.concatenate(candidate_scores)
        all_tensor = np.concatenate(candidate_tensor)
        all_index = np.concatenate(candidate_index)
        # lexsort は最後のキーを第1キーとする
        order = np.lexsort((all_index, all_tensor, all_scores))[:count]
        for tensor_id, name in enumerate(names):
            selected = all_index[order[all_tensor[order] == tensor_id]]
            keep[name].ravel()[selected] = False

    mask = PruneMask(keep)
    mask.apply(model)
    logger.info(f"枝刈り: {count:,} / {remaining:,} 個を削除 (累積スパース率 {mask.sparsity:.4f})")
    return mask
