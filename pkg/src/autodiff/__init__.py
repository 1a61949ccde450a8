"""
最小構成の自動微分エンジン

HiNeRV の学習に必要な演算だけを備えた、numpy ベースのリバースモード自動微分パッケージです。
- Tensor: 値と勾配を保持するテンソル
- functional: 畳み込み・正規化・補間などの演算
"""

from .tensor import Tensor, no_grad, is_grad_enabled, tensor
from . import functional

__all__ = ["Tensor", "no_grad", "is_grad_enabled", "tensor", "functional"]
