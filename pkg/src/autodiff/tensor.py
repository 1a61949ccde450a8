"""
テンソルモジュール

numpy 配列をラップした密テンソルと、実行時に構築される計算グラフ (テープ) による
リバースモード自動微分を提供します。
"""

import itertools
import logging
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Any, Callable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import UsageError

logger = logging.getLogger(__name__)

# 生成順序の通し番号。backward はこの逆順にノードを辿る
_sequence = itertools.count()
_grad_enabled: ContextVar[bool] = ContextVar("hinerv_grad_enabled", default=True)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[Any]]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


@contextmanager
def no_grad() -> Iterator[None]:
    """このコンテキスト内ではグラフを記録しない (推論・評価用)"""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


def accumulate(array: np.ndarray) -> np.ndarray:
    """リダクション用に 64bit へ昇格 (64bit 入力はコピーしない)"""
    return array.astype(np.float64, copy=False)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """ブロードキャストで拡張された勾配を元の形状へ畳み込む"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """自動微分対応の密テンソル (行優先、既定は 32bit 実数)"""

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype: Optional[Any] = None):
        """Tensorの初期化

        Args:
            data (ArrayLike): 値。Tensor を渡した場合は配列を共有します。
            requires_grad (bool, optional): 勾配を保持する葉かどうか。デフォルトはFalse。
            dtype (Optional[Any], optional): 要素型。未指定時は浮動小数の型を維持し、それ以外は float32。
        """
        if isinstance(data, Tensor):
            data = data.data
        array = np.asarray(data)
        if dtype is not None:
            array = array.astype(dtype, copy=False)
        elif not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float32)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = ""
        self._is_leaf = True
        self._consumed = False
        self._seq = next(_sequence)

    # --- 基本属性 ---
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}, op={self._op or 'leaf'})"

    # --- グラフ構築 ---
    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        """演算結果のテンソルを生成し、必要なら親と逆伝播関数を記録する

        Args:
            data (np.ndarray): 順伝播の結果
            parents (Sequence[Tensor]): 入力テンソル
            backward (BackwardFn): 出力勾配から各親の勾配を返す関数
            op (str): 演算名 (デバッグ用)

        Returns:
            Tensor: 出力テンソル
        """
        out = cls(data)
        out._op = op
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._is_leaf = False
        return out

    def backward(self) -> None:
        """スカラー損失から到達可能なすべての葉に勾配を蓄積する

        Raises:
            UsageError: 損失がスカラーでない場合、勾配を持たない場合、または同じグラフで2回呼ばれた場合
        """
        if self.size != 1:
            raise UsageError(f"backward はスカラー損失にのみ使用できます: shape={self.shape}")
        if self._consumed:
            raise UsageError("このグラフの backward は既に実行されています")
        if not self.requires_grad:
            raise UsageError("損失が勾配を必要とするテンソルに依存していません")

        nodes = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in nodes:
                continue
            nodes[id(node)] = node
            stack.extend(p for p in node._parents if p.requires_grad)

        # 親は必ず子より先に生成されるため、通し番号の逆順が逆トポロジカル順になる
        order = sorted(nodes.values(), key=lambda n: n._seq, reverse=True)
        grads = {id(self): np.ones_like(self.data)}
        for node in order:
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._is_leaf:
                grad = grad.astype(node.dtype, copy=False)
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            parent_grads = node._backward(grad)
            for parent, parent_grad in zip(node._parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + parent_grad if key in grads else parent_grad

        # テープを解放
        for node in order:
            if not node._is_leaf:
                node._parents = ()
                node._backward = None
        self._consumed = True
        logger.debug(f"backward 完了: {len(order)} ノード")

    # --- 要素ごとの演算 ---
    def _coerce(self, other: ArrayLike) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other: ArrayLike) -> "Tensor":
        other = self._coerce(other)
        a_shape, b_shape = self.shape, other.shape

        def _backward(g):
            return unbroadcast(g, a_shape), unbroadcast(g, b_shape)

        return Tensor.from_op(self.data + other.data, (self, other), _backward, "add")

    __radd__ = __add__

    def __sub__(self, other: ArrayLike) -> "Tensor":
        other = self._coerce(other)
        a_shape, b_shape = self.shape, other.shape

        def _backward(g):
            return unbroadcast(g, a_shape), unbroadcast(-g, b_shape)

        return Tensor.from_op(self.data - other.data, (self, other), _backward, "sub")

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return self._coerce(other) - self

    def __neg__(self) -> "Tensor":
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __mul__(self, other: ArrayLike) -> "Tensor":
        other = self._coerce(other)
        a, b = self.data, other.data

        def _backward(g):
            return unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)

        return Tensor.from_op(a * b, (self, other), _backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        other = self._coerce(other)
        a, b = self.data, other.data

        def _backward(g):
            return unbroadcast(g / b, a.shape), unbroadcast(-g * a / (b * b), b.shape)

        return Tensor.from_op(a / b, (self, other), _backward, "div")

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return self._coerce(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        a = self.data
        exponent = float(exponent)

        def _backward(g):
            return (g * exponent * np.power(a, exponent - 1.0),)

        return Tensor.from_op(np.power(a, exponent), (self,), _backward, "pow")

    def abs(self) -> "Tensor":
        a = self.data
        return Tensor.from_op(np.abs(a), (self,), lambda g: (g * np.sign(a),), "abs")

    def clamp_min(self, floor: float) -> "Tensor":
        a = self.data
        keep = a > floor
        return Tensor.from_op(np.where(keep, a, np.asarray(floor, dtype=a.dtype)), (self,), lambda g: (g * keep,), "clamp_min")

    # --- リダクション ---
    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        shape = self.shape
        out = np.sum(accumulate(self.data), axis=axis, keepdims=keepdims).astype(self.dtype)

        def _backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor.from_op(np.asarray(out), (self,), _backward, "sum")

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # --- 形状操作 ---
    def __getitem__(self, index: Any) -> "Tensor":
        shape, dtype = self.shape, self.dtype

        def _backward(g):
            full = np.zeros(shape, dtype=g.dtype if g.dtype == np.float64 else dtype)
            np.add.at(full, index, g)
            return (full,)

        return Tensor.from_op(self.data[index], (self,), _backward, "getitem")

    def reshape(self, *shape: int) -> "Tensor":
        original = self.shape
        return Tensor.from_op(self.data.reshape(*shape), (self,), lambda g: (g.reshape(original),), "reshape")


def tensor(data: ArrayLike, requires_grad: bool = False, dtype: Optional[Any] = None) -> Tensor:
    """Tensor を生成する簡易ファクトリ"""
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)
