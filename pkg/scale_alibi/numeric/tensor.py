#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
張量與反向自動微分模組
Tensor & Reverse-Mode Autodiff Module

float64 稠密張量、以執行順序記錄的計算圖 (define-by-run)，
以及模型所需的封閉原語集合：
matmul, add, mul, softmax, layernorm, gelu, exp, log, sum, mean,
reshape, transpose, concat, slice, gather。
其餘運算 (減法、除法、開根號、L2 正規化...) 都由原語組合而成。
"""

import math
import logging
import threading
from contextlib import contextmanager
from typing import Any, Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.common import ContractError, DimensionError

# 設置日誌
logger = logging.getLogger(__name__)

ArrayLike = Union['Tensor', np.ndarray, float, int, Sequence]

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715


class GraphRecord:
    """計算圖中的一筆原語紀錄"""

    __slots__ = ('op', 'output', 'inputs', 'backward')

    def __init__(self, op: str, output: 'Tensor', inputs: Tuple['Tensor', ...],
                 backward: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]):
        self.op = op
        self.output = output
        self.inputs = inputs
        self.backward = backward

    def __repr__(self) -> str:
        return f"GraphRecord({self.op}, out={self.output.shape})"


class ComputeGraph:
    """
    依執行順序記錄原語的計算圖

    紀錄順序即為拓撲順序；backward() 反向重播紀錄並累加梯度，結束後清空。
    不可跨執行緒共用。
    """

    def __init__(self):
        self.records: List[GraphRecord] = []
        self.enabled = True

    def record(self, op: str, output: 'Tensor', inputs: Tuple['Tensor', ...],
               backward: Callable) -> None:
        self.records.append(GraphRecord(op, output, inputs, backward))

    def clear(self) -> None:
        self.records = []

    def ops(self) -> List[str]:
        return [r.op for r in self.records]

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: 'Tensor') -> None:
        if loss.data.ndim != 0:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ContractError("loss does not depend on any tensor with requires_grad=True")

        loss._accumulate(np.ones_like(loss.data))
        for rec in reversed(self.records):
            g = rec.output.grad
            if g is None:
                continue
            grads = rec.backward(g)
            for t, gi in zip(rec.inputs, grads):
                if gi is not None and t.requires_grad:
                    t._accumulate(gi)

        logger.debug(f"反向傳播完成，共重播 {len(self.records)} 筆原語")
        self.clear()


_local = threading.local()


def get_default_graph() -> ComputeGraph:
    """目前執行緒的計算圖"""
    graph = getattr(_local, 'graph', None)
    if graph is None:
        graph = ComputeGraph()
        _local.graph = graph
    return graph


@contextmanager
def no_grad():
    """暫停記錄 (推論、探測用)"""
    graph = get_default_graph()
    previous = graph.enabled
    graph.enabled = False
    try:
        yield
    finally:
        graph.enabled = previous


class Tensor:
    """float64 稠密張量，可選擇追蹤梯度"""

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> 'Tensor':
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    # 基本屬性
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> 'Tensor':
        return Tensor._wrap(self.data, False)

    def _accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match tensor shape {self.data.shape}")
        self.grad = g.copy() if self.grad is None else self.grad + g

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # 運算子
    def __add__(self, other: ArrayLike) -> 'Tensor':
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> 'Tensor':
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> 'Tensor':
        return add(self, neg(other))

    def __rsub__(self, other: ArrayLike) -> 'Tensor':
        return add(other, neg(self))

    def __mul__(self, other: ArrayLike) -> 'Tensor':
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> 'Tensor':
        return mul(other, self)

    def __neg__(self) -> 'Tensor':
        return neg(self)

    def __truediv__(self, other: ArrayLike) -> 'Tensor':
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __matmul__(self, other: ArrayLike) -> 'Tensor':
        return matmul(self, other)

    def __getitem__(self, index) -> 'Tensor':
        return slice_(self, index)

    # 方法形式
    def sum(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> 'Tensor':
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self) -> 'Tensor':
        return exp(self)

    def log(self) -> 'Tensor':
        return log(self)

    def sqrt(self) -> 'Tensor':
        return sqrt(self)

    def softmax(self) -> 'Tensor':
        return softmax_rows(self)


def as_tensor(value: ArrayLike) -> Tensor:
    """將常數包裝為不追蹤梯度的張量"""
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.asarray(value, dtype=np.float64), False)


def _result(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...],
            backward_fn: Callable[[np.ndarray], Tuple]) -> Tensor:
    graph = get_default_graph()
    requires = graph.enabled and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires)
    if requires:
        graph.record(op, out, inputs, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """把廣播後的梯度加總回原始形狀"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} cannot be broadcast") from None


# ---------------------------------------------------------------------------
# 原語
# ---------------------------------------------------------------------------

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """矩陣乘積 (前導維度視為批次)：dA = dC·Bᵀ, dB = Aᵀ·dC"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ: {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch dimensions differ: {a.shape} x {b.shape}") from None

    out = np.matmul(a.data, b.data)

    def backward_fn(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _result('matmul', out, (a, b), backward_fn)


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('add', a, b)
    out = a.data + b.data

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result('add', out, (a, b), backward_fn)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape('mul', a, b)
    out = a.data * b.data

    def backward_fn(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result('mul', out, (a, b), backward_fn)


def softmax_rows(x: ArrayLike) -> Tensor:
    """
    沿最後一軸的 softmax (減去最大值以穩定數值)

    NaN 輸入會傳遞為 NaN 輸出。
    """
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError(f"softmax_rows: last dimension must be >= 1, got shape {x.shape}")
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=-1, keepdims=True)

    def backward_fn(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

    return _result('softmax', y, (x,), backward_fn)


def layernorm(x: ArrayLike, eps: float = 1e-5) -> Tensor:
    """沿最後一軸標準化 (不含仿射參數，gamma/beta 由 mul/add 組合)"""
    x = as_tensor(x)
    mu = np.mean(x.data, axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd

    def backward_fn(g):
        g_mean = np.mean(g, axis=-1, keepdims=True)
        gx_mean = np.mean(g * xhat, axis=-1, keepdims=True)
        return (rstd * (g - g_mean - xhat * gx_mean),)

    return _result('layernorm', xhat, (x,), backward_fn)


def gelu(x: ArrayLike) -> Tensor:
    """GELU (tanh 近似)"""
    x = as_tensor(x)
    u = GELU_C * (x.data + GELU_A * x.data ** 3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def backward_fn(g):
        du = GELU_C * (1.0 + 3.0 * GELU_A * x.data ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du),)

    return _result('gelu', out, (x,), backward_fn)


def exp(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def backward_fn(g):
        return (g * out,)

    return _result('exp', out, (x,), backward_fn)


def log(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.log(x.data)

    def backward_fn(g):
        return (g / x.data,)

    return _result('log', out, (x,), backward_fn)


def _normalize_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    out = np.sum(x.data, axis=axes, keepdims=keepdims)

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result('sum', np.asarray(out, dtype=np.float64), (x,), backward_fn)


def mean(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    if count == 0:
        raise DimensionError(f"mean over empty axes of shape {x.shape}")
    out = np.mean(x.data, axis=axes, keepdims=keepdims)

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _result('mean', np.asarray(out, dtype=np.float64), (x,), backward_fn)


def reshape(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None

    def backward_fn(g):
        return (g.reshape(x.shape),)

    return _result('reshape', out, (x,), backward_fn)


def transpose(x: ArrayLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: {axes} is not a permutation for shape {x.shape}")
    inverse = tuple(np.argsort([a % x.ndim for a in axes]))
    out = np.transpose(x.data, axes)

    def backward_fn(g):
        return (np.transpose(g, inverse),)

    return _result('transpose', out, (x,), backward_fn)


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result('concat', out, tensors, backward_fn)


def slice_(x: ArrayLike, index) -> Tensor:
    """基本切片 (整數、slice、Ellipsis、None)"""
    x = as_tensor(x)
    out = np.array(x.data[index], dtype=np.float64)

    def backward_fn(g):
        full = np.zeros_like(x.data)
        full[index] += g
        return (full,)

    return _result('slice', out, (x,), backward_fn)


def gather(x: ArrayLike, indices: Sequence[int], axis: int = 0) -> Tensor:
    """沿指定軸依整數索引取值 (索引可重複)"""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    axis = axis % x.ndim
    if idx.size and (idx.min() < -x.shape[axis] or idx.max() >= x.shape[axis]):
        raise DimensionError(f"gather: index out of range for axis {axis} of shape {x.shape}")
    out = np.take(x.data, idx, axis=axis)

    def backward_fn(g):
        full = np.zeros_like(x.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (full,)

    return _result('gather', out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# 由原語組合的運算
# ---------------------------------------------------------------------------

def neg(x: ArrayLike) -> Tensor:
    return mul(x, -1.0)


def reciprocal(x: ArrayLike) -> Tensor:
    """1/x，僅適用於正值 (exp(-log x))"""
    return exp(neg(log(x)))


def sqrt(x: ArrayLike) -> Tensor:
    """√x，僅適用於正值"""
    return exp(mul(log(x), 0.5))


def log_softmax_rows(x: ArrayLike) -> Tensor:
    """沿最後一軸的 log-softmax：x - c - log Σ exp(x - c)，c 為常數列最大值"""
    x = as_tensor(x)
    c = np.max(x.data, axis=-1, keepdims=True)
    shifted = add(x, -c)
    return add(shifted, neg(log(sum_(exp(shifted), axis=-1, keepdims=True))))


def l2_normalize_rows(x: ArrayLike, eps: float = 1e-12) -> Tensor:
    """
    沿最後一軸做 L2 正規化

    範數小於 eps 的列先加上 eps·e₀ 再正規化，因此零向量輸出 e₀ (範數恆為 1)。
    """
    x = as_tensor(x)
    if x.ndim == 1:
        return reshape(l2_normalize_rows(reshape(x, (1, -1)), eps), x.shape)
    norms = np.sqrt(np.sum(x.data * x.data, axis=-1, keepdims=True))
    floor = np.zeros(x.shape, dtype=np.float64)
    small = norms[..., 0] < eps
    if np.any(small):
        floor[small, 0] = eps
        x = add(x, floor)
    sq = sum_(mul(x, x), axis=-1, keepdims=True)
    return mul(x, exp(mul(log(sq), -0.5)))


def backward(loss: Tensor) -> None:
    """對純量損失做反向傳播，填入所有 requires_grad 張量的 grad 並清空計算圖"""
    get_default_graph().backward(loss)


def zero_grads(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()


if __name__ == "__main__":
    # 簡單示範
    a = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True, name='a')
    b = Tensor([[1.0], [1.0]], requires_grad=True, name='b')
    loss = sum_(matmul(a, b))
    backward(loss)
    print(f"loss = {loss.item()}, dA = {a.grad.tolist()}, dB = {b.grad.tolist()}")
