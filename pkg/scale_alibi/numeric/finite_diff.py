#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
有限差分工具
Finite-Difference Helpers

中央差分數值梯度與相對誤差，用於驗證反向傳播
"""

from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from numeric.tensor import Tensor, no_grad


def select_indices(shape: Tuple[int, ...], max_entries: Optional[int],
                   rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """選出要檢查的扁平索引；數量超過 max_entries 時以 rng 抽樣"""
    size = int(np.prod(shape)) if shape else 1
    if max_entries is None or size <= max_entries:
        return np.arange(size)
    rng = rng or np.random.default_rng(0)
    return np.sort(rng.choice(size, size=max_entries, replace=False))


def numerical_grad(fn: Callable[[], float], tensor: Tensor, eps: float = 1e-6,
                   flat_indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    中央差分 (f(x+h) - f(x-h)) / 2h

    Args:
        fn: 無參數函式，回傳純量損失 (會在 no_grad 下呼叫)
        tensor: 要擾動的張量 (原地修改後還原)
        eps: 步長
        flat_indices: 只計算這些扁平索引

    Returns:
        選定索引的數值梯度 (一維)
    """
    if flat_indices is None:
        flat_indices = np.arange(tensor.size)
    view = tensor.data.reshape(-1)
    if not np.shares_memory(view, tensor.data):
        raise ValueError("tensor data must be contiguous for in-place perturbation")

    out = np.zeros(len(flat_indices), dtype=np.float64)
    with no_grad():
        for k, idx in enumerate(flat_indices):
            original = view[idx]
            view[idx] = original + eps
            f_plus = float(fn())
            view[idx] = original - eps
            f_minus = float(fn())
            view[idx] = original
            out[k] = (f_plus - f_minus) / (2.0 * eps)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """以範數計算的相對誤差 ‖a − n‖ / max(‖a‖ + ‖n‖, floor)"""
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = max(float(np.linalg.norm(analytic) + np.linalg.norm(numeric)), floor)
    return float(np.linalg.norm(analytic - numeric)) / denom
