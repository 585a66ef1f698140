#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
優化器模組
Optimizer Module

Adam (含偏差修正) 以及固定學習率 + 線性暖身排程
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from numeric.tensor import Tensor
from utils.common import ContractError

# 設置日誌
logger = logging.getLogger(__name__)


class AdamState:
    """Adam 狀態：步數 t 與每個參數的一階、二階動差"""

    def __init__(self):
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def __repr__(self) -> str:
        return f"AdamState(t={self.t}, params={len(self.m)})"


def _key(p: Tensor, i: int) -> str:
    return p.name if p.name else f"param_{i}"


def adam_step(params: Sequence[Tensor], state: AdamState, lr: float,
              betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """
    以 Adam 規則更新參數，狀態前進一步

    Args:
        params: 需更新的參數 (皆須已有梯度)
        state: 優化器狀態
        lr: 學習率
        betas: (beta1, beta2)
        eps: 分母穩定項
    """
    missing = [_key(p, i) for i, p in enumerate(params) if p.grad is None]
    if missing:
        raise ContractError(f"adam_step: parameters without gradient: {', '.join(missing[:5])}")

    beta1, beta2 = betas
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t

    for i, p in enumerate(params):
        key = _key(p, i)
        g = p.grad
        m = state.m.get(key)
        v = state.v.get(key)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[key] = m
        state.v[key] = v
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


class Adam:
    """Adam 優化器 (持有參數列表與狀態)"""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 warmup_steps: int = 0):
        self.params: List[Tensor] = list(params)
        self.base_lr = lr
        self.betas = betas
        self.eps = eps
        self.warmup_steps = warmup_steps
        self.state = AdamState()

    def current_lr(self, step: Optional[int] = None) -> float:
        """固定學習率 + 線性暖身"""
        step = self.state.t if step is None else step
        if self.warmup_steps > 0 and step < self.warmup_steps:
            return self.base_lr * (step + 1) / self.warmup_steps
        return self.base_lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> float:
        lr = self.current_lr()
        adam_step(self.params, self.state, lr, self.betas, self.eps)
        return lr
