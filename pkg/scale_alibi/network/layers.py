#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
基本網路層
Basic Network Layers

Module 基底 (具名參數樹)、Linear、LayerNorm 與 GELU MLP
"""

import logging
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from numeric.tensor import Tensor, gelu, layernorm
from utils.common import DimensionError, FormatError

# 設置日誌
logger = logging.getLogger(__name__)


class Module:
    """
    參數容器

    參數與子模組依註冊順序保存；named_parameters() 產生以點分隔的完整名稱
    (例如 encoder_lores.blocks.0.attn.wq.weight)，同時作為檢查點鍵與梯度檢查群組。
    """

    def __init__(self):
        self._params: 'OrderedDict[str, Tensor]' = OrderedDict()
        self._children: 'OrderedDict[str, Module]' = OrderedDict()

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        tensor = Tensor(value, requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def add_module(self, name: str, module: 'Module') -> 'Module':
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix: str = '') -> None:
        """把完整名稱寫回每個參數張量 (優化器狀態以此為鍵)"""
        for name, p in self.named_parameters(prefix):
            p.name = name

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> 'OrderedDict[str, np.ndarray]':
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise FormatError(f"state mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"parameter {name}: expected {p.shape}, got {value.shape}")
            p.data = value.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear(Module):
    """y = x W + b，權重形狀 (in, out)"""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = self.add_param('weight', xavier_uniform(rng, in_dim, out_dim))
        self.bias = self.add_param('bias', np.zeros(out_dim)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"linear: expected last dim {self.in_dim}, got shape {x.shape}")
        y = x @ self.weight
        if self.bias is not None:
            y = y + self.bias
        return y


class LayerNorm(Module):
    """最後一軸的層正規化，含可學習的縮放與平移"""

    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = self.add_param('gamma', np.ones(dim))
        self.beta = self.add_param('beta', np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return layernorm(x, self.eps) * self.gamma + self.beta


class MLP(Module):
    """Linear → GELU → Linear"""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator,
                 out_dim: Optional[int] = None):
        super().__init__()
        self.fc1 = self.add_module('fc1', Linear(dim, hidden, rng))
        self.fc2 = self.add_module('fc2', Linear(hidden, out_dim or dim, rng))

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


def hidden_width(dim: int, mlp_ratio: float) -> int:
    return max(1, int(round(dim * mlp_ratio)))
