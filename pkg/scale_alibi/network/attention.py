#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
偏置多頭注意力
Multi-Head Attention with Additive Scale-ALiBi Bias

scores = scale(d)·Q Kᵀ + bias，softmax 後乘 V，各頭串接後投影
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from geometry.bias import BiasTensor
from network.layers import Linear, Module
from numeric.tensor import Tensor, as_tensor, matmul, softmax_rows
from utils.common import ConfigError, DimensionError

# 設置日誌
logger = logging.getLogger(__name__)

BiasLike = Union[BiasTensor, np.ndarray, None]


@dataclass(frozen=True)
class AttentionConfig:
    heads: int
    model_dim: int
    scale_mode: str = 'inv_sqrt_d'
    kv_dim: Optional[int] = None

    def __post_init__(self):
        if self.heads < 1 or self.model_dim < 1:
            raise ConfigError(f"attention needs heads >= 1 and model_dim >= 1, got {self.heads}, {self.model_dim}")
        if self.model_dim % self.heads:
            raise ConfigError(f"model_dim {self.model_dim} is not divisible by heads {self.heads}")
        if self.scale_mode not in ('inv_sqrt_d', 'sqrt_d_literal'):
            raise ConfigError(f"unknown scale_mode {self.scale_mode!r}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    @property
    def source_dim(self) -> int:
        return self.kv_dim or self.model_dim

    @property
    def scale(self) -> float:
        return attention_scale(self.head_dim, self.scale_mode)


def attention_scale(head_dim: int, scale_mode: str = 'inv_sqrt_d') -> float:
    """d^(-1/2)；sqrt_d_literal 模式為 d^(+1/2)"""
    if scale_mode == 'sqrt_d_literal':
        return float(np.sqrt(head_dim))
    return float(1.0 / np.sqrt(head_dim))


def bias_array(bias: BiasLike) -> Optional[np.ndarray]:
    if bias is None:
        return None
    if isinstance(bias, BiasTensor):
        return bias.values
    return np.asarray(bias, dtype=np.float64)


def _split_heads(x: Tensor, heads: int, transpose_keys: bool = False) -> Tensor:
    """(..., L, D) → (..., H, L, d)，或鍵用的 (..., H, d, L)"""
    lead = x.shape[:-2]
    length, dim = x.shape[-2:]
    n = len(lead)
    x = x.reshape(lead + (length, heads, dim // heads))
    tail = (n + 1, n + 2, n) if transpose_keys else (n + 1, n, n + 2)
    return x.transpose(tuple(range(n)) + tail)


def _merge_heads(x: Tensor) -> Tensor:
    """(..., H, L, d) → (..., L, H·d)"""
    lead = x.shape[:-3]
    heads, length, d = x.shape[-3:]
    n = len(lead)
    x = x.transpose(tuple(range(n)) + (n + 1, n, n + 2))
    return x.reshape(lead + (length, heads * d))


def scaled_dot_product(q: Tensor, k: Tensor, v: Tensor, bias: Optional[np.ndarray],
                       scale: float) -> Tuple[Tensor, Tensor]:
    """
    每頭的注意力核心

    Args:
        q: (..., H, Lq, d)
        k: (..., H, d, Lk) (已轉置)
        v: (..., H, Lk, d)
        bias: (H, Lq, Lk) 或 None
        scale: 分數縮放

    Returns:
        (輸出 (..., H, Lq, d), 機率 (..., H, Lq, Lk))
    """
    scores = matmul(q, k) * scale
    if bias is not None:
        scores = scores + bias
    probs = softmax_rows(scores)
    return matmul(probs, v), probs


class BiasedAttention(Module):
    """
    偏置多頭注意力 (自注意力與交叉注意力共用)

    鍵投影沒有偏置項：對每列加上同一向量不會改變 softmax，其梯度恆為零。
    """

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.wq = self.add_module('wq', Linear(cfg.model_dim, cfg.model_dim, rng))
        self.wk = self.add_module('wk', Linear(cfg.source_dim, cfg.model_dim, rng, bias=False))
        self.wv = self.add_module('wv', Linear(cfg.source_dim, cfg.model_dim, rng))
        self.wo = self.add_module('wo', Linear(cfg.model_dim, cfg.model_dim, rng))
        self.last_probs: Optional[np.ndarray] = None

    def forward(self, q_stream: Tensor, kv_stream: Tensor, bias: BiasLike = None) -> Tensor:
        return biased_attention(q_stream, kv_stream, bias, self.cfg, self)


def biased_attention(q_stream: Tensor, kv_stream: Tensor, bias: BiasLike,
                     cfg: AttentionConfig, weights: BiasedAttention) -> Tensor:
    """
    以 weights 的投影計算偏置多頭注意力

    Args:
        q_stream: 查詢 token (..., Lq, D)
        kv_stream: 鍵/值 token (..., Lk, D_kv)
        bias: (H, Lq, Lk) 的加法偏置，None 等同零偏置
        cfg: 注意力配置
        weights: 持有 wq/wk/wv/wo 的模組

    Raises:
        DimensionError: 形狀不相符
    """
    q_stream, kv_stream = as_tensor(q_stream), as_tensor(kv_stream)
    if q_stream.ndim < 2 or kv_stream.ndim < 2:
        raise DimensionError(f"attention streams must be at least 2-D, got {q_stream.shape} and {kv_stream.shape}")
    if q_stream.shape[-1] != cfg.model_dim:
        raise DimensionError(f"query stream width {q_stream.shape[-1]} != model_dim {cfg.model_dim}")
    if kv_stream.shape[-1] != cfg.source_dim:
        raise DimensionError(f"key/value stream width {kv_stream.shape[-1]} != {cfg.source_dim}")
    if q_stream.shape[:-2] != kv_stream.shape[:-2]:
        raise DimensionError(f"batch shapes differ: {q_stream.shape} vs {kv_stream.shape}")

    lq, lk = q_stream.shape[-2], kv_stream.shape[-2]
    b = bias_array(bias)
    if b is not None and b.shape != (cfg.heads, lq, lk):
        raise DimensionError(f"bias shape {b.shape} does not match (heads, Lq, Lk) = {(cfg.heads, lq, lk)}")

    q = _split_heads(weights.wq(q_stream), cfg.heads)
    k = _split_heads(weights.wk(kv_stream), cfg.heads, transpose_keys=True)
    v = _split_heads(weights.wv(kv_stream), cfg.heads)

    out, probs = scaled_dot_product(q, k, v, b, cfg.scale)
    weights.last_probs = probs.data
    return weights.wo(_merge_heads(out))
