#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
損失函數模組
Loss Functions Module

三模態對比損失 (對稱 InfoNCE)、遮罩多模態重建損失與兩者之和
"""

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from network.decoder import FusedLayout
from network.encoders import TokenStream
from network.layers import Linear
from numeric.tensor import Tensor, as_tensor, l2_normalize_rows, log_softmax_rows, softmax_rows
from utils.common import ContractError, DimensionError

# 設置日誌
logger = logging.getLogger(__name__)

UNIT_NORM_TOLERANCE = 1e-9
STD_FLOOR = 1e-6


@dataclass
class ContrastiveBatch:
    """
    各模態池化並正規化後的表示

    Attributes:
        z: 模態 → (N, P) 張量，每列單位範數
        temperature: σ > 0
    """

    z: Dict[str, Tensor]
    temperature: float

    def __post_init__(self):
        if not (self.temperature > 0):
            raise ContractError(f"temperature must be positive, got {self.temperature}")
        if len(self.z) < 2:
            raise ContractError(f"contrastive loss needs at least two modalities, got {list(self.z)}")
        shapes = {name: t.shape for name, t in self.z.items()}
        if len(set(shapes.values())) != 1:
            raise DimensionError(f"modalities disagree on (N, P): {shapes}")
        n, _ = next(iter(shapes.values()))
        if n == 0:
            raise ContractError("contrastive loss needs N >= 1")
        for name, t in self.z.items():
            norms = np.linalg.norm(t.data, axis=-1)
            if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOLERANCE):
                raise ContractError(f"representations of {name} are not unit-norm (max deviation "
                                    f"{np.max(np.abs(norms - 1.0)):.3e})")

    @property
    def batch_size(self) -> int:
        return next(iter(self.z.values())).shape[0]

    @property
    def pairs(self) -> List[Tuple[str, str]]:
        return list(combinations(self.z, 2))


def _diagonal_mean(matrix: Tensor) -> Tensor:
    n = matrix.shape[0]
    return (matrix * np.eye(n)).sum() * (1.0 / n)


def contrastive_loss(batch: ContrastiveBatch) -> Tensor:
    """
    對稱 InfoNCE，對所有模態兩兩組合取平均

    每組 (a, b)：logits = z_a z_bᵀ / σ；兩個方向的 −mean(log softmax 對角) 取平均。
    """
    terms = []
    for a, b in batch.pairs:
        logits = (batch.z[a] @ batch.z[b].transpose()) * (1.0 / batch.temperature)
        forward = _diagonal_mean(log_softmax_rows(logits))
        reverse = _diagonal_mean(log_softmax_rows(logits.transpose()))
        terms.append((forward + reverse) * -0.5)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def literal_infonce(batch: ContrastiveBatch) -> Tensor:
    """
    依字面公式計算：−1/(|C|²N) Σ_pairs Σ_i exp(s_ii/σ) / Σ_j exp(s_jj/σ)

    分母只包含正樣本對，因此每組的比值總和恆為 1，結果與相似度無關；
    僅供評估比較，不可用於訓練。
    """
    pairs = batch.pairs
    n = batch.batch_size
    total = None
    for a, b in pairs:
        positives = (batch.z[a] * batch.z[b]).sum(axis=-1) * (1.0 / batch.temperature)
        ratio_sum = softmax_rows(positives.reshape(1, n)).sum()
        total = ratio_sum if total is None else total + ratio_sum
    return total * (-1.0 / (len(pairs) ** 2 * n))


def normalize_patches(patches: np.ndarray, std_floor: float = STD_FLOOR) -> np.ndarray:
    """每塊標準化為平均 0、標準差 1 (標準差下限 std_floor)"""
    patches = np.asarray(patches, dtype=np.float64)
    mean = patches.mean(axis=-1, keepdims=True)
    std = patches.std(axis=-1, keepdims=True)
    return (patches - mean) / np.maximum(std, std_floor)


@dataclass
class ReconBatch:
    """
    重建損失的輸入

    Attributes:
        predictions: 解碼器輸出 (N, L, N_ch·p²)
        targets: 模式 → 標準化後的分塊目標 (N, L, C_mode·p²)
        mask: 布林遮罩 (N, L)，True = 被遮住
        layout: 融合通道配置
        error: 'mse' 或 'mae'
    """

    predictions: Tensor
    targets: Dict[str, np.ndarray]
    mask: np.ndarray
    layout: FusedLayout
    error: str = 'mse'
    masked_count: np.ndarray = field(init=False)

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.predictions.ndim != 3:
            raise DimensionError(f"predictions must be (N, L, W), got {self.predictions.shape}")
        n, length, width = self.predictions.shape
        if width != self.layout.width:
            raise DimensionError(f"prediction width {width} != fused layout width {self.layout.width}")
        if self.mask.shape != (n, length):
            raise DimensionError(f"mask shape {self.mask.shape} != {(n, length)}")
        if set(self.targets) != set(self.layout.modes):
            raise ContractError(f"targets {sorted(self.targets)} do not match modes {self.layout.modes}")
        for mode, sl in self.layout.slices.items():
            expected = (n, length, sl.stop - sl.start)
            if self.targets[mode].shape != expected:
                raise DimensionError(f"{mode} target shape {self.targets[mode].shape} != {expected}")
        if self.error not in ('mse', 'mae'):
            raise ContractError(f"unknown reconstruction error {self.error!r}")
        self.masked_count = self.mask.sum(axis=1)
        if n == 0 or np.any(self.masked_count < 1):
            raise ContractError("every sample needs at least one masked patch")


def reconstruction_loss(batch: ReconBatch) -> Tensor:
    """
    (1/N) Σ_i Σ_mode (1/M_i) Σ_{j 被遮住} err(I_mode[j], 預測[j])

    err 為通道平均的平方誤差 (mse) 或絕對誤差 (mae)；未遮住的位置權重為 0。
    """
    n = batch.predictions.shape[0]
    weights = batch.mask / batch.masked_count[:, None].astype(np.float64)
    total = None
    for mode, sl in batch.layout.slices.items():
        diff = batch.predictions[..., sl] - batch.targets[mode]
        if batch.error == 'mse':
            err = diff * diff
        else:
            err = diff * np.sign(diff.data)
        term = (err.mean(axis=-1) * weights).sum()
        total = term if total is None else total + term
    return total * (1.0 / n)


def total_loss(con: Tensor, recon: Tensor) -> Tensor:
    """L = L_Con + L_Recon"""
    con, recon = as_tensor(con), as_tensor(recon)
    for name, value in (('contrastive', con), ('reconstruction', recon)):
        if value.ndim != 0:
            raise ContractError(f"{name} loss must be a scalar, got shape {value.shape}")
        if not np.isfinite(value.data):
            raise ContractError(f"{name} loss is not finite: {float(value.data)}")
    return con + recon


def pool_and_normalize(stream: Union[TokenStream, Tensor], proj: Optional[Linear] = None) -> Tensor:
    """
    token 平均池化 → 選用線性投影 → L2 正規化

    池化後為零向量時依 l2_normalize_rows 的 eps·e₀ 規則輸出 e₀。
    """
    tokens = stream.tokens if isinstance(stream, TokenStream) else as_tensor(stream)
    if tokens.ndim < 2 or tokens.shape[-2] == 0:
        raise ContractError(f"cannot pool an empty stream of shape {tokens.shape}")
    pooled = tokens.mean(axis=-2)
    if proj is not None:
        pooled = proj(pooled)
    return l2_normalize_rows(pooled)
