#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Scale-ALiBi 偏置幾何模組
Scale-ALiBi Bias Geometry Module

建立同一網格內 (自注意力) 與兩個不同 GSD 網格之間 (交叉注意力) 的
線性距離偏置張量：bias[h, i, j] = -m(h) · distance(i, j) · GSD
"""

import math
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import IO, List, Optional, Tuple

import numpy as np
import pandas as pd

from numeric.tensor import Tensor, as_tensor
from utils.common import ContractError, GeometryError

# 設置日誌
logger = logging.getLogger(__name__)

FOOTPRINT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class PatchGrid:
    """
    分塊後影像的幾何

    Attributes:
        rows: 分塊列數
        cols: 分塊行數
        patch_px: 每塊邊長 (像素)
        gsd: 地面取樣距離 (每像素的物理長度)
    """

    rows: int
    cols: int
    patch_px: int
    gsd: float

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.patch_px < 1:
            raise ContractError(f"invalid patch grid {self.rows}x{self.cols} with patch_px={self.patch_px}")
        if not (self.gsd > 0 and math.isfinite(self.gsd)):
            raise ContractError(f"gsd must be positive and finite, got {self.gsd}")

    @classmethod
    def from_image(cls, height_px: int, width_px: int, patch_px: int, gsd: float) -> 'PatchGrid':
        if height_px % patch_px or width_px % patch_px:
            raise ContractError(f"image {height_px}x{width_px} is not divisible by patch size {patch_px}")
        return cls(height_px // patch_px, width_px // patch_px, patch_px, float(gsd))

    @property
    def tokens(self) -> int:
        return self.rows * self.cols

    @property
    def extent(self) -> Tuple[float, float]:
        """物理覆蓋範圍 (寬, 高)"""
        return (self.cols * self.patch_px * self.gsd, self.rows * self.patch_px * self.gsd)

    def scaled(self, factor: float) -> 'PatchGrid':
        """行列數放大 factor 倍並維持相同分塊尺寸與 GSD"""
        return PatchGrid(int(self.rows * factor), int(self.cols * factor), self.patch_px, self.gsd)


@dataclass(frozen=True)
class SlopeSchedule:
    """每個注意力頭的固定斜率 m(h)，須為正且嚴格遞減"""

    slopes: Tuple[float, ...]

    def __post_init__(self):
        if len(self.slopes) < 1:
            raise ContractError("slope schedule needs at least one head")
        if any(not (s > 0) for s in self.slopes):
            raise ContractError(f"slopes must be positive: {self.slopes}")
        if any(b >= a for a, b in zip(self.slopes, self.slopes[1:])):
            raise ContractError(f"slopes must be strictly decreasing: {self.slopes}")

    @property
    def heads(self) -> int:
        return len(self.slopes)


def slope_schedule(heads: int) -> SlopeSchedule:
    """ALiBi 幾何斜率 2^(−8(h+1)/H)"""
    if heads < 1:
        raise ContractError(f"slope_schedule: heads must be >= 1, got {heads}")
    return SlopeSchedule(tuple(2.0 ** (-8.0 * (h + 1) / heads) for h in range(heads)))


@dataclass(frozen=True)
class BiasTensor:
    """每頭的加法注意力偏置，形狀 H × Lq × Lk，所有值 ≤ 0"""

    values: np.ndarray = field(repr=False, compare=False)
    slopes: SlopeSchedule
    query_grid: PatchGrid
    key_grid: PatchGrid

    @property
    def heads(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.values.shape

    def as_tensor(self) -> Tensor:
        return as_tensor(self.values)


def patch_centers(grid: PatchGrid) -> np.ndarray:
    """
    各分塊中心的物理座標，列優先順序 (token = r·cols + c)

    Returns:
        形狀 (L, 2) 的陣列，每列為 (x, y)
    """
    return _centers(grid, grid.patch_px * grid.gsd)


def _centers(grid: PatchGrid, patch_size: float) -> np.ndarray:
    rr, cc = np.meshgrid(np.arange(grid.rows), np.arange(grid.cols), indexing='ij')
    xy = np.stack([(cc.reshape(-1) + 0.5) * patch_size, (rr.reshape(-1) + 0.5) * patch_size], axis=1)
    return xy.astype(np.float64)


def _check_footprint(query_grid: PatchGrid, key_grid: PatchGrid) -> None:
    qw, qh = query_grid.extent
    kw, kh = key_grid.extent
    for a, b in ((qw, kw), (qh, kh)):
        if abs(a - b) > FOOTPRINT_TOLERANCE * max(1.0, abs(a), abs(b)):
            raise GeometryError(
                f"grid footprints differ: query extent {qw:g}x{qh:g} vs key extent {kw:g}x{kh:g}"
            )


def _distance_table(query_grid: PatchGrid, key_grid: PatchGrid, gsd_scaling: bool) -> np.ndarray:
    """
    g(i, j)：查詢網格像素單位下的歐氏距離 (GSD 於 _build 最後才乘上)

    兩網格相同時鍵中心與查詢中心的算式完全一致，因此 cross == self。
    gsd_scaling=False 時改用查詢分塊單位的距離 (原始 2D-ALiBi / X-ALiBi)。
    """
    if gsd_scaling:
        q = _centers(query_grid, float(query_grid.patch_px))
        k = _centers(key_grid, key_grid.patch_px * (key_grid.gsd / query_grid.gsd))
    else:
        q = _centers(query_grid, 1.0)
        ratio = (key_grid.patch_px * key_grid.gsd) / (query_grid.patch_px * query_grid.gsd)
        k = _centers(key_grid, ratio)
    return np.hypot(q[:, None, 0] - k[None, :, 0], q[:, None, 1] - k[None, :, 1])


@lru_cache(maxsize=64)
def _build(query_grid: PatchGrid, key_grid: PatchGrid, slopes: SlopeSchedule,
           gsd_scaling: bool) -> BiasTensor:
    g = _distance_table(query_grid, key_grid, gsd_scaling)
    m = np.asarray(slopes.slopes, dtype=np.float64)[:, None, None]
    values = np.subtract(0.0, m * g[None, :, :])
    if gsd_scaling:
        # 最後一步乘 GSD：偏置對 GSD 精確線性
        values = values * query_grid.gsd
    values.flags.writeable = False
    logger.debug(f"建立偏置張量 {values.shape} (heads={slopes.heads})")
    return BiasTensor(values, slopes, query_grid, key_grid)


def self_bias(grid: PatchGrid, slopes: SlopeSchedule, gsd_scaling: bool = True) -> BiasTensor:
    """同一網格內的 Scale-ALiBi 偏置 (對角為 0，每頭對稱)"""
    return _build(grid, grid, slopes, gsd_scaling)


def cross_bias(query_grid: PatchGrid, key_grid: PatchGrid, slopes: SlopeSchedule,
               gsd_scaling: bool = True) -> BiasTensor:
    """
    兩個覆蓋相同物理範圍之網格間的 Scale-ALiBi 偏置

    Raises:
        GeometryError: 兩網格的物理範圍不一致
    """
    _check_footprint(query_grid, key_grid)
    return _build(query_grid, key_grid, slopes, gsd_scaling)


def contained_keys(query_grid: PatchGrid, key_grid: PatchGrid, query_token: int) -> List[int]:
    """鍵網格中完全落在某查詢分塊物理範圍內的分塊 (列優先索引)"""
    qs = query_grid.patch_px * query_grid.gsd
    ks = key_grid.patch_px * key_grid.gsd
    qr, qc = divmod(query_token, query_grid.cols)
    x0, y0, x1, y1 = qc * qs, qr * qs, (qc + 1) * qs, (qr + 1) * qs
    tol = FOOTPRINT_TOLERANCE * max(1.0, x1, y1)
    out = []
    for kr in range(key_grid.rows):
        for kc in range(key_grid.cols):
            if (kc * ks >= x0 - tol and (kc + 1) * ks <= x1 + tol
                    and kr * ks >= y0 - tol and (kr + 1) * ks <= y1 + tol):
                out.append(kr * key_grid.cols + kc)
    return out


def bias_frames(bias: BiasTensor) -> List[pd.DataFrame]:
    """每頭一個 DataFrame (列 = 查詢 token，欄 = 鍵 token)"""
    return [pd.DataFrame(np.array(bias.values[h])) for h in range(bias.heads)]


def write_bias_csv(bias: BiasTensor, out: IO[str]) -> None:
    """
    以 CSV 輸出偏置張量：每頭一個矩陣，前置 `# head=h slope=s` 標頭
    """
    for h, frame in enumerate(bias_frames(bias)):
        out.write(f"# head={h} slope={bias.slopes.slopes[h]!r}\n")
        frame.to_csv(out, header=False, index=False, float_format='%.17g', lineterminator='\n')


def read_bias_csv(path: str) -> List[np.ndarray]:
    """讀回 write_bias_csv 的輸出 (測試與檢查用)"""
    matrices: List[np.ndarray] = []
    rows: List[List[float]] = []
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith('#'):
                if rows:
                    matrices.append(np.array(rows, dtype=np.float64))
                rows = []
                continue
            rows.append([float(v) for v in line.split(',')])
    if rows:
        matrices.append(np.array(rows, dtype=np.float64))
    return matrices


if __name__ == "__main__":
    grid = PatchGrid(2, 2, 2, 1.0)
    bias = self_bias(grid, SlopeSchedule((1.0,)))
    print(bias.values[0])
