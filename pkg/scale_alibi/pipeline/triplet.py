#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
對齊三元組
Aligned Triplet

同一地面瓦片的雷達、低解析度光學與 2× 高解析度光學影像
"""

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from pipeline.tiles import TileId
from utils.common import ContractError, GeometryError


@dataclass
class AlignedTriplet:
    """
    Attributes:
        tile: 瓦片
        class_id: 合成類別
        radar: C_r×S×S
        lores: 3×S×S，值域 [0, 1]
        hires: 3×2S×2S，值域 [0, 1]
    """

    tile: TileId
    class_id: int
    radar: np.ndarray
    lores: np.ndarray
    hires: np.ndarray

    def __post_init__(self):
        check_alignment(self.radar, self.lores, self.hires)
        for name in ('radar', 'lores', 'hires'):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ContractError(f"triplet {self.tile}: {name} raster has non-finite values")

    @property
    def size(self) -> int:
        return self.lores.shape[-1]

    def equals(self, other: 'AlignedTriplet') -> bool:
        """位元完全相同"""
        return (self.tile == other.tile and self.class_id == other.class_id
                and all(np.array_equal(getattr(self, n), getattr(other, n)) and
                        getattr(self, n).dtype == getattr(other, n).dtype
                        for n in ('radar', 'lores', 'hires')))


def check_alignment(radar: np.ndarray, lores: np.ndarray, hires: np.ndarray) -> None:
    """
    檢查 (..., C, H, W) 三個影像是否覆蓋同一範圍

    Raises:
        GeometryError: 尺寸不符 (雷達與低解析度同尺寸、高解析度恰為兩倍)
    """
    if radar.ndim < 3 or lores.ndim < 3 or hires.ndim < 3:
        raise GeometryError(f"rasters must be channel-first, got {radar.shape}, {lores.shape}, {hires.shape}")
    h, w = lores.shape[-2:]
    if h != w:
        raise GeometryError(f"lores raster must be square, got {h}x{w}")
    if radar.shape[-2:] != (h, w):
        raise GeometryError(f"misaligned triplet: radar {radar.shape[-2:]} vs lores {(h, w)}")
    if hires.shape[-2:] != (2 * h, 2 * w):
        raise GeometryError(f"misaligned triplet: hires {hires.shape[-2:]} is not 2x lores {(h, w)}")
    if not (radar.shape[:-3] == lores.shape[:-3] == hires.shape[:-3]):
        raise GeometryError("triplet rasters disagree on batch layout")


@dataclass
class TripletBatch:
    """堆疊後的 float64 批次 (N, C, H, W)"""

    radar: np.ndarray
    lores: np.ndarray
    hires: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        check_alignment(self.radar, self.lores, self.hires)

    def __len__(self) -> int:
        return self.lores.shape[0]

    @classmethod
    def from_triplets(cls, triplets: Sequence[AlignedTriplet]) -> 'TripletBatch':
        if not triplets:
            raise ContractError("cannot build an empty batch")
        stack = lambda name: np.stack([getattr(t, name) for t in triplets]).astype(np.float64)
        return cls(stack('radar'), stack('lores'), stack('hires'),
                   np.array([t.class_id for t in triplets], dtype=np.int64))

    def select(self, indices: Sequence[int]) -> 'TripletBatch':
        idx = np.asarray(indices, dtype=np.int64)
        return TripletBatch(self.radar[idx], self.lores[idx], self.hires[idx], self.labels[idx])


def labels_of(triplets: Sequence[AlignedTriplet]) -> List[int]:
    return [t.class_id for t in triplets]
