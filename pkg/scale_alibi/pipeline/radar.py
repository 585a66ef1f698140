#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
雷達波段打包
Radar Band Packing

VV → 綠色通道、VH → 藍色通道，紅色為空；乘以 256/1000 後量化為 8 位元
"""

import logging

import numpy as np

from utils.common import ContractError, DimensionError

# 設置日誌
logger = logging.getLogger(__name__)

RADAR_SCALE = 256.0 / 1000.0


def quantize(band: np.ndarray) -> np.ndarray:
    """round-half-up(x·0.256) 後夾在 0..255"""
    scaled = np.floor(np.asarray(band, dtype=np.float64) * RADAR_SCALE + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def pack_radar(vv: np.ndarray, vh: np.ndarray) -> np.ndarray:
    """
    將 VV/VH 打包為 3×H×W 的 8 位元影像

    Raises:
        DimensionError: 兩個波段尺寸不同
        ContractError: 出現負值或非有限值
    """
    vv = np.asarray(vv, dtype=np.float64)
    vh = np.asarray(vh, dtype=np.float64)
    if vv.shape != vh.shape or vv.ndim != 2:
        raise DimensionError(f"pack_radar: VV {vv.shape} and VH {vh.shape} must be equal 2-D rasters")
    if not (np.all(np.isfinite(vv)) and np.all(np.isfinite(vh))):
        raise ContractError("pack_radar: non-finite backscatter values")
    if np.any(vv < 0) or np.any(vh < 0):
        raise ContractError("pack_radar: backscatter must be non-negative")
    packed = np.zeros((3,) + vv.shape, dtype=np.uint8)
    packed[1] = quantize(vv)
    packed[2] = quantize(vh)
    return packed


def unpack_radar(packed: np.ndarray) -> np.ndarray:
    """3×H×W 8 位元影像 → 2×H×W 的 [0, 1] 浮點 (綠/255, 藍/255)"""
    packed = np.asarray(packed)
    if packed.ndim != 3 or packed.shape[0] != 3:
        raise DimensionError(f"unpack_radar expects a 3xHxW raster, got {packed.shape}")
    return (packed[1:3].astype(np.float32) / np.float32(255.0)).astype(np.float32)


def dequantize(level: np.ndarray) -> np.ndarray:
    """8 位元值換回後向散射尺度 (量化步的中心)"""
    return np.asarray(level, dtype=np.float64) / RADAR_SCALE
