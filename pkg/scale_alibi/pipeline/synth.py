#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
合成三元組產生器
Synthetic Triplet Generator

以 (瓦片, 類別, 種子) 決定的帶限隨機場產生低解析度光學影像；
高解析度 = 雙三次上採樣 + 依 Y+1 子瓦片播種的高頻細節；
雷達 = 光學結構的非線性轉換 + 斑點雜訊，再經 8 位元打包。
"""

import logging
from typing import Iterator, List, Optional, Sequence

import numpy as np
from scipy import ndimage

from config import DATASET_CONFIG
from pipeline.radar import pack_radar, unpack_radar
from pipeline.tiles import MAX_ZOOM, TileId, lonlat_to_tile, tile_children
from pipeline.triplet import AlignedTriplet
from utils.common import ContractError, DimensionError, step_rng

# 設置日誌
logger = logging.getLogger(__name__)

# 隨機流編號
STREAM_FIELD = 11
STREAM_DETAIL = 12
STREAM_SPECKLE = 13

DETAIL_AMPLITUDE = 0.05
SPECKLE_LOOKS = 4.0


def class_spectrum(size: int, class_id: int) -> np.ndarray:
    """
    類別相關的頻譜權重：環狀峰值頻率與方向性隨類別改變

    Returns:
        (size, size) 的非負權重，對應 fft2 的頻率排列
    """
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    radius = np.hypot(fx, fy)
    angle = np.arctan2(fy, fx)
    peak = 0.05 + 0.06 * (class_id % 4)
    theta = 0.7 * class_id
    ring = np.exp(-((radius - peak) ** 2) / (2.0 * 0.03 ** 2))
    orientation = 1.0 + 0.8 * np.cos(2.0 * (angle - theta))
    weights = ring * orientation
    weights[0, 0] = 0.0
    return weights


def band_limited_field(rng: np.random.Generator, size: int, class_id: int) -> np.ndarray:
    """白雜訊經頻域濾波後標準化為平均 0、標準差 1"""
    noise = rng.standard_normal((size, size))
    field = np.real(np.fft.ifft2(np.fft.fft2(noise) * class_spectrum(size, class_id)))
    std = field.std()
    return (field - field.mean()) / (std if std > 0 else 1.0)


def class_tint(class_id: int) -> np.ndarray:
    k = float(class_id)
    return 0.08 * np.cos(np.array([k, k + 2.1, k + 4.2]))


def make_lores(rng: np.random.Generator, size: int, class_id: int) -> np.ndarray:
    field = band_limited_field(rng, size, class_id)
    gains = np.array([1.0, 0.8, 0.6])[:, None, None]
    lores = 0.5 + class_tint(class_id)[:, None, None] + 0.15 * gains * field[None]
    return np.clip(lores, 0.0, 1.0)


def highpass_detail(rng: np.random.Generator, size: int) -> np.ndarray:
    """白雜訊減去其高斯平滑 (只留高頻)，3×size×size"""
    noise = rng.standard_normal((3, size, size))
    return noise - ndimage.gaussian_filter(noise, sigma=(0, 1.0, 1.0))


def make_hires(lores: np.ndarray, tile: TileId, seed: int) -> np.ndarray:
    """雙三次上採樣 + 四個子瓦片各自播種的細節"""
    size = lores.shape[-1]
    up = ndimage.zoom(lores, (1, 2, 2), order=3, grid_mode=True, mode='mirror')
    if tile.z < MAX_ZOOM:
        children = tile_children(tile)
    else:
        children = [tile] * 4
    detail = np.zeros_like(up)
    for k, child in enumerate(children):
        r, c = divmod(k, 2)
        rng = step_rng(seed, STREAM_DETAIL, child.z, child.x, child.y, k)
        detail[:, r * size:(r + 1) * size, c * size:(c + 1) * size] = highpass_detail(rng, size)
    return np.clip(up + DETAIL_AMPLITUDE * detail, 0.0, 1.0)


def make_radar(rng: np.random.Generator, lores: np.ndarray) -> np.ndarray:
    """VV/VH 取自亮度的非線性轉換並乘上 gamma 斑點，打包後換回 [0, 1]"""
    lum = lores.mean(axis=0)
    vv = 150.0 + 600.0 * lum ** 2
    vh = 50.0 + 250.0 * np.sqrt(lum)
    speckle = rng.gamma(SPECKLE_LOOKS, 1.0 / SPECKLE_LOOKS, size=(2,) + lum.shape)
    return unpack_radar(pack_radar(vv * speckle[0], vh * speckle[1]))


def synth_triplet(tile: TileId, class_id: int, seed: int, size: int = 32) -> AlignedTriplet:
    """
    產生一個對齊三元組，為 (tile, class_id, seed, size) 的純函數

    Args:
        tile: 瓦片 (Y 層)
        class_id: 合成類別 (決定頻譜與色調)
        seed: 資料集種子
        size: 低解析度邊長 S

    Returns:
        radar 2×S×S、lores 3×S×S、hires 3×2S×2S 的 float32 三元組
    """
    if size < 4:
        raise ContractError(f"sample size must be >= 4, got {size}")
    if class_id < 0:
        raise ContractError(f"class_id must be non-negative, got {class_id}")
    rng = step_rng(seed, STREAM_FIELD, tile.z, tile.x, tile.y, class_id)
    lores = make_lores(rng, size, class_id)
    hires = make_hires(lores, tile, seed)
    radar = make_radar(step_rng(seed, STREAM_SPECKLE, tile.z, tile.x, tile.y), lores)
    return AlignedTriplet(tile, int(class_id), radar.astype(np.float32),
                          lores.astype(np.float32), hires.astype(np.float32))


def synth_dataset(tiles: Sequence[TileId], classes: int, seed: int, size: int = 32,
                  labels: Optional[Sequence[int]] = None) -> Iterator[AlignedTriplet]:
    """依序產生資料集；未指定標籤時各類別數量均衡，順序由 seed 打亂"""
    if classes < 1:
        raise ContractError(f"classes must be >= 1, got {classes}")
    if labels is None:
        labels = step_rng(seed, 0).permutation(np.arange(len(tiles)) % classes)
    for tile, label in zip(tiles, labels):
        yield synth_triplet(tile, int(label), seed, size)


def resize_raster(image: np.ndarray, size: int) -> np.ndarray:
    """C×H×W 影像雙三次縮放到 C×size×size"""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise DimensionError(f"resize_raster expects C x H x W, got {image.shape}")
    h, w = image.shape[-2:]
    if (h, w) == (size, size):
        return image.copy()
    out = ndimage.zoom(image, (1, size / h, size / w), order=3, grid_mode=True, mode='mirror')
    if out.shape[-2:] != (size, size):
        raise DimensionError(f"resize produced {out.shape}, expected {size}x{size}")
    return out


def sample_tiles(count: int, zoom: int, seed: int, bbox=None) -> List[TileId]:
    """在範圍內隨機抽取不重複瓦片 (依 seed 決定)"""
    west, south, east, north = bbox or DATASET_CONFIG['coverage_bbox']
    corner_a = lonlat_to_tile(west, north, zoom)
    corner_b = lonlat_to_tile(east, south, zoom)
    span_x = corner_b.x - corner_a.x + 1
    span_y = corner_b.y - corner_a.y + 1
    total = span_x * span_y
    if count > total:
        raise ContractError(f"cannot draw {count} distinct tiles from {total} at zoom {zoom}")
    picks = step_rng(seed, 1).choice(total, size=count, replace=False) if count else []
    return [TileId(zoom, corner_a.x + int(p) % span_x, corner_a.y + int(p) // span_x) for p in picks]
