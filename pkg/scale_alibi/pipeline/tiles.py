#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Web-Mercator 瓦片計算
Web-Mercator XYZ Tile Math

經緯度 ↔ 瓦片索引、子/父瓦片、瓦片範圍與地面解析度
"""

import math
import logging
from dataclasses import dataclass
from typing import List, Tuple

from utils.common import TileRangeError

# 設置日誌
logger = logging.getLogger(__name__)

MERCATOR_LAT_LIMIT = 85.0511
MAX_ZOOM = 30
EARTH_RADIUS_M = 6378137.0


@dataclass(frozen=True, order=True)
class TileId:
    z: int
    x: int
    y: int

    def __post_init__(self):
        if self.z < 0 or self.z > MAX_ZOOM:
            raise TileRangeError(f"zoom {self.z} outside 0..{MAX_ZOOM}")
        n = 1 << self.z
        if not (0 <= self.x < n and 0 <= self.y < n):
            raise TileRangeError(f"tile ({self.x}, {self.y}) outside 0..{n - 1} at zoom {self.z}")

    def __str__(self) -> str:
        return f"{self.z}/{self.x}/{self.y}"

    def as_tuple(self) -> Tuple[int, int, int]:
        return (self.z, self.x, self.y)


def _mercator_to_lat(m: float) -> float:
    return math.degrees(math.atan(math.sinh(m)))


def lonlat_to_tile(lon: float, lat: float, z: int) -> TileId:
    """
    經緯度 → 瓦片索引 (標準 slippy-map 公式，結果夾在合法範圍內)

    Raises:
        TileRangeError: 緯度超出 Web-Mercator 範圍或經度不在 [−180, 180)
    """
    if abs(lat) > MERCATOR_LAT_LIMIT:
        raise TileRangeError(f"latitude {lat} beyond the Web-Mercator limit ±{MERCATOR_LAT_LIMIT}")
    if not (-180.0 <= lon < 180.0):
        raise TileRangeError(f"longitude {lon} outside [-180, 180)")
    if z < 0 or z > MAX_ZOOM:
        raise TileRangeError(f"zoom {z} outside 0..{MAX_ZOOM}")
    n = 1 << z
    phi = math.radians(lat)
    x = math.floor((lon + 180.0) / 360.0 * n)
    y = math.floor((1.0 - math.log(math.tan(phi) + 1.0 / math.cos(phi)) / math.pi) / 2.0 * n)
    return TileId(z, min(max(x, 0), n - 1), min(max(y, 0), n - 1))


def tile_children(t: TileId) -> List[TileId]:
    """Y+1 層的四個子瓦片 (左上、右上、左下、右下)"""
    if t.z >= MAX_ZOOM:
        raise TileRangeError(f"tile {t} has no children: zoom {t.z} is the maximum")
    z, x, y = t.z + 1, 2 * t.x, 2 * t.y
    return [TileId(z, x, y), TileId(z, x + 1, y), TileId(z, x, y + 1), TileId(z, x + 1, y + 1)]


def tile_parent(t: TileId) -> TileId:
    if t.z == 0:
        raise TileRangeError("the zoom-0 tile has no parent")
    return TileId(t.z - 1, t.x // 2, t.y // 2)


def tile_to_bbox(t: TileId) -> Tuple[float, float, float, float]:
    """瓦片範圍 (west, south, east, north)，單位度"""
    n = 1 << t.z
    west = -180.0 + 360.0 * t.x / n
    east = -180.0 + 360.0 * (t.x + 1) / n
    north = _mercator_to_lat(math.pi * (1.0 - 2.0 * t.y / n))
    south = _mercator_to_lat(math.pi * (1.0 - 2.0 * (t.y + 1) / n))
    return west, south, east, north


def tile_center(t: TileId) -> Tuple[float, float]:
    """瓦片中心 (lon, lat)，取 Mercator 平面上的中點"""
    n = 1 << t.z
    lon = -180.0 + 360.0 * (t.x + 0.5) / n
    lat = _mercator_to_lat(math.pi * (1.0 - 2.0 * (t.y + 0.5) / n))
    return lon, lat


def ground_resolution(lat: float, z: int, tile_px: int = 256) -> float:
    """某緯度、縮放等級下每像素的地面長度 (公尺)"""
    return 2.0 * math.pi * EARTH_RADIUS_M * math.cos(math.radians(lat)) / (tile_px * (1 << z))


def tiles_covering_bbox(bbox: Tuple[float, float, float, float], z: int) -> List[TileId]:
    """
    覆蓋 (west, south, east, north) 範圍的所有瓦片，依 (y, x) 排序

    Raises:
        TileRangeError: 範圍無效或超出 Mercator 範圍
    """
    west, south, east, north = bbox
    if west >= east or south >= north:
        raise TileRangeError(f"empty bounding box {bbox}")
    east = min(east, math.nextafter(180.0, -math.inf))
    top_left = lonlat_to_tile(west, north, z)
    bottom_right = lonlat_to_tile(east, south, z)
    return [TileId(z, x, y)
            for y in range(top_left.y, bottom_right.y + 1)
            for x in range(top_left.x, bottom_right.x + 1)]
