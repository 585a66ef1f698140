#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Scale-ALiBi - 資料管線測試
瓦片數學、雷達打包、合成三元組與批次組裝
"""

import os
import sys
import traceback

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

sys.path.append(os.path.dirname(__file__))

from pipeline.loader import BatchLoader
from pipeline.radar import pack_radar, unpack_radar
from pipeline.synth import resize_raster, sample_tiles, synth_dataset, synth_triplet
from pipeline.tiles import (TileId, ground_resolution, lonlat_to_tile, tile_center, tile_children,
                            tile_parent, tile_to_bbox, tiles_covering_bbox)
from pipeline.triplet import TripletBatch, check_alignment
from utils.common import ContractError, DimensionError, GeometryError, TileRangeError


def test_tile_known_values():
    assert lonlat_to_tile(0.0, 0.0, 1) == TileId(1, 1, 1)
    assert lonlat_to_tile(-180.0, 85.0, 0) == TileId(0, 0, 0)
    assert lonlat_to_tile(179.999, -85.0, 3) == TileId(3, 7, 7)
    assert_allclose(ground_resolution(0.0, 0), 156543.03392804097, rtol=1e-12)
    assert_allclose(ground_resolution(60.0, 1), 156543.03392804097 / 4.0, rtol=1e-9)
    assert str(TileId(15, 5240, 12661)) == '15/5240/12661'
    print("✅ 瓦片已知值")


def test_tile_inverse_consistency():
    """瓦片中心換回瓦片索引必須得到原瓦片 (4 個層級、1000 個瓦片)"""
    rng = np.random.default_rng(0)
    for z in (1, 5, 12, 16):
        n = 1 << z
        for _ in range(250):
            t = TileId(z, int(rng.integers(n)), int(rng.integers(n)))
            lon, lat = tile_center(t)
            assert lonlat_to_tile(lon, lat, z) == t, t
            west, south, east, north = tile_to_bbox(t)
            assert west < lon < east and south < lat < north
            assert all(tile_parent(c) == t for c in tile_children(t))
    print("✅ 瓦片反算一致")


def test_tile_range_errors():
    bad = [lambda: lonlat_to_tile(0.0, 86.0, 3), lambda: lonlat_to_tile(180.0, 0.0, 3),
           lambda: lonlat_to_tile(0.0, 0.0, 31), lambda: TileId(2, 4, 0), lambda: tile_parent(TileId(0, 0, 0)),
           lambda: tiles_covering_bbox((1.0, 0.0, 0.0, 1.0), 4)]
    for call in bad:
        try:
            call()
            raise AssertionError("out-of-range tile accepted")
        except TileRangeError:
            pass
    print("✅ 瓦片範圍錯誤")


def test_tiles_covering_bbox():
    t = TileId(10, 300, 400)
    west, south, east, north = tile_to_bbox(t)
    eps = 1e-9
    assert tiles_covering_bbox((west + eps, south + eps, east - eps, north - eps), 10) == [t]
    grown = tiles_covering_bbox((west + eps, south - eps, east + eps, north - eps), 10)
    assert grown == [t, TileId(10, 301, 400), TileId(10, 300, 401), TileId(10, 301, 401)]
    print("✅ 範圍覆蓋瓦片")


def test_pack_radar():
    """0.256 倍後四捨五入：500 → 128，4000 → 夾到 255，紅色通道為 0"""
    vv = np.array([[500.0, 4000.0], [0.0, 1.0]])
    vh = np.array([[1.953125, 996.0], [999.0, 2.0]])
    packed = pack_radar(vv, vh)
    assert packed.dtype == np.uint8 and packed.shape == (3, 2, 2)
    assert_array_equal(packed[0], 0)
    assert_array_equal(packed[1], [[128, 255], [0, 0]])
    assert_array_equal(packed[2], [[1, 255], [255, 1]])
    unpacked = unpack_radar(packed)
    assert unpacked.dtype == np.float32 and unpacked.shape == (2, 2, 2)
    assert_allclose(unpacked[0, 0, 0], 128 / 255, rtol=1e-6)
    for vv_bad, vh_bad, error in ((np.ones((2, 2)), np.ones((2, 3)), DimensionError),
                                  (-np.ones((2, 2)), np.ones((2, 2)), ContractError),
                                  (np.full((2, 2), np.nan), np.ones((2, 2)), ContractError)):
        try:
            pack_radar(vv_bad, vh_bad)
            raise AssertionError("invalid radar accepted")
        except error:
            pass
    print("✅ 雷達打包")


def test_pack_radar_monotone_and_bounded():
    """vv1 ≤ vv2 逐點 → green1 ≤ green2；範圍內的量化誤差不超過半步加 1000/512"""
    rng = np.random.default_rng(11)
    vv1 = rng.uniform(0.0, 1200.0, size=(32, 32))
    vv2 = vv1 + rng.uniform(0.0, 50.0, size=(32, 32))
    vh = rng.uniform(0.0, 900.0, size=(32, 32))
    g1, g2 = pack_radar(vv1, vh)[1], pack_radar(vv2, vh)[1]
    assert np.all(g1 <= g2)

    vv = rng.uniform(0.0, 255.0 / 0.256, size=(64, 64))
    green = pack_radar(vv, vv)[1].astype(np.float64)
    bound = 1000.0 / 512.0 + 0.5 * (1000.0 / 256.0)
    assert np.all(np.abs(green * (1000.0 / 256.0) - vv) <= bound)
    print("✅ 雷達打包單調且誤差有界")


def test_synth_triplet():
    """純函數：相同輸入逐位元相同，尺寸對齊，值域 [0, 1]"""
    tile = TileId(15, 5240, 12661)
    a = synth_triplet(tile, 2, 7, 16)
    b = synth_triplet(tile, 2, 7, 16)
    assert a.equals(b)
    assert a.radar.shape == (2, 16, 16) and a.lores.shape == (3, 16, 16) and a.hires.shape == (3, 32, 32)
    for raster in (a.radar, a.lores, a.hires):
        assert raster.dtype == np.float32
        assert raster.min() >= 0.0 and raster.max() <= 1.0
    assert_allclose(a.radar * 255.0, np.round(a.radar * 255.0), atol=1e-3)
    assert not a.equals(synth_triplet(tile, 2, 8, 16))
    assert not a.equals(synth_triplet(tile, 3, 7, 16))
    # 高解析度 2×2 平均下採樣後與低解析度的每個通道 Pearson r > 0.8
    pooled = a.hires.reshape(3, 16, 2, 16, 2).mean(axis=(2, 4))
    for ch in range(3):
        r = np.corrcoef(pooled[ch].ravel(), a.lores[ch].ravel())[0, 1]
        assert r > 0.8, (ch, r)
    print("✅ 合成三元組")


def test_synth_seed_independence():
    """不同種子的低解析度場幾乎不相關 (8 個瓦片合併計算 r < 0.3)"""
    tiles = sample_tiles(8, 15, 21)
    first = np.concatenate([synth_triplet(t, 2, 100, 32).lores[0].ravel() for t in tiles])
    second = np.concatenate([synth_triplet(t, 2, 200, 32).lores[0].ravel() for t in tiles])
    r = np.corrcoef(first, second)[0, 1]
    assert abs(r) < 0.3, r
    print("✅ 不同種子互相獨立")



def test_synth_dataset():
    tiles = sample_tiles(12, 15, 3)
    assert len(set(tiles)) == 12 and all(t.z == 15 for t in tiles)
    assert tiles == sample_tiles(12, 15, 3)
    samples = list(synth_dataset(tiles, 4, 3, 8))
    assert sorted(np.bincount([s.class_id for s in samples]).tolist()) == [3, 3, 3, 3]
    again = list(synth_dataset(tiles, 4, 3, 8))
    assert all(x.equals(y) for x, y in zip(samples, again))
    assert sample_tiles(0, 15, 3) == []
    try:
        sample_tiles(5, 0, 3)
        raise AssertionError("too many tiles accepted")
    except ContractError:
        pass
    print("✅ 合成資料集")


def test_resize_raster():
    rng = np.random.default_rng(4)
    image = rng.uniform(size=(3, 8, 8))
    assert_array_equal(resize_raster(image, 8), image)
    up = resize_raster(image, 16)
    assert up.shape == (3, 16, 16)
    flat = resize_raster(np.full((2, 8, 8), 0.25), 12)
    assert_allclose(flat, 0.25, atol=1e-12)
    try:
        resize_raster(np.zeros((8, 8)), 4)
        raise AssertionError("2-D raster accepted")
    except DimensionError:
        pass
    print("✅ 影像縮放")


def test_alignment_checks():
    radar, lores, hires = np.zeros((2, 4, 4)), np.zeros((3, 4, 4)), np.zeros((3, 8, 8))
    check_alignment(radar, lores, hires)
    for args in ((radar, lores, np.zeros((3, 6, 6))), (np.zeros((2, 2, 2)), lores, hires),
                 (radar, np.zeros((3, 4, 5)), hires)):
        try:
            check_alignment(*args)
            raise AssertionError("misaligned triplet accepted")
        except GeometryError:
            pass
    print("✅ 對齊檢查")


def _batch_for(step: int) -> TripletBatch:
    t = synth_triplet(TileId(12, step, step), step % 2, 0, 4)
    return TripletBatch.from_triplets([t])


def test_batch_loader():
    """批次依步數順序產出，內容與執行緒時序無關；錯誤轉交給消費端"""
    seen = [(step, batch) for step, batch in BatchLoader(_batch_for, 3, 9, prefetch=2)]
    assert [s for s, _ in seen] == list(range(3, 9))
    for step, batch in seen:
        assert_array_equal(batch.lores, _batch_for(step).lores)

    def failing(step):
        if step == 2:
            raise ContractError("broken batch")
        return _batch_for(step)

    got = []
    try:
        for step, _ in BatchLoader(failing, 0, 5):
            got.append(step)
        raise AssertionError("loader swallowed the error")
    except ContractError:
        pass
    assert got == [0, 1]
    assert list(BatchLoader(_batch_for, 0, 0)) == []
    print("✅ 批次組裝")


TESTS = [
    test_tile_known_values, test_tile_inverse_consistency, test_tile_range_errors, test_tiles_covering_bbox,
    test_pack_radar, test_pack_radar_monotone_and_bounded, test_synth_triplet, test_synth_seed_independence,
    test_synth_dataset, test_resize_raster, test_alignment_checks,
    test_batch_loader,
]


def generate_test_report():
    """執行所有測試並輸出摘要"""
    results = {}
    for test in TESTS:
        try:
            test()
            results[test.__name__] = True
        except (Exception, SystemExit) as e:
            print(f"❌ {test.__name__} 失敗: {e}")
            traceback.print_exc()
            results[test.__name__] = False
    print(f"\n📊 資料管線測試：{sum(results.values())}/{len(results)} 通過")
    return results


if __name__ == "__main__":
    sys.exit(0 if all(generate_test_report().values()) else 1)
