#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Scale-ALiBi - 損失函數測試
"""

import math
import os
import sys
import traceback

import numpy as np
from numpy.testing import assert_allclose

sys.path.append(os.path.dirname(__file__))

from network.decoder import FusedLayout
from network.losses import (ContrastiveBatch, ReconBatch, contrastive_loss, normalize_patches,
                            literal_infonce, pool_and_normalize, reconstruction_loss, total_loss)
from numeric.tensor import Tensor, get_default_graph, l2_normalize_rows
from utils.common import ContractError, DimensionError

MODES = ('radar', 'lores', 'hires')


def _unit_rows(rng, n, p):
    x = rng.standard_normal((n, p))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _batch(z, temperature=1.0):
    return ContrastiveBatch({m: Tensor(v) for m, v in z.items()}, temperature)


def test_contrastive_closed_forms():
    """N=1 → 0；N=2 正交對齊 → 0.31326；全部相同 → log N"""
    rng = np.random.default_rng(0)
    single = {m: _unit_rows(rng, 1, 4) for m in MODES}
    assert abs(float(contrastive_loss(_batch(single)).data)) < 1e-12

    eye = {m: np.eye(2) for m in MODES}
    expected = -math.log(math.e / (math.e + 1.0))
    assert abs(expected - 0.31326) < 1e-5
    assert_allclose(float(contrastive_loss(_batch(eye)).data), expected, atol=1e-6)

    for n in (2, 5, 8):
        row = _unit_rows(rng, 1, 6)
        collapsed = {m: np.repeat(row, n, axis=0) for m in MODES}
        assert_allclose(float(contrastive_loss(_batch(collapsed, 0.1)).data), math.log(n), atol=1e-9)
    print("✅ 對比損失封閉形式")


def test_contrastive_properties():
    """非負、批次置換不變、溫度趨大時趨近 log N、正樣本相似度增加時下降"""
    rng = np.random.default_rng(1)
    z = {m: _unit_rows(rng, 6, 5) for m in MODES}
    base = float(contrastive_loss(_batch(z, 0.5)).data)
    assert base >= 0.0
    perm = rng.permutation(6)
    permuted = float(contrastive_loss(_batch({m: v[perm] for m, v in z.items()}, 0.5)).data)
    assert_allclose(permuted, base, atol=1e-12)

    gaps = [abs(float(contrastive_loss(_batch(z, s)).data) - math.log(6)) for s in (1.0, 10.0, 1000.0)]
    assert gaps[2] < gaps[1] and gaps[2] < 1e-3, gaps

    # 負樣本相似度固定為 0，正樣本相似度 cos θ 隨 θ 變小而增加
    radar = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    values = []
    for theta in (1.2, 0.8, 0.4, 0.0):
        lores = np.cos(theta) * radar + np.sin(theta) * np.array([0.0, 0.0, 1.0])
        values.append(float(contrastive_loss(_batch({'radar': radar, 'lores': lores}, 0.2)).data))
    assert all(x > y for x, y in zip(values, values[1:])), values
    print("✅ 對比損失性質")


def test_contrastive_contract():
    rng = np.random.default_rng(2)
    z = {m: _unit_rows(rng, 3, 4) for m in MODES}
    cases = [
        (lambda: _batch(z, 0.0), ContractError),
        (lambda: _batch({'radar': z['radar']}), ContractError),
        (lambda: _batch({'radar': z['radar'], 'lores': z['lores'][:2]}), DimensionError),
        (lambda: _batch({'radar': z['radar'] * 2.0, 'lores': z['lores']}), ContractError),
        (lambda: _batch({'radar': np.zeros((0, 4)), 'lores': np.zeros((0, 4))}), ContractError),
    ]
    for build, error in cases:
        try:
            build()
            raise AssertionError("invalid contrastive batch accepted")
        except error:
            pass
    print("✅ 對比損失契約")


def test_literal_infonce_is_constant():
    """字面公式的值與相似度無關：−1/(|C|·N)"""
    rng = np.random.default_rng(3)
    for n in (1, 4, 7):
        z = {m: _unit_rows(rng, n, 5) for m in MODES}
        assert_allclose(float(literal_infonce(_batch(z, 0.3)).data), -1.0 / (3 * n), atol=1e-12)
    print("✅ 字面 InfoNCE")


def _recon_setup(rng, n=2, length=4, patch_px=2):
    layout = FusedLayout(patch_px=patch_px)
    targets = {m: normalize_patches(rng.standard_normal((n, length, sl.stop - sl.start)))
               for m, sl in layout.slices.items()}
    perfect = np.concatenate([targets[m] for m in layout.modes], axis=-1)
    mask = np.zeros((n, length), dtype=bool)
    mask[:, ::2] = True
    return layout, targets, perfect, mask


def test_reconstruction_closed_forms():
    """完美預測 → 0；遮住位置全部 +1 → 模式數 (3)"""
    rng = np.random.default_rng(4)
    layout, targets, perfect, mask = _recon_setup(rng)
    assert float(reconstruction_loss(ReconBatch(Tensor(perfect), targets, mask, layout)).data) == 0.0
    shifted = perfect + 1.0
    for error in ('mse', 'mae'):
        value = float(reconstruction_loss(ReconBatch(Tensor(shifted), targets, mask, layout, error)).data)
        assert_allclose(value, 3.0, atol=1e-12)
    print("✅ 重建損失封閉形式")


def test_reconstruction_ignores_unmasked():
    rng = np.random.default_rng(5)
    layout, targets, perfect, mask = _recon_setup(rng)
    noisy = perfect + rng.standard_normal(perfect.shape)
    base = float(reconstruction_loss(ReconBatch(Tensor(noisy), targets, mask, layout)).data)
    perturbed = noisy.copy()
    perturbed[~mask] += 100.0 * rng.standard_normal(perturbed[~mask].shape)
    value = float(reconstruction_loss(ReconBatch(Tensor(perturbed), targets, mask, layout)).data)
    assert_allclose(value, base, atol=1e-12)
    print("✅ 重建損失忽略未遮住位置")


def test_reconstruction_contract():
    rng = np.random.default_rng(6)
    layout, targets, perfect, mask = _recon_setup(rng)
    empty = mask.copy()
    empty[1] = False
    try:
        ReconBatch(Tensor(perfect), targets, empty, layout)
        raise AssertionError("empty mask accepted")
    except ContractError:
        pass
    try:
        ReconBatch(Tensor(perfect[..., :-1]), targets, mask, layout)
        raise AssertionError("bad width accepted")
    except DimensionError:
        pass
    rb = ReconBatch(Tensor(perfect), targets, mask, layout)
    assert rb.masked_count.tolist() == [2, 2]
    print("✅ 重建損失契約")


def test_normalize_patches():
    rng = np.random.default_rng(7)
    patches = rng.standard_normal((3, 5, 12)) * 4.0 + 2.0
    out = normalize_patches(patches)
    assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
    assert_allclose(out.std(axis=-1), 1.0, atol=1e-6)
    constant = normalize_patches(np.full((1, 1, 8), 3.0))
    assert np.all(np.isfinite(constant)) and np.all(constant == 0.0)
    print("✅ 逐塊標準化")


def test_total_loss():
    assert float(total_loss(Tensor(0.0), Tensor(0.0)).data) == 0.0
    assert float(total_loss(Tensor(0.5), Tensor(1.5)).data) == 2.0
    for bad in (float('nan'), float('inf')):
        try:
            total_loss(Tensor(bad), Tensor(1.0))
            raise AssertionError("non-finite loss accepted")
        except ContractError:
            pass
    try:
        total_loss(Tensor(np.ones(2)), Tensor(1.0))
        raise AssertionError("non-scalar loss accepted")
    except ContractError:
        pass
    print("✅ 總損失")


def test_pool_and_normalize():
    assert_allclose(pool_and_normalize(Tensor([[3.0, 4.0]])).data, [0.6, 0.8], atol=1e-12)
    degenerate = pool_and_normalize(Tensor([[1.0, 0.0], [-1.0, 0.0]])).data
    assert_allclose(np.linalg.norm(degenerate), 1.0, atol=1e-12)
    out = pool_and_normalize(Tensor(np.random.default_rng(8).standard_normal((4, 9, 6))))
    assert out.shape == (4, 6)
    assert_allclose(np.linalg.norm(out.data, axis=-1), 1.0, atol=1e-9)
    try:
        pool_and_normalize(Tensor(np.zeros((0, 3))))
        raise AssertionError("empty stream accepted")
    except ContractError:
        pass
    print("✅ 池化與正規化")


TESTS = [
    test_contrastive_closed_forms, test_contrastive_properties, test_contrastive_contract,
    test_literal_infonce_is_constant, test_reconstruction_closed_forms,
    test_reconstruction_ignores_unmasked, test_reconstruction_contract, test_normalize_patches,
    test_total_loss, test_pool_and_normalize,
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
        finally:
            get_default_graph().clear()
    print(f"\n📊 損失函數測試：{sum(results.values())}/{len(results)} 通過")
    return results


if __name__ == "__main__":
    sys.exit(0 if all(generate_test_report().values()) else 1)
