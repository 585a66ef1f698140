#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Scale-ALiBi - 表示探測測試
"""

import os
import sys
import traceback

import numpy as np
from numpy.testing import assert_array_equal

sys.path.append(os.path.dirname(__file__))

from config import preset
from network.model import ScaleAlibiModel
from numeric.tensor import get_default_graph
from pipeline.synth import sample_tiles, synth_dataset
from pipeline.triplet import TripletBatch
from probes import ProbeEvaluator, extract_features, kmeans_probe, knn_probe, matched_accuracy, mlp_probe
from utils.common import ConfigError, ContractError


def _clusters(rng, per_class=30, classes=3, dim=6, noise=0.05):
    """各類別圍繞一個座標軸方向的點"""
    features, labels = [], []
    for c in range(classes):
        center = np.zeros(dim)
        center[c] = 1.0
        features.append(center + noise * rng.standard_normal((per_class, dim)))
        labels += [c] * per_class
    return np.concatenate(features), np.array(labels)


def test_knn_closed_forms():
    """訓練集即測試集且 k=1 → 100%；同票依相似度總和，再依較小標籤"""
    rng = np.random.default_rng(0)
    features = rng.standard_normal((20, 5))
    labels = rng.integers(0, 4, size=20)
    assert knn_probe(features, labels, features, labels, k=1) == 1.0

    train = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert knn_probe(train, np.array([0, 1]), np.array([[1.0, 0.5]]), k=2).tolist() == [0]
    assert knn_probe(train, np.array([0, 1]), np.array([[0.5, 1.0]]), k=2).tolist() == [1]
    assert knn_probe(train, np.array([5, 3]), np.array([[1.0, 1.0]]), k=2).tolist() == [3]
    print("✅ kNN 封閉形式")


def test_knn_accuracy():
    rng = np.random.default_rng(1)
    features, labels = _clusters(rng)
    order = rng.permutation(len(labels))
    train, test = order[:60], order[60:]
    assert knn_probe(features[train], labels[train], features[test], labels[test], k=5) == 1.0

    noise = rng.standard_normal((400, 8))
    shuffled = rng.integers(0, 2, size=400)
    acc = knn_probe(noise[:200], shuffled[:200], noise[200:], shuffled[200:], k=20)
    assert 0.3 < acc < 0.7, acc
    print("✅ kNN 準確率")


def test_knn_contract():
    features = np.eye(3)
    for kwargs in ({'k': 0}, {'k': 4}):
        try:
            knn_probe(features, np.arange(3), features, **kwargs)
            raise AssertionError(f"{kwargs} accepted")
        except ContractError:
            pass
    try:
        knn_probe(np.zeros((0, 3)), np.zeros(0), features, k=1)
        raise AssertionError("empty train set accepted")
    except ContractError:
        pass
    try:
        knn_probe(np.full((2, 3), np.nan), np.arange(2), features, k=1)
        raise AssertionError("non-finite features accepted")
    except ContractError:
        pass
    print("✅ kNN 契約")


def test_matched_accuracy():
    """群集編號任意重排不影響準確率；多出的群集取多數標籤"""
    labels = np.array(['a', 'a', 'b', 'b', 'b'])
    acc, mapping = matched_accuracy(np.array([1, 1, 0, 0, 2]), labels)
    assert acc == 1.0 and mapping == {1: 'a', 0: 'b', 2: 'b'}
    acc, _ = matched_accuracy(np.array([0, 1, 1, 1, 1]), labels)
    assert acc == 0.8
    acc, _ = matched_accuracy(np.zeros(5, dtype=int), labels)
    assert acc == 0.6
    print("✅ Hungarian 對應")


def test_kmeans_probe():
    rng = np.random.default_rng(2)
    features, labels = _clusters(rng)
    result = kmeans_probe(features, labels, 3, seed=0)
    assert result.accuracy == 1.0 and result.iterations >= 1
    again = kmeans_probe(features, labels, 3, seed=0)
    assert_array_equal(result.assignments, again.assignments)

    points = rng.standard_normal((8, 4))
    assert kmeans_probe(points, rng.integers(0, 3, size=8), 8).accuracy == 1.0
    for k in (0, 9):
        try:
            kmeans_probe(points, np.zeros(8), k)
            raise AssertionError(f"k={k} accepted")
        except ContractError:
            pass
    print("✅ k-means 探測")


def test_kmeans_absolute_tolerance():
    """停止條件是群心移動的絕對距離，與特徵尺度有關"""
    rng = np.random.default_rng(4)
    features, labels = _clusters(rng, noise=0.3)
    # 整體縮小到 1e-9 後，任何群心移動都小於 1e-6 → 第一輪即停止
    tiny = kmeans_probe(features * 1e-9, labels, 3, seed=0)
    assert tiny.iterations == 1
    exact = kmeans_probe(features, labels, 3, seed=0, tol=0.0)
    assert 1 <= exact.iterations <= 50
    assert kmeans_probe(features, labels, 3, seed=0, max_iter=1).iterations == 1
    print("✅ k-means 絕對收斂門檻")



def test_mlp_probe():
    rng = np.random.default_rng(3)
    features, labels = _clusters(rng, per_class=40)
    assert mlp_probe(features, labels, hidden=32, epochs=300, seed=0) >= 0.95

    # XOR：單一隱藏單元只能畫出一條分界線
    corners = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    xor_labels = np.repeat([0, 0, 1, 1], 50)
    xor_train = np.repeat(corners, 50, axis=0) + 0.05 * rng.standard_normal((200, 2))
    xor_test = np.repeat(corners, 50, axis=0) + 0.05 * rng.standard_normal((200, 2))
    acc = mlp_probe(xor_train, xor_labels, hidden=1, epochs=300, seed=0,
                    test_features=xor_test, test_labels=xor_labels)
    assert acc <= 0.8, acc
    try:
        mlp_probe(features, np.zeros(len(features)), hidden=4, epochs=5)
        raise AssertionError("single-class labels accepted")
    except ContractError:
        pass
    print("✅ MLP 探測")


def _small_dataset(size=16, count=16):
    samples = list(synth_dataset(sample_tiles(count, 15, 0), 2, 0, size))
    return TripletBatch.from_triplets(samples)


def test_probe_evaluator():
    """凍結的 micro 模型：特徵縮放到原生尺寸後三種探測都能執行"""
    model = ScaleAlibiModel(preset('micro'))
    dataset = _small_dataset()
    feats = extract_features(model, dataset, 'lores', chunk=5)
    assert feats.shape == (16, 8)
    assert extract_features(model, dataset, 'hires').shape == (16, 8)

    evaluator = ProbeEvaluator(model, dataset, seed=0)
    knn = evaluator.run('knn', 'lores')
    assert knn.n_train + knn.n_test == 16 and knn.params['k'] == knn.n_train
    kmeans = evaluator.run('kmeans', 'hires')
    assert kmeans.params['k'] == 2 and 0.5 <= kmeans.accuracy <= 1.0
    mlp = evaluator.run('mlp', 'lores', hidden=8, epochs=20)
    for report in (knn, kmeans, mlp):
        assert 0.0 <= report.accuracy <= 1.0
        assert set(report.to_dict()) == {'method', 'encoder', 'accuracy', 'seed', 'n_train', 'n_test', 'params'}
    assert ProbeEvaluator(model, dataset, seed=0).run('knn', 'lores').accuracy == knn.accuracy
    for bad in (lambda: evaluator.run('svm'), lambda: evaluator.run('knn', 'radar')):
        try:
            bad()
            raise AssertionError("unknown probe accepted")
        except ConfigError:
            pass
    print("✅ 探測評估器")


TESTS = [
    test_knn_closed_forms, test_knn_accuracy, test_knn_contract, test_matched_accuracy, test_kmeans_probe,
    test_kmeans_absolute_tolerance,
    test_mlp_probe, test_probe_evaluator,
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
    print(f"\n📊 表示探測測試：{sum(results.values())}/{len(results)} 通過")
    return results


if __name__ == "__main__":
    sys.exit(0 if all(generate_test_report().values()) else 1)
