#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
表示品質探測模組
Representation Probes

在凍結編碼器的池化特徵上評估：
- kNN (餘弦距離多數決)
- k-means (k-means++ / Lloyd，Hungarian 對應後的準確率)
- 單隱藏層 MLP 分類器
"""

import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import kmeans_plusplus
from sklearn.exceptions import ConvergenceWarning
from sklearn.metrics import accuracy_score, pairwise_distances_argmin
from sklearn.model_selection import train_test_split
from sklearn.neighbors import NearestNeighbors
from sklearn.neural_network import MLPClassifier
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from config import PROBE_CONFIG
from network.model import ScaleAlibiModel
from pipeline.synth import resize_raster
from pipeline.triplet import TripletBatch
from utils.common import ConfigError, ContractError

# 設置日誌
logger = logging.getLogger(__name__)

METHODS = ('knn', 'kmeans', 'mlp')
ENCODERS = ('lores', 'hires')


def _check_features(features: np.ndarray, what: str = 'features') -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ContractError(f"{what} must be a 2-D array, got shape {features.shape}")
    if not np.all(np.isfinite(features)):
        raise ContractError(f"{what} contain non-finite values")
    return features


def knn_probe(train_features: np.ndarray, train_labels: np.ndarray, test_features: np.ndarray,
              test_labels: Optional[np.ndarray] = None, k: int = PROBE_CONFIG['knn_k']):
    """
    餘弦距離 kNN 多數決；同票時取相似度總和較大者，仍相同取較小標籤

    Returns:
        有 test_labels 時回傳準確率，否則回傳預測標籤
    """
    train_features = _check_features(train_features, 'train features')
    test_features = _check_features(test_features, 'test features')
    train_labels = np.asarray(train_labels)
    if len(train_features) == 0:
        raise ContractError("kNN probe needs a non-empty train set")
    if len(train_labels) != len(train_features):
        raise ContractError("train features and labels differ in length")
    if not 1 <= k <= len(train_features):
        raise ContractError(f"k={k} must be between 1 and the train set size {len(train_features)}")

    nn = NearestNeighbors(n_neighbors=k, metric='cosine', algorithm='brute').fit(train_features)
    distances, indices = nn.kneighbors(test_features)
    classes = np.unique(train_labels)
    predictions = np.empty(len(test_features), dtype=train_labels.dtype)
    for row, (dist, idx) in enumerate(zip(distances, indices)):
        neighbor_labels = train_labels[idx]
        similarity = 1.0 - dist
        votes = np.array([np.sum(neighbor_labels == c) for c in classes])
        weight = np.array([similarity[neighbor_labels == c].sum() for c in classes])
        # lexsort: 最後一個鍵為主鍵
        best = np.lexsort((-classes.astype(np.float64), weight, votes))[-1]
        predictions[row] = classes[best]

    if test_labels is None:
        return predictions
    return float(accuracy_score(np.asarray(test_labels), predictions))


@dataclass
class KMeansProbeResult:
    assignments: np.ndarray
    accuracy: float
    mapping: Dict[int, Any]
    iterations: int


def matched_accuracy(assignments: np.ndarray, labels: np.ndarray):
    """
    Hungarian 對應群集與標籤；未配對的群集取其多數標籤

    Returns:
        (準確率, 群集 → 標籤 對應)
    """
    assignments = np.asarray(assignments)
    labels = np.asarray(labels)
    clusters = np.unique(assignments)
    classes = np.unique(labels)
    confusion = np.zeros((len(clusters), len(classes)), dtype=np.int64)
    for i, c in enumerate(clusters):
        members = labels[assignments == c]
        for j, y in enumerate(classes):
            confusion[i, j] = np.sum(members == y)

    rows, cols = linear_sum_assignment(-confusion)
    mapping = {int(clusters[r]): classes[c] for r, c in zip(rows, cols)}
    for i, c in enumerate(clusters):
        if int(c) not in mapping:
            mapping[int(c)] = classes[int(np.argmax(confusion[i]))]
    mapped = np.array([mapping[int(c)] for c in assignments])
    return float(accuracy_score(labels, mapped)), mapping


def kmeans_probe(features: np.ndarray, labels: np.ndarray, k: int, seed: int = 0,
                 max_iter: int = PROBE_CONFIG['kmeans_max_iter'],
                 tol: float = PROBE_CONFIG['kmeans_tol']) -> KMeansProbeResult:
    """
    k-means++ 初始化的 Lloyd 演算法，再以 Hungarian 對應計算準確率

    當所有群心的移動距離 (歐氏，絕對值) 都小於 tol，或達到 max_iter 時停止。
    空群集保留前一輪的群心。
    """
    features = _check_features(features)
    if k < 1:
        raise ContractError(f"k-means needs k >= 1, got {k}")
    if k > len(features):
        raise ContractError(f"k={k} exceeds the sample count {len(features)}")
    centers, _ = kmeans_plusplus(features, n_clusters=k, random_state=seed)
    assignments = pairwise_distances_argmin(features, centers)
    iterations = 0
    while iterations < max_iter:
        iterations += 1
        updated = centers.copy()
        for c in range(k):
            members = features[assignments == c]
            if len(members):
                updated[c] = members.mean(axis=0)
        shift = float(np.max(np.linalg.norm(updated - centers, axis=1)))
        centers = updated
        assignments = pairwise_distances_argmin(features, centers)
        if shift < tol:
            break
    accuracy, mapping = matched_accuracy(assignments, labels)
    logger.debug(f"k-means k={k}: {iterations} iterations, matched accuracy {accuracy:.3f}")
    return KMeansProbeResult(assignments, accuracy, mapping, iterations)



def mlp_probe(features: np.ndarray, labels: np.ndarray, hidden: int = PROBE_CONFIG['mlp_hidden'],
              epochs: int = PROBE_CONFIG['mlp_epochs'], seed: int = 0,
              test_fraction: float = PROBE_CONFIG['test_fraction'],
              test_features: Optional[np.ndarray] = None,
              test_labels: Optional[np.ndarray] = None) -> float:
    """
    單隱藏層分類器 (Adam, 交叉熵)；未給測試集時依 test_fraction 分層切分

    Raises:
        ContractError: 只有單一類別或特徵非有限值
    """
    features = _check_features(features)
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise ContractError("MLP probe needs at least two classes")
    if test_features is None:
        stratify = labels if np.min(np.unique(labels, return_counts=True)[1]) >= 2 else None
        features, test_features, labels, test_labels = train_test_split(
            features, labels, test_size=test_fraction, random_state=seed, stratify=stratify)
    test_features = _check_features(test_features, 'test features')

    clf = make_pipeline(StandardScaler(), MLPClassifier(
        hidden_layer_sizes=(hidden,), solver='adam', max_iter=epochs, random_state=seed))
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', ConvergenceWarning)
        clf.fit(features, labels)
    return float(accuracy_score(np.asarray(test_labels), clf.predict(test_features)))


def extract_features(model: ScaleAlibiModel, dataset: TripletBatch, which: str = 'lores',
                     chunk: int = 32) -> np.ndarray:
    """把資料集影像縮放到編碼器原生尺寸後取特徵"""
    if which not in ENCODERS:
        raise ConfigError(f"unknown encoder {which!r}; expected one of {ENCODERS}")
    images = dataset.lores if which == 'lores' else dataset.hires
    native = model.cfg.lores_px if which == 'lores' else model.cfg.hires_px
    if images.shape[-1] != native:
        logger.info(f"將 {which} 影像由 {images.shape[-1]} 縮放到 {native}")
        images = np.stack([resize_raster(img, native) for img in images])
    parts = [model.encode_for_probe(images[i:i + chunk], which) for i in range(0, len(images), chunk)]
    if not parts:
        return np.zeros((0, model.encoders[which].cfg.model_dim))
    return np.concatenate(parts, axis=0)


@dataclass
class ProbeReport:
    method: str
    encoder: str
    accuracy: float
    seed: int
    n_train: int
    n_test: int
    params: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class ProbeEvaluator:
    """
    在資料集上評估一個模型的編碼器

    Args:
        model: 已載入權重的模型
        dataset: 帶標籤的資料集
        seed: 切分與探測器的種子
    """

    def __init__(self, model: ScaleAlibiModel, dataset: TripletBatch, seed: int = 0,
                 test_fraction: float = PROBE_CONFIG['test_fraction']):
        if len(dataset) < 2:
            raise ContractError("probing needs at least two samples")
        self.model = model
        self.dataset = dataset
        self.seed = seed
        self.test_fraction = test_fraction
        self._features: Dict[str, np.ndarray] = {}

    def features(self, which: str) -> np.ndarray:
        if which not in self._features:
            self._features[which] = extract_features(self.model, self.dataset, which)
        return self._features[which]

    def split(self):
        """固定種子的分層切分 (train_idx, test_idx)"""
        labels = self.dataset.labels
        _, counts = np.unique(labels, return_counts=True)
        stratify = labels if counts.min() >= 2 else None
        return train_test_split(np.arange(len(labels)), test_size=self.test_fraction,
                                random_state=self.seed, stratify=stratify)

    def run(self, method: str, which: str = 'lores', k: Optional[int] = None,
            hidden: int = PROBE_CONFIG['mlp_hidden'], epochs: int = PROBE_CONFIG['mlp_epochs']) -> ProbeReport:
        if method not in METHODS:
            raise ConfigError(f"unknown probe method {method!r}; expected one of {METHODS}")
        feats = self.features(which)
        labels = self.dataset.labels

        if method == 'kmeans':
            k = k or len(np.unique(labels))
            result = kmeans_probe(feats, labels, k, self.seed)
            report = ProbeReport(method, which, result.accuracy, self.seed, len(labels), 0,
                                 {'k': k, 'iterations': result.iterations,
                                  'max_iter': PROBE_CONFIG['kmeans_max_iter'], 'tol': PROBE_CONFIG['kmeans_tol']})
        else:
            train_idx, test_idx = self.split()
            if method == 'knn':
                k = k or PROBE_CONFIG['knn_k']
                k = min(k, len(train_idx))
                acc = knn_probe(feats[train_idx], labels[train_idx], feats[test_idx], labels[test_idx], k)
                params = {'k': k, 'metric': 'cosine'}
            else:
                acc = mlp_probe(feats[train_idx], labels[train_idx], hidden, epochs, self.seed,
                                test_features=feats[test_idx], test_labels=labels[test_idx])
                params = {'hidden': hidden, 'epochs': epochs}
            report = ProbeReport(method, which, acc, self.seed, len(train_idx), len(test_idx), params)

        logger.info(f"{method} 探測 ({which} 編碼器)：準確率 {report.accuracy:.3f}")
        return report
