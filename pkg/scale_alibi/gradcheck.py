#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
梯度檢查
Finite-Difference Gradient Check

在 micro 設定上比較每個參數群組的反向傳播梯度與中央差分梯度，
以及兩個損失分支對其直接輸入的梯度。
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import ModelConfig, preset
from network.losses import (ContrastiveBatch, ReconBatch, contrastive_loss,
                            reconstruction_loss)
from network.model import ScaleAlibiModel
from numeric.finite_diff import numerical_grad, relative_error, select_indices
from numeric.tensor import Tensor, backward, l2_normalize_rows
from pipeline.synth import synth_triplet
from pipeline.tiles import TileId
from pipeline.triplet import TripletBatch
from utils.common import GradientCheckError, step_rng

# 設置日誌
logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4
DEFAULT_EPS = 1e-5
ENTRIES_PER_TENSOR = 16
LOSS_GROUPS = ('loss.contrastive', 'loss.reconstruction')


@dataclass
class GroupResult:
    group: str
    error: float
    entries: int
    worst_param: str
    worst_error: float


@dataclass
class GradcheckReport:
    results: List[GroupResult]
    tolerance: float
    seed: int

    @property
    def worst(self) -> GroupResult:
        return max(self.results, key=lambda r: r.error)

    @property
    def passed(self) -> bool:
        return all(r.error < self.tolerance for r in self.results)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{'group': r.group, 'max_rel_error': r.error, 'entries': r.entries,
                              'worst_param': r.worst_param} for r in self.results])

    def raise_for_failure(self) -> None:
        if not self.passed:
            w = self.worst
            raise GradientCheckError(
                f"gradient check failed: {w.group} ({w.worst_param}) relative error {w.error:.3e} "
                f">= {self.tolerance:g}", worst=w.worst_param, error=w.error)


def micro_batch(cfg: ModelConfig, seed: int, samples: int = 2) -> TripletBatch:
    """micro 設定用的小型合成批次"""
    triplets = [synth_triplet(TileId(15, 9000 + i, 12000), i % 2, seed, cfg.lores_px) for i in range(samples)]
    batch = TripletBatch.from_triplets(triplets)
    if cfg.radar_channels != batch.radar.shape[1]:
        raise GradientCheckError(f"gradcheck needs radar_channels=2, got {cfg.radar_channels}")
    return batch


def _compare(fn: Callable[[], float], tensors: Sequence[Tuple[str, Tensor]], eps: float,
             rng: np.random.Generator, sabotage: bool = False) -> Tuple[float, int, str, float]:
    """回傳 (群組相對誤差, 檢查的元素數, 最差參數, 最差參數誤差)"""
    analytic_all, numeric_all = [], []
    worst_name, worst_err = '', -1.0
    for k, (name, t) in enumerate(tensors):
        idx = select_indices(t.shape, ENTRIES_PER_TENSOR, rng)
        grad = np.zeros(t.shape) if t.grad is None else t.grad
        analytic = grad.reshape(-1)[idx].copy()
        if sabotage and k == 0:
            analytic = -analytic
        numeric = numerical_grad(fn, t, eps, idx)
        err = relative_error(analytic, numeric)
        if err > worst_err:
            worst_name, worst_err = name, err
        analytic_all.append(analytic)
        numeric_all.append(numeric)
    a = np.concatenate(analytic_all) if analytic_all else np.zeros(0)
    n = np.concatenate(numeric_all) if numeric_all else np.zeros(0)
    return relative_error(a, n), int(a.size), worst_name, worst_err


def run_gradcheck(cfg: Optional[ModelConfig] = None, seed: int = 0, eps: float = DEFAULT_EPS,
                  tolerance: float = DEFAULT_TOLERANCE, sabotage: bool = False) -> GradcheckReport:
    """
    執行梯度檢查

    Args:
        cfg: 模型設定 (預設 micro)
        seed: 權重、資料與抽樣種子
        eps: 中央差分步長
        tolerance: 容許的最大相對誤差
        sabotage: 翻轉第一個群組中一個梯度的正負號 (負向對照)
    """
    cfg = cfg or preset('micro')
    model = ScaleAlibiModel(cfg, seed)
    batch = micro_batch(cfg, seed)
    targets = model.targets(batch)
    mask = model.draw_mask(len(batch), cfg.lores_tokens, 0)
    rng = step_rng(seed, 99)

    def loss_value() -> float:
        out = model.forward(batch, mask=mask)
        return float(model.losses(out, batch, targets).total.data)

    out = model.forward(batch, mask=mask)
    backward(model.losses(out, batch, targets).total)

    results: List[GroupResult] = []
    for k, (group, params) in enumerate(model.parameter_groups().items()):
        err, n, worst, worst_err = _compare(loss_value, params, eps, rng, sabotage and k == 0)
        results.append(GroupResult(group, err, n, worst, worst_err))
        logger.info(f"{group}: max relative error {err:.3e} over {n} entries")
    model.zero_grad()

    # 對比分支：z = normalize(u)，對 u 求導
    n_batch, width = 3, 4
    u = {m: Tensor(step_rng(seed, 100, i).standard_normal((n_batch, width)), requires_grad=True, name=f'u_{m}')
         for i, m in enumerate(model.modes)}

    def con_value() -> Tensor:
        z = {m: l2_normalize_rows(t) for m, t in u.items()}
        return contrastive_loss(ContrastiveBatch(z, cfg.temperature))

    backward(con_value())
    err, n, worst, worst_err = _compare(lambda: float(con_value().data), list(u.items()), eps, rng)
    results.append(GroupResult('loss.contrastive', err, n, worst, worst_err))

    # 重建分支：對預測求導
    pred = Tensor(step_rng(seed, 101).standard_normal(out.predictions.shape), requires_grad=True,
                  name='predictions')

    def recon_value() -> Tensor:
        return reconstruction_loss(ReconBatch(pred, targets, mask, model.layout, cfg.recon_error))

    backward(recon_value())
    err, n, worst, worst_err = _compare(lambda: float(recon_value().data), [('predictions', pred)], eps, rng)
    results.append(GroupResult('loss.reconstruction', err, n, worst, worst_err))

    report = GradcheckReport(results, tolerance, seed)
    logger.info(f"梯度檢查{'通過' if report.passed else '失敗'}：最差 {report.worst.group} "
                f"({report.worst.error:.3e})")
    return report


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    print(run_gradcheck().to_frame().to_string(index=False))
