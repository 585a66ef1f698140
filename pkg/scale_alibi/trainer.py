#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
模型訓練器
Scale-ALiBi Trainer

L = L_Con + L_Recon，Adam (固定學習率 + 線性暖身)。
批次抽樣與遮罩只由 (seed, step) 決定，因此檢查點不需保存隨機數狀態，
從檢查點續訓與不中斷的訓練逐位元相同。
"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from config import TRAINING_CONFIG, ModelConfig
from network.losses import total_loss
from network.model import STREAM_BATCH, ScaleAlibiModel
from numeric.optim import Adam
from numeric.tensor import backward, get_default_graph
from pipeline.loader import BatchLoader
from pipeline.triplet import TripletBatch
from storage.checkpoint_handler import Checkpoint, load_checkpoint, save_checkpoint
from utils.common import (ConfigError, ContractError, MetricsWriter, NonFiniteLossError,
                          data_processor, step_rng)

# 設置日誌
logger = logging.getLogger(__name__)


@dataclass
class TrainState:
    """步數、模型權重、優化器狀態與種子 (隨機數由 seed 與步數推導)"""

    step: int
    model: ScaleAlibiModel
    optimizer: Adam
    seed: int

    @classmethod
    def initialize(cls, cfg: ModelConfig, seed: Optional[int] = None) -> 'TrainState':
        seed = cfg.seed if seed is None else seed
        model = ScaleAlibiModel(cfg, seed)
        optimizer = Adam(model.parameters(), lr=cfg.learning_rate,
                         betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps,
                         warmup_steps=cfg.warmup_steps)
        return cls(0, model, optimizer, seed)

    @property
    def cfg(self) -> ModelConfig:
        return self.model.cfg

    def to_checkpoint(self) -> Checkpoint:
        opt = self.optimizer.state
        return Checkpoint(self.cfg, self.model.state_dict(),
                          {k: v.copy() for k, v in opt.m.items()},
                          {k: v.copy() for k, v in opt.v.items()},
                          step=self.step, adam_t=opt.t, seed=self.seed)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> 'TrainState':
        state = cls.initialize(ckpt.config, ckpt.seed)
        state.model.load_state_dict(ckpt.params)
        state.optimizer.state.t = ckpt.adam_t
        state.optimizer.state.m = {k: v.copy() for k, v in ckpt.adam_m.items()}
        state.optimizer.state.v = {k: v.copy() for k, v in ckpt.adam_v.items()}
        state.step = ckpt.step
        return state

    def save(self, path: str) -> None:
        save_checkpoint(path, self.to_checkpoint())

    @classmethod
    def load(cls, path: str) -> 'TrainState':
        return cls.from_checkpoint(load_checkpoint(path))


def batch_indices(seed: int, step: int, count: int, batch_size: int) -> np.ndarray:
    """第 step 步的樣本索引 (不重複抽樣)"""
    if count < 1:
        raise ContractError("cannot sample a batch from an empty dataset")
    rng = step_rng(seed, STREAM_BATCH, step)
    return np.sort(rng.choice(count, size=min(batch_size, count), replace=False))


def train_step(batch: TripletBatch, state: TrainState) -> Dict[str, Any]:
    """
    單步訓練：前向、L_Con + L_Recon、反向、Adam

    Returns:
        {step, l_con, l_recon, l_total, lr, seed}

    Raises:
        ContractError: 空批次
        NonFiniteLossError: 損失非有限值 (列出含 NaN / Inf 的張量)
    """
    if len(batch) == 0:
        raise ContractError("train_step needs a non-empty batch")
    model = state.model
    graph = get_default_graph()
    try:
        out = model.forward(batch, step=state.step)
        con, recon = model.branch_losses(out, batch)
    except ContractError:
        offending = model.nonfinite_tensors()
        graph.clear()
        if offending:
            raise NonFiniteLossError(f"non-finite values at step {state.step}", offending) from None
        raise

    values = {'l_con': float(con.data), 'l_recon': float(recon.data)}
    bad = [name for name, v in values.items() if not np.isfinite(v)]
    if bad:
        offending = bad + model.nonfinite_tensors(out)
        graph.clear()
        logger.error(f"第 {state.step} 步損失非有限值：{', '.join(offending)}")
        raise NonFiniteLossError(f"non-finite loss at step {state.step}: {', '.join(offending)}", offending)

    loss = total_loss(con, recon)
    backward(loss)
    lr = state.optimizer.step()
    state.optimizer.zero_grad()

    record = {'step': state.step, 'l_con': values['l_con'], 'l_recon': values['l_recon'],
              'l_total': float(loss.data), 'lr': lr, 'seed': state.seed}
    state.step += 1
    return record


class Trainer:
    """
    訓練驅動：批次組裝 (背景執行緒)、逐步訓練、指標輸出與檢查點

    Args:
        state: 訓練狀態 (新建或由檢查點載入)
        dataset: 全部樣本堆疊而成的批次
        metrics: JSON-lines 指標輸出
    """

    def __init__(self, state: TrainState, dataset: TripletBatch,
                 metrics: Optional[MetricsWriter] = None,
                 prefetch: int = TRAINING_CONFIG['prefetch_batches'],
                 log_every: int = TRAINING_CONFIG['log_every']):
        size = dataset.lores.shape[-1]
        if size != state.cfg.lores_px:
            raise ConfigError(f"dataset sample size {size} does not match config lores_px {state.cfg.lores_px}")
        if dataset.radar.shape[1] != state.cfg.radar_channels:
            raise ConfigError(f"dataset has {dataset.radar.shape[1]} radar channels, config expects "
                              f"{state.cfg.radar_channels}")
        self.state = state
        self.dataset = dataset
        self.metrics = metrics
        self.prefetch = prefetch
        self.log_every = max(1, log_every)
        self.history: List[Dict[str, Any]] = []

    def batch_for(self, step: int) -> TripletBatch:
        idx = batch_indices(self.state.seed, step, len(self.dataset), self.state.cfg.batch_size)
        return self.dataset.select(idx)

    def train(self, steps: int, on_step: Optional[Callable[[Dict[str, Any]], None]] = None) -> List[Dict[str, Any]]:
        """
        訓練到總步數 steps (已完成的步數會跳過)

        Returns:
            本次執行產生的指標紀錄
        """
        start = self.state.step
        if steps < start:
            logger.warning(f"目標步數 {steps} 小於目前步數 {start}，不做任何訓練")
            return []
        logger.info(f"開始訓練：step {start} → {steps}，batch {self.state.cfg.batch_size}，seed {self.state.seed}")

        records = []
        for step, batch in BatchLoader(self.batch_for, start, steps, self.prefetch):
            record = train_step(batch, self.state)
            records.append(record)
            self.history.append(record)
            if self.metrics is not None:
                self.metrics.write(record)
            if on_step is not None:
                on_step(record)
            if step % self.log_every == 0 or step == steps - 1:
                logger.info(f"step {step}: l_total={record['l_total']:.5f} "
                            f"(con {record['l_con']:.5f}, recon {record['l_recon']:.5f}) lr={record['lr']:.2e}")
        return records


def weights_digest(model: ScaleAlibiModel) -> str:
    """全部權重位元組的 SHA-256 (決定性檢查用)"""
    return data_processor.generate_hash(b''.join(
        np.ascontiguousarray(p.data).tobytes() for p in model.parameters()))
