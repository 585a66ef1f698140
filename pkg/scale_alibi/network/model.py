#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Scale-ALiBi 完整模型
Scale-ALiBi Model Assembly

三個單模態編碼器 → 交叉編碼器 (lores←radar) → 交叉編碼器 (joint←hires)
→ 遮罩 → 解碼器；對比損失取自三個單模態編碼器的池化表示
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import ModelConfig
from geometry.bias import PatchGrid
from network.decoder import FusedLayout, MaskedDecoder, random_mask, space_to_depth
from network.encoders import CrossEncoder, Encoder, EncoderConfig, TokenStream, patchify_array
from network.layers import Linear, Module
from network.losses import (ContrastiveBatch, ReconBatch, contrastive_loss, normalize_patches,
                            literal_infonce, pool_and_normalize, reconstruction_loss, total_loss)
from numeric.tensor import Tensor, as_tensor, no_grad
from pipeline.triplet import TripletBatch, check_alignment
from utils.common import ConfigError, DimensionError, step_rng

# 設置日誌
logger = logging.getLogger(__name__)

# 隨機流編號：初始化、批次抽樣、遮罩
STREAM_INIT = 0
STREAM_BATCH = 1
STREAM_MASK = 2

# 梯度檢查與報告用的參數群組 (依前綴)
PARAMETER_GROUPS = ('encoder_radar', 'encoder_lores', 'encoder_hires',
                    'cross_radar_lores', 'cross_hires', 'decoder', 'projection')


@dataclass
class ForwardOutput:
    z: Dict[str, Tensor]
    streams: Dict[str, TokenStream]
    fused: TokenStream
    predictions: Tensor
    mask: np.ndarray


@dataclass
class LossBreakdown:
    con: Tensor
    recon: Tensor
    total: Tensor

    def as_record(self) -> Dict[str, float]:
        return {'l_con': float(self.con.data), 'l_recon': float(self.recon.data),
                'l_total': float(self.total.data)}


class ScaleAlibiModel(Module):
    """依 ModelConfig 建立全部權重；權重初始化只由 seed 決定"""

    def __init__(self, cfg: ModelConfig, seed: Optional[int] = None):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else seed
        rng = step_rng(self.seed, STREAM_INIT)

        def enc_cfg(modality, channels):
            spec = cfg.encoder_spec(modality)
            return EncoderConfig(spec['depth'], spec['model_dim'], spec['heads'], cfg.mlp_ratio,
                                 cfg.patch_px, channels, cfg.scale_mode)

        self.modes = ['radar', 'lores'] + (['hires'] if cfg.include_hires else [])
        channels = {'radar': cfg.radar_channels, 'lores': cfg.lores_channels, 'hires': cfg.hires_channels}
        self.encoders: Dict[str, Encoder] = {}
        for m in self.modes:
            self.encoders[m] = self.add_module(
                f'encoder_{m}', Encoder(enc_cfg(m, channels[m]), m, rng, gsd_scaling=cfg.gsd_scaling))

        cross_cfg = lambda depth: EncoderConfig(depth, cfg.lores_dim, cfg.cross_heads, cfg.mlp_ratio,
                                                cfg.patch_px, cfg.lores_channels, cfg.scale_mode)
        self.cross_radar = self.add_module('cross_radar_lores', CrossEncoder(
            cross_cfg(cfg.cross_radar_depth), cfg.radar_dim, 'joint' if cfg.include_hires else 'fused',
            rng, gsd_scaling=cfg.gsd_scaling))
        self.cross_hires: Optional[CrossEncoder] = None
        if cfg.include_hires:
            self.cross_hires = self.add_module('cross_hires', CrossEncoder(
                cross_cfg(cfg.cross_hires_depth), cfg.hires_dim, 'fused', rng, gsd_scaling=cfg.gsd_scaling))

        self.projections: Dict[str, Linear] = {}
        if cfg.projection_dim:
            for m in self.modes:
                self.projections[m] = self.add_module(
                    f'projection_{m}', Linear(getattr(cfg, f'{m}_dim'), cfg.projection_dim, rng))

        self.layout = FusedLayout(cfg.patch_px, cfg.radar_channels, cfg.lores_channels,
                                  cfg.hires_channels, cfg.include_hires)
        dec_cfg = EncoderConfig(cfg.decoder_depth, cfg.decoder_dim, cfg.decoder_heads, cfg.mlp_ratio,
                                cfg.patch_px, 1, cfg.scale_mode)
        self.decoder = self.add_module('decoder', MaskedDecoder(cfg.lores_dim, dec_cfg, self.layout, rng))
        self.assign_names()
        logger.info(f"模型建立完成：{self.num_parameters()} 個參數，模態 {self.modes}")

    # 網格
    def grids(self, lores_px: int) -> Dict[str, PatchGrid]:
        """各模態的網格；hires 的 GSD 為 lores 的一半、像素數加倍"""
        p, g = self.cfg.patch_px, float(self.cfg.lores_gsd)
        out = {'radar': PatchGrid.from_image(lores_px, lores_px, p, g),
               'lores': PatchGrid.from_image(lores_px, lores_px, p, g)}
        if self.cfg.include_hires:
            out['hires'] = PatchGrid.from_image(2 * lores_px, 2 * lores_px, p, g / 2.0)
        return out

    def gsd_of(self, mode: str) -> float:
        return self.cfg.hires_gsd if mode == 'hires' else float(self.cfg.lores_gsd)

    def draw_mask(self, batch: int, length: int, step: int) -> np.ndarray:
        return random_mask(step_rng(self.seed, STREAM_MASK, step), batch, length, self.cfg.mask_ratio)

    def forward(self, batch: TripletBatch, mask: Optional[np.ndarray] = None, step: int = 0) -> ForwardOutput:
        """
        完整前向傳播

        Args:
            batch: 對齊三元組批次
            mask: 選用的固定遮罩 (N, L)；None 時由 (seed, step) 抽取
            step: 訓練步數 (決定遮罩)

        Raises:
            GeometryError: 三元組未對齊
        """
        check_alignment(batch.radar, batch.lores, batch.hires)
        images = {'radar': batch.radar, 'lores': batch.lores, 'hires': batch.hires}
        streams = {m: self.encoders[m](as_tensor(images[m]), self.gsd_of(m)) for m in self.modes}
        z = {m: pool_and_normalize(streams[m], self.projections.get(m)) for m in self.modes}

        joint = self.cross_radar(streams['lores'], streams['radar'])
        fused = self.cross_hires(joint, streams['hires']) if self.cross_hires is not None else joint

        n, length = len(batch), fused.length
        if mask is None:
            mask = self.draw_mask(n, length, step)
        predictions = self.decoder(fused, mask)
        return ForwardOutput(z, streams, fused, predictions, np.asarray(mask, dtype=bool))

    def targets(self, batch: TripletBatch) -> Dict[str, np.ndarray]:
        """每模式的分塊並逐塊標準化的重建目標；hires 先 space-to-depth 折疊到 lores 網格"""
        p = self.cfg.patch_px
        out = {'radar': normalize_patches(patchify_array(batch.radar, p)),
               'lores': normalize_patches(patchify_array(batch.lores, p))}
        if self.cfg.include_hires:
            out['hires'] = normalize_patches(patchify_array(space_to_depth(batch.hires), p))
        return out

    def branch_losses(self, out: ForwardOutput, batch: TripletBatch,
                      targets: Optional[Dict[str, np.ndarray]] = None) -> Tuple[Tensor, Tensor]:
        """(L_Con, L_Recon)"""
        con = contrastive_loss(ContrastiveBatch(out.z, self.cfg.temperature))
        recon = reconstruction_loss(ReconBatch(out.predictions, targets or self.targets(batch),
                                               out.mask, self.layout, self.cfg.recon_error))
        return con, recon

    def losses(self, out: ForwardOutput, batch: TripletBatch,
               targets: Optional[Dict[str, np.ndarray]] = None) -> LossBreakdown:
        con, recon = self.branch_losses(out, batch, targets)
        return LossBreakdown(con, recon, total_loss(con, recon))

    def nonfinite_tensors(self, out: Optional[ForwardOutput] = None) -> List[str]:
        """列出含 NaN / Inf 的參數與中間張量名稱 (診斷用)"""
        names = [name for name, p in self.named_parameters() if not np.all(np.isfinite(p.data))]
        if out is not None:
            for m, t in out.z.items():
                if not np.all(np.isfinite(t.data)):
                    names.append(f'z_{m}')
            for m, s in out.streams.items():
                if not np.all(np.isfinite(s.tokens.data)):
                    names.append(f'stream_{m}')
            if not np.all(np.isfinite(out.fused.tokens.data)):
                names.append('fused')
            if not np.all(np.isfinite(out.predictions.data)):
                names.append('predictions')
        return names

    def literal_contrastive(self, out: ForwardOutput) -> float:
        """字面公式的對比損失 (評估用)"""
        with no_grad():
            return float(literal_infonce(ContrastiveBatch(out.z, self.cfg.temperature)).data)

    def encode_for_probe(self, image: np.ndarray, which: str = 'lores') -> np.ndarray:
        """
        探測用特徵：編碼器輸出的平均池化後 L2 正規化 (不經投影頭)

        Args:
            image: C×H×W 或 N×C×H×W，須已縮放到編碼器原生尺寸
            which: 'lores' 或 'hires'

        Returns:
            (model_dim,) 或 (N, model_dim)

        Raises:
            DimensionError: 影像尺寸不是原生尺寸
        """
        if which not in ('lores', 'hires') or which not in self.encoders:
            raise ConfigError(f"no {which!r} encoder available for probing")
        native = self.cfg.lores_px if which == 'lores' else self.cfg.hires_px
        image = np.asarray(image, dtype=np.float64)
        if image.ndim not in (3, 4) or image.shape[-2:] != (native, native):
            raise DimensionError(f"{which} encoder expects {native}x{native} images, got shape {image.shape}")
        with no_grad():
            stream = self.encoders[which](as_tensor(image), self.gsd_of(which))
            return pool_and_normalize(stream).data.copy()

    def parameter_groups(self) -> Dict[str, list]:
        groups: Dict[str, list] = {}
        for name, p in self.named_parameters():
            head = name.split('.', 1)[0]
            group = 'projection' if head.startswith('projection_') else head
            groups.setdefault(group, []).append((name, p))
        return groups
