#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
多模態遮罩解碼器
Masked Multimodal Decoder

遮罩位置換成可學習的 mask token，加上 2D 正弦位置嵌入，經淺層 transformer
後線性投影為融合分塊 (radar | lores | 折疊後的 hires) 的像素。
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from network.encoders import EncoderBlock, EncoderConfig, TokenStream
from network.layers import LayerNorm, Linear, Module
from numeric.tensor import Tensor
from utils.common import ContractError, DimensionError

# 設置日誌
logger = logging.getLogger(__name__)

MODES = ('radar', 'lores', 'hires')


def sincos_1d(embed_dim: int, pos: np.ndarray) -> np.ndarray:
    """(M,) 位置 → (M, D) 的 [sin | cos] 嵌入"""
    if embed_dim % 2:
        raise DimensionError(f"sin-cos embedding needs an even dimension, got {embed_dim}")
    omega = np.arange(embed_dim // 2, dtype=np.float64) / (embed_dim / 2.0)
    omega = 1.0 / 10000 ** omega
    out = np.outer(pos.reshape(-1).astype(np.float64), omega)
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


def sincos_2d(embed_dim: int, rows: int, cols: int) -> np.ndarray:
    """
    列優先網格的 2D 正弦位置嵌入

    一半維度編碼列座標，另一半編碼行座標；形狀 (rows·cols, D)。
    """
    if embed_dim % 4:
        raise DimensionError(f"2D sin-cos embedding needs a dimension divisible by 4, got {embed_dim}")
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing='ij')
    emb_r = sincos_1d(embed_dim // 2, rr.reshape(-1))
    emb_c = sincos_1d(embed_dim // 2, cc.reshape(-1))
    return np.concatenate([emb_r, emb_c], axis=1)


def space_to_depth(image: np.ndarray, factor: int = 2) -> np.ndarray:
    """
    (..., C, f·H, f·W) → (..., f²·C, H, W)

    out[..., c·f² + dy·f + dx, i, j] = in[..., c, f·i + dy, f·j + dx]
    """
    image = np.asarray(image)
    *lead, c, h, w = image.shape
    if h % factor or w % factor:
        raise DimensionError(f"space_to_depth: {h}x{w} is not divisible by {factor}")
    x = image.reshape(tuple(lead) + (c, h // factor, factor, w // factor, factor))
    n = len(lead)
    x = x.transpose(tuple(range(n)) + (n, n + 2, n + 4, n + 1, n + 3))
    return x.reshape(tuple(lead) + (c * factor * factor, h // factor, w // factor))


def depth_to_space(image: np.ndarray, factor: int = 2) -> np.ndarray:
    """space_to_depth 的反運算"""
    image = np.asarray(image)
    *lead, cf, h, w = image.shape
    c = cf // (factor * factor)
    n = len(lead)
    x = image.reshape(tuple(lead) + (c, factor, factor, h, w))
    x = x.transpose(tuple(range(n)) + (n, n + 3, n + 1, n + 4, n + 2))
    return x.reshape(tuple(lead) + (c, h * factor, w * factor))


@dataclass(frozen=True)
class FusedLayout:
    """融合分塊的通道配置：[radar C_r·p² | lores C_l·p² | hires 4·C_h·p²]"""

    patch_px: int
    radar_channels: int = 2
    lores_channels: int = 3
    hires_channels: int = 3
    include_hires: bool = True

    @property
    def channels(self) -> Dict[str, int]:
        out = OrderedDict(radar=self.radar_channels, lores=self.lores_channels)
        if self.include_hires:
            out['hires'] = 4 * self.hires_channels
        return out

    @property
    def n_channels(self) -> int:
        return sum(self.channels.values())

    @property
    def width(self) -> int:
        return self.n_channels * self.patch_px ** 2

    @property
    def slices(self) -> Dict[str, slice]:
        out: Dict[str, slice] = OrderedDict()
        start = 0
        for mode, ch in self.channels.items():
            stop = start + ch * self.patch_px ** 2
            out[mode] = slice(start, stop)
            start = stop
        return out

    @property
    def modes(self) -> List[str]:
        return list(self.channels)


def random_mask(rng: np.random.Generator, batch: int, length: int, mask_ratio: float) -> np.ndarray:
    """
    每個樣本以隨機雜訊排序決定遮罩 (True = 遮住)

    保留 int(L·(1−ratio)) 個位置，至少遮住一個。
    """
    keep = int(length * (1.0 - mask_ratio))
    keep = min(max(keep, 0), length - 1)
    noise = rng.random((batch, length))
    ids_shuffle = np.argsort(noise, axis=1)
    mask = np.ones((batch, length), dtype=bool)
    rows = np.arange(batch)[:, None]
    mask[rows, ids_shuffle[:, :keep]] = False
    return mask


class MaskedDecoder(Module):
    """
    MAE 風格解碼器

    與 MAE 不同，這裡不丟棄可見 token：全部 L 個位置都進入解碼器，
    遮罩位置以 mask token 取代。
    """

    def __init__(self, in_dim: int, cfg: EncoderConfig, layout: FusedLayout, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.layout = layout
        self.embed = self.add_module('embed', Linear(in_dim, cfg.model_dim, rng))
        self.mask_token = self.add_param('mask_token', rng.normal(0.0, 0.02, size=cfg.model_dim))
        self.blocks: List[EncoderBlock] = [
            self.add_module(f'blocks.{i}', EncoderBlock(cfg, rng)) for i in range(cfg.depth)
        ]
        self.norm = self.add_module('norm', LayerNorm(cfg.model_dim))
        self.head = self.add_module('head', Linear(cfg.model_dim, layout.width, rng))

    def forward(self, fused: TokenStream, mask: np.ndarray) -> Tensor:
        return mae_decode(fused, mask, self.cfg, self)


def mae_decode(fused: TokenStream, mask: np.ndarray, cfg: EncoderConfig, weights: MaskedDecoder) -> Tensor:
    """
    解碼融合串流

    Args:
        fused: modality 為 fused 的串流 (..., L, D_enc)
        mask: 布林遮罩 (..., L)
        cfg: 解碼器配置
        weights: 解碼器權重

    Returns:
        (..., L, N_ch·p²) 的預測

    Raises:
        ContractError: 串流不是 fused 或遮罩長度不符
    """
    if fused.modality != 'fused':
        raise ContractError(f"decoder expects the fused stream, got {fused.modality!r}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != fused.tokens.shape[:-1]:
        raise ContractError(f"mask shape {mask.shape} does not match token layout {fused.tokens.shape[:-1]}")

    x = weights.embed(fused.tokens)
    m = mask[..., None].astype(np.float64)
    x = x * (1.0 - m) + weights.mask_token * m
    x = x + sincos_2d(cfg.model_dim, fused.grid.rows, fused.grid.cols)
    for block in weights.blocks:
        x = block(x, None)
    return weights.head(weights.norm(x))
