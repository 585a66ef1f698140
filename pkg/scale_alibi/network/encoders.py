#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
編碼器模組
Encoder Module

ViT 分塊嵌入、Scale-ALiBi 自注意力編碼器與交叉編碼器。
編碼器不加位置嵌入，位置只透過注意力偏置進入。
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from geometry.bias import PatchGrid, SlopeSchedule, cross_bias, self_bias, slope_schedule
from network.attention import AttentionConfig, BiasedAttention, BiasLike
from network.layers import MLP, LayerNorm, Linear, Module, hidden_width
from numeric.tensor import Tensor, as_tensor
from utils.common import ConfigError, ContractError, DimensionError

# 設置日誌
logger = logging.getLogger(__name__)

MODALITIES = ('radar', 'lores', 'hires', 'joint', 'fused')


@dataclass(frozen=True)
class EncoderConfig:
    depth: int
    model_dim: int
    heads: int
    mlp_ratio: float = 4.0
    patch_px: int = 8
    in_channels: int = 3
    scale_mode: str = 'inv_sqrt_d'

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"encoder depth must be >= 1, got {self.depth}")
        if not (self.mlp_ratio > 0):
            raise ConfigError(f"mlp_ratio must be positive, got {self.mlp_ratio}")
        if self.patch_px < 1 or self.in_channels < 1:
            raise ConfigError(f"invalid patch_px={self.patch_px} / in_channels={self.in_channels}")

    def attention(self, kv_dim: Optional[int] = None) -> AttentionConfig:
        return AttentionConfig(self.heads, self.model_dim, self.scale_mode, kv_dim)

    @property
    def patch_dim(self) -> int:
        return self.in_channels * self.patch_px ** 2


@dataclass
class TokenStream:
    """一個模態的 token 序列 (..., L, D) 與其網格"""

    tokens: Tensor
    grid: PatchGrid
    modality: str

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ContractError(f"unknown modality {self.modality!r}")
        if self.tokens.ndim < 2 or self.tokens.shape[-2] != self.grid.tokens:
            raise DimensionError(
                f"token stream {self.modality}: shape {self.tokens.shape} does not hold "
                f"{self.grid.rows}x{self.grid.cols}={self.grid.tokens} tokens"
            )

    @property
    def length(self) -> int:
        return self.tokens.shape[-2]

    @property
    def width(self) -> int:
        return self.tokens.shape[-1]


def patchify(image: Tensor, patch_px: int) -> Tensor:
    """
    (..., C, H, W) → (..., L, C·p²)

    token 依列優先排序；每塊內依 (通道, 列, 行) 攤平。
    """
    image = as_tensor(image)
    if image.ndim < 3:
        raise DimensionError(f"patchify expects (..., C, H, W), got {image.shape}")
    lead = image.shape[:-3]
    c, h, w = image.shape[-3:]
    if h % patch_px or w % patch_px:
        raise DimensionError(f"image {h}x{w} is not divisible by patch_px {patch_px}")
    rows, cols = h // patch_px, w // patch_px
    n = len(lead)
    x = image.reshape(lead + (c, rows, patch_px, cols, patch_px))
    x = x.transpose(tuple(range(n)) + (n + 1, n + 3, n, n + 2, n + 4))
    return x.reshape(lead + (rows * cols, c * patch_px * patch_px))


def patchify_array(image: np.ndarray, patch_px: int) -> np.ndarray:
    """patchify 的 numpy 版本 (重建目標用)"""
    return patchify(as_tensor(image), patch_px).data


class PatchEmbed(Module):
    """分塊攤平後線性投影到 D"""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.proj = self.add_module('proj', Linear(cfg.patch_dim, cfg.model_dim, rng))

    def forward(self, image: Tensor, gsd: float, modality: str) -> TokenStream:
        return patch_embed(image, self.cfg, gsd, self, modality)


def patch_embed(image: Tensor, cfg: EncoderConfig, gsd: float, weights: PatchEmbed,
                modality: str = 'lores') -> TokenStream:
    """
    將影像切塊並嵌入成 TokenStream

    Raises:
        DimensionError: 通道數不符或影像尺寸無法整除 patch_px
    """
    image = as_tensor(image)
    if image.ndim < 3 or image.shape[-3] != cfg.in_channels:
        raise DimensionError(f"{modality} image: expected {cfg.in_channels} channels, got shape {image.shape}")
    h, w = image.shape[-2:]
    if h % cfg.patch_px or w % cfg.patch_px:
        raise DimensionError(f"{modality} image {h}x{w} is not divisible by patch_px {cfg.patch_px}")
    grid = PatchGrid.from_image(h, w, cfg.patch_px, gsd)
    tokens = weights.proj(patchify(image, cfg.patch_px))
    return TokenStream(tokens, grid, modality)


class EncoderBlock(Module):
    """前置正規化：x + Attn(LN(x)) 後 x + MLP(LN(x))"""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.norm1 = self.add_module('norm1', LayerNorm(cfg.model_dim))
        self.attn = self.add_module('attn', BiasedAttention(cfg.attention(), rng))
        self.norm2 = self.add_module('norm2', LayerNorm(cfg.model_dim))
        self.mlp = self.add_module('mlp', MLP(cfg.model_dim, hidden_width(cfg.model_dim, cfg.mlp_ratio), rng))

    def forward(self, x: Tensor, bias: BiasLike) -> Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, bias)
        return x + self.mlp(self.norm2(x))


class CrossEncoderBlock(Module):
    """x + CrossAttn(LN_q(x), LN_kv(kv)) 後 x + MLP(LN(x))"""

    def __init__(self, cfg: EncoderConfig, kv_dim: int, rng: np.random.Generator):
        super().__init__()
        self.norm_q = self.add_module('norm_q', LayerNorm(cfg.model_dim))
        self.norm_kv = self.add_module('norm_kv', LayerNorm(kv_dim))
        self.attn = self.add_module('attn', BiasedAttention(cfg.attention(kv_dim), rng))
        self.norm2 = self.add_module('norm2', LayerNorm(cfg.model_dim))
        self.mlp = self.add_module('mlp', MLP(cfg.model_dim, hidden_width(cfg.model_dim, cfg.mlp_ratio), rng))

    def forward(self, x: Tensor, kv: Tensor, bias: BiasLike) -> Tensor:
        x = x + self.attn(self.norm_q(x), self.norm_kv(kv), bias)
        return x + self.mlp(self.norm2(x))


class Encoder(Module):
    """單一模態編碼器：分塊嵌入 + depth 個自注意力區塊"""

    def __init__(self, cfg: EncoderConfig, modality: str, rng: np.random.Generator,
                 slopes: Optional[SlopeSchedule] = None, gsd_scaling: bool = True):
        super().__init__()
        self.cfg = cfg
        self.modality = modality
        self.slopes = slopes or slope_schedule(cfg.heads)
        if self.slopes.heads != cfg.heads:
            raise ConfigError(f"{modality} encoder: {self.slopes.heads} slopes for {cfg.heads} heads")
        self.gsd_scaling = gsd_scaling
        self.embed = self.add_module('embed', PatchEmbed(cfg, rng))
        self.blocks: List[EncoderBlock] = [
            self.add_module(f'blocks.{i}', EncoderBlock(cfg, rng)) for i in range(cfg.depth)
        ]

    def forward(self, image: Tensor, gsd: float) -> TokenStream:
        return self.encode(self.embed(image, gsd, self.modality))

    def encode(self, stream: TokenStream) -> TokenStream:
        return encoder_forward(stream, self.cfg, self.slopes, self)


def encoder_forward(stream: TokenStream, cfg: EncoderConfig, slopes: SlopeSchedule,
                    weights: Encoder) -> TokenStream:
    """depth 次 (自注意力 + MLP)，網格不變"""
    if stream.width != cfg.model_dim:
        raise DimensionError(f"encoder expects width {cfg.model_dim}, got {stream.width}")
    bias = self_bias(stream.grid, slopes, weights.gsd_scaling)
    x = stream.tokens
    for block in weights.blocks:
        x = block(x, bias)
    return TokenStream(x, stream.grid, stream.modality)


class CrossEncoder(Module):
    """交叉編碼器：查詢串流關注另一個 (可不同 GSD) 串流，輸出沿用查詢網格"""

    def __init__(self, cfg: EncoderConfig, kv_dim: int, out_modality: str, rng: np.random.Generator,
                 slopes: Optional[SlopeSchedule] = None, gsd_scaling: bool = True):
        super().__init__()
        if out_modality not in ('joint', 'fused'):
            raise ConfigError(f"cross encoder output must be joint or fused, got {out_modality!r}")
        self.cfg = cfg
        self.kv_dim = kv_dim
        self.out_modality = out_modality
        self.slopes = slopes or slope_schedule(cfg.heads)
        if self.slopes.heads != cfg.heads:
            raise ConfigError(f"cross encoder: {self.slopes.heads} slopes for {cfg.heads} heads")
        self.gsd_scaling = gsd_scaling
        self.blocks: List[CrossEncoderBlock] = [
            self.add_module(f'blocks.{i}', CrossEncoderBlock(cfg, kv_dim, rng)) for i in range(cfg.depth)
        ]

    def forward(self, q: TokenStream, kv: TokenStream) -> TokenStream:
        return cross_encoder_forward(q, kv, self.cfg, self.slopes, self)


def cross_encoder_forward(q: TokenStream, kv: TokenStream, cfg: EncoderConfig,
                          slopes: SlopeSchedule, weights: CrossEncoder) -> TokenStream:
    """
    depth 次 (交叉注意力 + MLP)；每個區塊都以原始 kv 串流為鍵/值

    Raises:
        GeometryError: 兩網格物理範圍不一致
    """
    if q.width != cfg.model_dim or kv.width != weights.kv_dim:
        raise DimensionError(
            f"cross encoder expects widths ({cfg.model_dim}, {weights.kv_dim}), got ({q.width}, {kv.width})"
        )
    bias = cross_bias(q.grid, kv.grid, slopes, weights.gsd_scaling)
    x = q.tokens
    for block in weights.blocks:
        x = block(x, kv.tokens, bias)
    return TokenStream(x, q.grid, weights.out_modality)
