#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
系統配置文件
Scale-ALiBi System Configuration

模型架構、訓練、探測、資料集與日誌的配置區段
"""

import json
import math
import os
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Optional

from utils.common import ConfigError, data_processor

# 訓練配置
TRAINING_CONFIG = {
    'batch_size': 16,
    'learning_rate': 1e-3,
    'warmup_steps': 10,
    'adam_betas': (0.9, 0.999),
    'adam_eps': 1e-8,
    'log_every': 10,          # 每 N 步寫一次日誌
    'prefetch_batches': 4,    # 批次組裝佇列長度
    'acceptance_steps': 200,
}

# 探測配置
PROBE_CONFIG = {
    'knn_k': 20,
    'kmeans_max_iter': 50,
    'kmeans_tol': 1e-6,       # 群心移動的絕對距離門檻
    'mlp_hidden': 2048,
    'mlp_epochs': 200,
    'test_fraction': 0.25,
}

# 資料集配置
DATASET_CONFIG = {
    'manifest_file': 'manifest.json',
    'samples_file': 'samples.bin',
    'magic': 'SALD',
    'version': 1,
    'default_size': 32,
    # 論文中的資料集規模只作為 manifest 標記
    'subsets': {
        'small': {'zoom': 15, 'description': 'Test/debug set'},
        'full': {'zoom': 15, 'description': 'Full size dataset'},
        'micro': {'zoom': 17, 'description': 'Zoomed-in dataset'},
    },
    # 美國本土 (west, south, east, north)
    'coverage_bbox': (-124.7, 24.5, -66.9, 49.4),
}

# 檢查點配置
CHECKPOINT_CONFIG = {
    'magic': b'SALB2',
}

# 日誌配置
LOGGING_CONFIG = {
    'level': os.getenv('SCALE_ALIBI_LOG_LEVEL', 'INFO'),
    'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    'file': os.getenv('SCALE_ALIBI_LOG_FILE') or None,
}

SCALE_MODES = ('inv_sqrt_d', 'sqrt_d_literal')
RECON_ERRORS = ('mse', 'mae')


@dataclass
class ModelConfig:
    """模型與訓練的全部超參數 (JSON 設定檔的每個欄位)"""

    lores_px: int = 32
    hires_px: Optional[int] = None
    patch_px: int = 8
    lores_gsd: float = 1.0
    radar_channels: int = 2
    lores_channels: int = 3
    hires_channels: int = 3
    # 編碼器
    radar_depth: int = 2
    radar_dim: int = 64
    radar_heads: int = 4
    lores_depth: int = 2
    lores_dim: int = 64
    lores_heads: int = 4
    hires_depth: int = 2
    hires_dim: int = 64
    hires_heads: int = 4
    mlp_ratio: float = 4.0
    # 交叉編碼器
    cross_radar_depth: int = 1
    cross_hires_depth: int = 1
    cross_heads: int = 4
    # 解碼器
    decoder_depth: int = 1
    decoder_dim: int = 64
    decoder_heads: int = 4
    # 目標函數
    mask_ratio: float = 0.75
    temperature: float = 0.1
    projection_dim: Optional[int] = None
    recon_error: str = 'mse'
    scale_mode: str = 'inv_sqrt_d'
    include_hires: bool = True
    gsd_scaling: bool = True
    # 訓練
    learning_rate: float = TRAINING_CONFIG['learning_rate']
    warmup_steps: int = TRAINING_CONFIG['warmup_steps']
    batch_size: int = TRAINING_CONFIG['batch_size']
    adam_beta1: float = TRAINING_CONFIG['adam_betas'][0]
    adam_beta2: float = TRAINING_CONFIG['adam_betas'][1]
    adam_eps: float = TRAINING_CONFIG['adam_eps']
    seed: int = 42

    def __post_init__(self):
        if self.hires_px is None:
            self.hires_px = 2 * self.lores_px

    @property
    def lores_tokens(self) -> int:
        return (self.lores_px // self.patch_px) ** 2

    @property
    def hires_tokens(self) -> int:
        return (self.hires_px // self.patch_px) ** 2

    @property
    def hires_gsd(self) -> float:
        return self.lores_gsd / 2.0

    def encoder_spec(self, modality: str) -> Dict[str, Any]:
        return {
            'depth': getattr(self, f'{modality}_depth'),
            'model_dim': getattr(self, f'{modality}_dim'),
            'heads': getattr(self, f'{modality}_heads'),
        }

    def validate(self) -> 'ModelConfig':
        """檢查所有不變量，失敗時拋出 ConfigError"""
        errors = validate_model_config(self)
        if errors:
            raise ConfigError("invalid model config: " + "; ".join(errors))
        return self

    # 序列化
    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def digest(self) -> bytes:
        """設定的 SHA-256 摘要 (32 位元組)"""
        return bytes.fromhex(data_processor.generate_hash(data_processor.canonical_json(self.to_dict())))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ModelConfig':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data).validate()

    @classmethod
    def from_json(cls, path: str) -> 'ModelConfig':
        with open(path, 'r', encoding='utf-8') as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must contain a JSON object")
        return cls.from_dict(data)

    def save(self, path: str) -> None:
        with open(path, 'w', encoding='utf-8') as f:
            f.write(self.to_json() + '\n')


def _type_errors(cfg: 'ModelConfig') -> List[str]:
    """依欄位預設值的型別檢查 JSON 讀入的值 (預設為 None 的欄位視為選用整數)"""
    errors = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        default = f.default
        if isinstance(default, bool):
            ok = isinstance(value, bool)
        elif isinstance(default, int) or default is None:
            ok = (isinstance(value, int) and not isinstance(value, bool)) or (default is None and value is None)
        elif isinstance(default, float):
            ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
        else:
            ok = isinstance(value, type(default))
        if not ok:
            errors.append(f"{f.name} has the wrong type: {value!r}")
    return errors


def validate_model_config(cfg: ModelConfig) -> List[str]:
    """驗證模型配置，回傳錯誤列表"""
    errors = _type_errors(cfg)
    if errors:
        return errors

    def positive_int(name):
        value = getattr(cfg, name)
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            errors.append(f"{name} must be a positive integer, got {value!r}")
            return False
        return True

    for name in ('lores_px', 'hires_px', 'patch_px', 'radar_channels', 'lores_channels',
                 'hires_channels', 'cross_heads', 'decoder_depth', 'decoder_dim', 'decoder_heads', 'batch_size'):
        positive_int(name)
    for name in ('cross_radar_depth', 'cross_hires_depth', 'warmup_steps', 'seed'):
        value = getattr(cfg, name)
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            errors.append(f"{name} must be a non-negative integer, got {value!r}")
    if errors:
        return errors

    if cfg.hires_px != 2 * cfg.lores_px:
        errors.append(f"hires_px must equal 2*lores_px ({2 * cfg.lores_px}), got {cfg.hires_px}")
    if cfg.lores_px % cfg.patch_px:
        errors.append(f"lores_px {cfg.lores_px} is not divisible by patch_px {cfg.patch_px}")
    if not (cfg.lores_gsd > 0):
        errors.append(f"lores_gsd must be positive, got {cfg.lores_gsd}")

    modalities = ['radar', 'lores'] + (['hires'] if cfg.include_hires else [])
    for m in modalities:
        for part in ('depth', 'dim', 'heads'):
            positive_int(f'{m}_{part}')
    if errors:
        return errors
    for m in modalities:
        dim, heads = getattr(cfg, f'{m}_dim'), getattr(cfg, f'{m}_heads')
        if dim % heads:
            errors.append(f"{m}_dim {dim} is not divisible by {m}_heads {heads}")
    if cfg.lores_dim % cfg.cross_heads:
        errors.append(f"lores_dim {cfg.lores_dim} is not divisible by cross_heads {cfg.cross_heads}")
    if cfg.decoder_dim % cfg.decoder_heads:
        errors.append(f"decoder_dim {cfg.decoder_dim} is not divisible by decoder_heads {cfg.decoder_heads}")
    if cfg.decoder_dim % 4:
        errors.append(f"decoder_dim {cfg.decoder_dim} must be divisible by 4 for the 2D sinusoidal embedding")
    if cfg.cross_radar_depth < 1:
        errors.append("cross_radar_depth must be >= 1")
    if cfg.include_hires and cfg.cross_hires_depth < 1:
        errors.append("cross_hires_depth must be >= 1 when include_hires is set")

    if cfg.projection_dim is None:
        dims = {getattr(cfg, f'{m}_dim') for m in modalities}
        if len(dims) != 1:
            errors.append("encoder dims differ; set projection_dim to align contrastive representations")
    elif not isinstance(cfg.projection_dim, int) or cfg.projection_dim < 1:
        errors.append(f"projection_dim must be a positive integer, got {cfg.projection_dim!r}")

    if not (0.0 < cfg.mask_ratio < 1.0):
        errors.append(f"mask_ratio must lie in (0, 1), got {cfg.mask_ratio}")
    if not (cfg.temperature > 0):
        errors.append(f"temperature must be positive, got {cfg.temperature}")
    if not (cfg.mlp_ratio > 0):
        errors.append(f"mlp_ratio must be positive, got {cfg.mlp_ratio}")
    if cfg.recon_error not in RECON_ERRORS:
        errors.append(f"recon_error must be one of {RECON_ERRORS}, got {cfg.recon_error!r}")
    if cfg.scale_mode not in SCALE_MODES:
        errors.append(f"scale_mode must be one of {SCALE_MODES}, got {cfg.scale_mode!r}")
    if not (cfg.learning_rate > 0):
        errors.append(f"learning_rate must be positive, got {cfg.learning_rate}")
    if not (0 <= cfg.adam_beta1 < 1 and 0 <= cfg.adam_beta2 < 1):
        errors.append("adam betas must lie in [0, 1)")
    return errors


# 模型預設
MODEL_PRESETS = {
    'micro': dict(
        lores_px=8, patch_px=4,
        radar_depth=1, radar_dim=8, radar_heads=1,
        lores_depth=1, lores_dim=8, lores_heads=1,
        hires_depth=1, hires_dim=8, hires_heads=1,
        cross_radar_depth=1, cross_hires_depth=1, cross_heads=1,
        decoder_depth=1, decoder_dim=8, decoder_heads=1,
        mlp_ratio=2.0, batch_size=2, mask_ratio=0.5,
    ),
    'desk': dict(),
    'large': dict(lores_px=256, lores_gsd=10.0),
}


def preset(name: str, **overrides) -> ModelConfig:
    """依名稱取得模型預設，可覆寫欄位"""
    if name not in MODEL_PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(MODEL_PRESETS)}")
    values = dict(MODEL_PRESETS[name])
    values.update(overrides)
    return ModelConfig.from_dict(values)


def get_config(section=None):
    """獲取配置"""
    if section:
        return globals().get(f'{section.upper()}_CONFIG', {})

    return {
        'training': TRAINING_CONFIG,
        'probe': PROBE_CONFIG,
        'dataset': DATASET_CONFIG,
        'checkpoint': CHECKPOINT_CONFIG,
        'logging': LOGGING_CONFIG,
        'presets': MODEL_PRESETS,
    }


def validate_config():
    """驗證配置"""
    errors = []

    if LOGGING_CONFIG['level'] not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
        errors.append(f"Unknown log level: {LOGGING_CONFIG['level']}")
    if not (0 < PROBE_CONFIG['test_fraction'] < 1):
        errors.append("Probe test fraction must lie in (0, 1)")
    for name in MODEL_PRESETS:
        try:
            preset(name)
        except ConfigError as e:
            errors.append(f"Preset {name}: {e}")

    return errors


if __name__ == "__main__":
    # 測試配置
    print("=== Scale-ALiBi 系統配置 ===")

    for name in MODEL_PRESETS:
        cfg = preset(name)
        print(f"\n{name.upper()}: lores {cfg.lores_px}px / hires {cfg.hires_px}px, "
              f"{cfg.lores_tokens} + {cfg.hires_tokens} tokens")

    errors = validate_config()
    if errors:
        print(f"\n配置錯誤:")
        for error in errors:
            print(f"  - {error}")
    else:
        print(f"\n✅ 配置驗證通過")
