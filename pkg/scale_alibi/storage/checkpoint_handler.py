#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
檢查點處理模組
Checkpoint Handler Module

單一小端序檔案：magic `SALB2`、32 位元組設定摘要、設定 JSON 長度 (u32) 與內容、
陣列數 (u32)，接著每個陣列：名稱長度 (u32)、名稱、型別碼 (u8，0 = f64、1 = i64)、
rank (u32)、各維長度 (u64)、資料。
"""

import os
import json
import struct
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import BinaryIO, Dict, Tuple

import numpy as np

from config import CHECKPOINT_CONFIG, ModelConfig
from utils.common import ConfigError, FormatError

# 設置日誌
logger = logging.getLogger(__name__)

MAGIC = CHECKPOINT_CONFIG['magic']
DIGEST_BYTES = 32
DTYPES = {0: np.dtype('<f8'), 1: np.dtype('<i8')}
DTYPE_CODES = {dt: code for code, dt in DTYPES.items()}
ADAM_M = '__adam__.m.'
ADAM_V = '__adam__.v.'
STATE = '__state__.'
STATE_KEYS = ('step', 'adam_t', 'seed')


@dataclass
class Checkpoint:
    """檢查點內容"""

    config: ModelConfig
    params: 'OrderedDict[str, np.ndarray]'
    adam_m: Dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    adam_t: int = 0
    seed: int = 0


def write_checkpoint(f: BinaryIO, config: ModelConfig, arrays: 'OrderedDict[str, np.ndarray]') -> None:
    config_bytes = config.to_json().encode('utf-8')
    f.write(MAGIC)
    f.write(config.digest())
    f.write(struct.pack('<I', len(config_bytes)))
    f.write(config_bytes)
    f.write(struct.pack('<I', len(arrays)))
    for name, arr in arrays.items():
        encoded = name.encode('utf-8')
        arr = np.asarray(arr)
        dtype = DTYPES[1] if np.issubdtype(arr.dtype, np.integer) else DTYPES[0]
        f.write(struct.pack('<I', len(encoded)))
        f.write(encoded)
        f.write(struct.pack('<BI', DTYPE_CODES[dtype], arr.ndim))
        if arr.ndim:
            f.write(struct.pack(f'<{arr.ndim}Q', *arr.shape))
        f.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"checkpoint truncated while reading {what}")
    return buf


def read_checkpoint(f: BinaryIO) -> Tuple[ModelConfig, 'OrderedDict[str, np.ndarray]']:
    magic = f.read(len(MAGIC))
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    digest = _read_exact(f, DIGEST_BYTES, 'config digest')
    (config_len,) = struct.unpack('<I', _read_exact(f, 4, 'config length'))
    try:
        data = json.loads(_read_exact(f, config_len, 'config').decode('utf-8'))
        if not isinstance(data, dict):
            raise FormatError("checkpoint config must be a JSON object")
        config = ModelConfig.from_dict(data)
    except (UnicodeDecodeError, json.JSONDecodeError, ConfigError) as e:
        raise FormatError(f"checkpoint config is invalid: {e}") from None
    if digest != config.digest():
        raise FormatError("checkpoint config digest does not match its header")

    (count,) = struct.unpack('<I', _read_exact(f, 4, 'array count'))
    arrays: 'OrderedDict[str, np.ndarray]' = OrderedDict()
    for i in range(count):
        (name_len,) = struct.unpack('<I', _read_exact(f, 4, f'array {i} name length'))
        name = _read_exact(f, name_len, f'array {i} name').decode('utf-8', errors='replace')
        code, rank = struct.unpack('<BI', _read_exact(f, 5, f'{name} type and rank'))
        if code not in DTYPES:
            raise FormatError(f"array {name!r} has unknown type code {code}")
        dtype = DTYPES[code]
        shape = struct.unpack(f'<{rank}Q', _read_exact(f, 8 * rank, f'{name} extents')) if rank else ()
        n = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(_read_exact(f, n * dtype.itemsize, f'{name} data'), dtype=dtype)
        arrays[name] = data.astype(np.int64 if code else np.float64).reshape(shape)
    if f.read(1):
        raise FormatError("trailing bytes after the last checkpoint array")
    return config, arrays


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    """寫入單一檔案的檢查點 (先寫暫存檔再換名)"""
    arrays: 'OrderedDict[str, np.ndarray]' = OrderedDict(
        (name, np.asarray(arr, dtype=np.float64)) for name, arr in ckpt.params.items())
    for name in ckpt.params:
        if name in ckpt.adam_m:
            arrays[ADAM_M + name] = np.asarray(ckpt.adam_m[name], dtype=np.float64)
            arrays[ADAM_V + name] = np.asarray(ckpt.adam_v[name], dtype=np.float64)
    for key in STATE_KEYS:
        arrays[STATE + key] = np.array(int(getattr(ckpt, key)), dtype=np.int64)

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp = path + '.tmp'
    with open(tmp, 'wb') as f:
        write_checkpoint(f, ckpt.config, arrays)
    os.replace(tmp, path)
    logger.info(f"檢查點已儲存：{path} (step {ckpt.step}, {len(ckpt.params)} 個參數陣列)")


def load_checkpoint(path: str) -> Checkpoint:
    """
    讀取檢查點

    Raises:
        FormatError: 格式錯誤或設定摘要不符
    """
    with open(path, 'rb') as f:
        config, arrays = read_checkpoint(f)

    params: 'OrderedDict[str, np.ndarray]' = OrderedDict()
    ckpt = Checkpoint(config, params)
    for name, arr in arrays.items():
        if name.startswith(ADAM_M):
            ckpt.adam_m[name[len(ADAM_M):]] = arr
        elif name.startswith(ADAM_V):
            ckpt.adam_v[name[len(ADAM_V):]] = arr
        elif name.startswith(STATE):
            key = name[len(STATE):]
            if key not in STATE_KEYS or arr.dtype != np.int64 or arr.ndim:
                raise FormatError(f"bad checkpoint state entry {name!r}")
            setattr(ckpt, key, int(arr))
        elif arr.dtype != np.float64:
            raise FormatError(f"parameter {name!r} must be stored as f64")
        else:
            params[name] = arr
    logger.info(f"檢查點已載入：{path} (step {ckpt.step})")
    return ckpt
