#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
通用工具模組
Common Utilities Module

提供錯誤類別、日誌設定、雜湊、JSON-lines 輸出與隨機種子等通用功能
"""

import sys
import json
import hashlib
import logging
from typing import Any, Dict, IO, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

# 設置日誌
logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# 錯誤類別
# ---------------------------------------------------------------------------

class ScaleAlibiError(Exception):
    """所有專案錯誤的基底類別"""

    exit_code = 1


class ContractError(ScaleAlibiError):
    """前置條件不成立"""


class DimensionError(ContractError):
    """張量形狀不相符"""


class GeometryError(ContractError):
    """網格覆蓋範圍不一致"""


class TileRangeError(ContractError):
    """瓦片座標或緯度超出 Web-Mercator 範圍"""


class ConfigError(ContractError):
    """設定檔錯誤 (未知欄位、非法數值、與資料不符)"""

    exit_code = 2


class FormatError(ScaleAlibiError):
    """資料集或檢查點格式錯誤"""

    exit_code = 3


class NonFiniteLossError(ScaleAlibiError):
    """訓練損失出現 NaN / Inf"""

    def __init__(self, message: str, offending: Sequence[str] = ()):
        super().__init__(message)
        self.offending = list(offending)


class GradientCheckError(ScaleAlibiError):
    """梯度檢查超出容許誤差"""

    def __init__(self, message: str, worst: str = "", error: float = float("nan")):
        super().__init__(message)
        self.worst = worst
        self.error = error


EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3


def exit_code_for(exc: BaseException) -> int:
    """將例外對應到 CLI 退出碼"""
    if isinstance(exc, ScaleAlibiError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_VERIFY_FAILED


# ---------------------------------------------------------------------------
# 日誌
# ---------------------------------------------------------------------------

def setup_logging(level: Union[str, int] = None, log_file: Optional[str] = None,
                  fmt: Optional[str] = None) -> None:
    """
    設定根日誌器 (只在程式入口呼叫一次)

    Args:
        level: 日誌等級
        log_file: 選用的日誌檔案
        fmt: 日誌格式
    """
    from config import LOGGING_CONFIG

    level = level or LOGGING_CONFIG['level']
    fmt = fmt or LOGGING_CONFIG['format']
    log_file = log_file or LOGGING_CONFIG.get('file')

    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding='utf-8'))

    logging.basicConfig(level=level, format=fmt, handlers=handlers, force=True)


# ---------------------------------------------------------------------------
# 數據處理
# ---------------------------------------------------------------------------

class DataProcessor:
    """數據處理工具類"""

    @staticmethod
    def generate_hash(data: Union[str, bytes]) -> str:
        """生成 SHA-256 雜湊值"""
        if isinstance(data, str):
            data = data.encode('utf-8')
        return hashlib.sha256(data).hexdigest()

    @staticmethod
    def file_hash(path: str, chunk_size: int = 1 << 20) -> str:
        """逐塊計算檔案雜湊"""
        digest = hashlib.sha256()
        with open(path, 'rb') as f:
            for chunk in iter(lambda: f.read(chunk_size), b''):
                digest.update(chunk)
        return digest.hexdigest()

    @staticmethod
    def canonical_json(obj: Any) -> str:
        """排序鍵後的緊湊 JSON (用於雜湊)"""
        return json.dumps(obj, sort_keys=True, separators=(',', ':'))

    @staticmethod
    def is_finite(value: Any) -> bool:
        """檢查數值或陣列是否全為有限值"""
        return bool(np.all(np.isfinite(np.asarray(value, dtype=np.float64))))


class MetricsWriter:
    """JSON-lines 指標輸出 (每步一個 JSON 物件)"""

    def __init__(self, path: Optional[str] = None, stream: Optional[IO[str]] = None):
        self.path = path
        self._own = False
        if path:
            self._fh = open(path, 'w', encoding='utf-8')
            self._own = True
        else:
            self._fh = stream or sys.stdout
        self.records: List[Dict[str, Any]] = []

    def write(self, record: Dict[str, Any]) -> None:
        self.records.append(record)
        self._fh.write(json.dumps(record, sort_keys=True) + '\n')
        self._fh.flush()

    def close(self) -> None:
        if self._own:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path: str) -> List[Dict[str, Any]]:
    """讀取 JSON-lines 指標檔"""
    with open(path, 'r', encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]


def step_rng(seed: int, *stream: int) -> np.random.Generator:
    """由 (seed, stream...) 推導的獨立隨機數產生器"""
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [int(s) for s in stream]))


def moving_average(values: Iterable[float], window: int) -> List[float]:
    """尾端移動平均 (前 window-1 步以現有長度平均)"""
    series = pd.Series(list(values), dtype=np.float64)
    return series.rolling(window, min_periods=1).mean().tolist()


# 創建全局實例
data_processor = DataProcessor()
