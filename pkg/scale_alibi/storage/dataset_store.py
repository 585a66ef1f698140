#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
資料集儲存模組
Dataset Storage Module

資料集容器 = manifest.json + samples.bin。
每筆記錄：z, x, y, class (u32 LE)，接著 radar / lores / hires (f32 LE，通道優先)。
"""

import os
import json
import struct
import hashlib
import logging
from typing import Any, Dict, Iterable, Iterator, List, Optional

import numpy as np

from config import DATASET_CONFIG
from pipeline.tiles import TileId
from pipeline.triplet import AlignedTriplet, TripletBatch
from utils.common import ContractError, FormatError, TileRangeError

# 設置日誌
logger = logging.getLogger(__name__)

HEADER = struct.Struct('<4I')
F32 = np.dtype('<f4')


def record_size(size: int, radar_channels: int = 2) -> int:
    """單筆記錄位元組數：16 + 4·(C_r + 3 + 12)·S²"""
    return HEADER.size + F32.itemsize * (radar_channels + 3 + 12) * size * size


def encode_record(t: AlignedTriplet) -> bytes:
    parts = [HEADER.pack(t.tile.z, t.tile.x, t.tile.y, t.class_id)]
    for raster in (t.radar, t.lores, t.hires):
        parts.append(np.ascontiguousarray(raster, dtype=F32).tobytes())
    return b''.join(parts)


def decode_record(buf: bytes, size: int, radar_channels: int, index: int) -> AlignedTriplet:
    expected = record_size(size, radar_channels)
    if len(buf) != expected:
        raise FormatError(f"truncated record {index}: {len(buf)} of {expected} bytes")
    z, x, y, cls = HEADER.unpack_from(buf, 0)
    offset = HEADER.size
    rasters = []
    for shape in ((radar_channels, size, size), (3, size, size), (3, 2 * size, 2 * size)):
        count = int(np.prod(shape))
        arr = np.frombuffer(buf, dtype=F32, count=count, offset=offset).reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"record {index}: non-finite raster value")
        rasters.append(arr.astype(np.float32))
        offset += count * F32.itemsize
    try:
        tile = TileId(z, x, y)
    except TileRangeError as e:
        raise FormatError(f"record {index}: invalid tile ({e})") from None
    return AlignedTriplet(tile, int(cls), *rasters)


class DatasetStore:
    """資料集容器的讀寫處理類"""

    def __init__(self, path: str):
        """
        Args:
            path: 資料集目錄
        """
        self.path = path
        self.manifest_path = os.path.join(path, DATASET_CONFIG['manifest_file'])
        self.samples_path = os.path.join(path, DATASET_CONFIG['samples_file'])
        self._manifest: Optional[Dict[str, Any]] = None

    # 寫入
    def write(self, samples: Iterable[AlignedTriplet], size: Optional[int] = None,
              seed: Optional[int] = None, classes: Optional[int] = None,
              subset: Optional[str] = None, zoom: Optional[int] = None,
              radar_channels: int = 2) -> Dict[str, Any]:
        """
        寫入資料集並回傳 manifest

        Raises:
            ContractError: 樣本尺寸不一致
            OSError: 無法寫入
        """
        os.makedirs(self.path, exist_ok=True)
        offsets: List[int] = []
        tiles: List[List[int]] = []
        labels: List[int] = []
        digest = hashlib.sha256()
        position = 0

        samples_tmp = self.samples_path + '.tmp'
        manifest_tmp = self.manifest_path + '.tmp'
        try:
            with open(samples_tmp, 'wb') as f:
                for i, t in enumerate(samples):
                    if size is None:
                        size = t.size
                    if t.size != size or t.radar.shape[0] != radar_channels:
                        raise ContractError(f"sample {i}: size {t.size}/{t.radar.shape[0]} radar channels "
                                            f"differs from {size}/{radar_channels}")
                    buf = encode_record(t)
                    f.write(buf)
                    digest.update(buf)
                    offsets.append(position)
                    position += len(buf)
                    tiles.append(list(t.tile.as_tuple()))
                    labels.append(t.class_id)
        except BaseException:
            if os.path.exists(samples_tmp):
                os.remove(samples_tmp)
            raise

        size = size or DATASET_CONFIG['default_size']
        manifest = {
            'format': DATASET_CONFIG['magic'],
            'version': DATASET_CONFIG['version'],
            'count': len(offsets),
            'size': size,
            'radar_channels': radar_channels,
            'record_size': record_size(size, radar_channels),
            'seed': seed,
            'classes': classes,
            'subset': subset,
            'zoom': zoom,
            'offsets': offsets,
            'tiles': tiles,
            'labels': labels,
            'samples_sha256': digest.hexdigest(),
        }
        with open(manifest_tmp, 'w', encoding='utf-8') as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write('\n')
        # 舊 manifest 先移除：中途中斷時目錄沒有 manifest，而不是新舊混用
        if os.path.exists(self.manifest_path):
            os.remove(self.manifest_path)
        os.replace(samples_tmp, self.samples_path)
        os.replace(manifest_tmp, self.manifest_path)
        self._manifest = manifest
        logger.info(f"資料集已寫入 {self.path}：{len(offsets)} 筆，S={size}")
        return manifest

    # 讀取
    @property
    def manifest(self) -> Dict[str, Any]:
        if self._manifest is None:
            self._manifest = self._load_manifest()
        return self._manifest

    def _load_manifest(self) -> Dict[str, Any]:
        try:
            with open(self.manifest_path, 'r', encoding='utf-8') as f:
                manifest = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"manifest {self.manifest_path} is not valid JSON: {e}") from None

        if manifest.get('format') != DATASET_CONFIG['magic']:
            raise FormatError(f"bad dataset magic {manifest.get('format')!r}")
        if manifest.get('version') != DATASET_CONFIG['version']:
            raise FormatError(f"unsupported dataset version {manifest.get('version')!r}")
        for key in ('count', 'size', 'record_size', 'offsets', 'tiles', 'labels'):
            if key not in manifest:
                raise FormatError(f"manifest is missing {key!r}")

        count = manifest['count']
        lengths = {name: len(manifest[name]) for name in ('offsets', 'tiles', 'labels')}
        if any(n != count for n in lengths.values()):
            raise FormatError(f"manifest count {count} does not match record tables {lengths}")
        radar_channels = manifest.get('radar_channels', 2)
        rsize = record_size(manifest['size'], radar_channels)
        if manifest['record_size'] != rsize:
            raise FormatError(f"record_size {manifest['record_size']} != {rsize} for S={manifest['size']}")
        offsets = manifest['offsets']
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise FormatError("record offsets are not strictly increasing")
        if offsets and offsets != [i * rsize for i in range(count)]:
            raise FormatError("record offsets do not follow the fixed record size")
        return manifest

    def __len__(self) -> int:
        return self.manifest['count']

    def __iter__(self) -> Iterator[AlignedTriplet]:
        return self.read()

    def read(self) -> Iterator[AlignedTriplet]:
        """
        依序讀取所有記錄

        Raises:
            FormatError: 記錄截斷、檔案長度與 manifest 不符
        """
        manifest = self.manifest
        count, size = manifest['count'], manifest['size']
        radar_channels = manifest.get('radar_channels', 2)
        rsize = manifest['record_size']
        actual = os.path.getsize(self.samples_path)
        if actual > count * rsize:
            raise FormatError(f"samples file holds {actual} bytes but manifest count {count} "
                              f"implies {count * rsize}")

        with open(self.samples_path, 'rb') as f:
            for i in range(count):
                f.seek(manifest['offsets'][i])
                buf = f.read(rsize)
                t = decode_record(buf, size, radar_channels, i)
                if list(t.tile.as_tuple()) != list(manifest['tiles'][i]) or t.class_id != manifest['labels'][i]:
                    raise FormatError(f"record {i} disagrees with the manifest tile/label table")
                yield t

    def load_all(self) -> List[AlignedTriplet]:
        return list(self.read())

    def load_batch(self) -> TripletBatch:
        samples = self.load_all()
        if not samples:
            raise ContractError(f"dataset {self.path} is empty")
        return TripletBatch.from_triplets(samples)

    def verify(self) -> Dict[str, Any]:
        """重讀所有記錄並比對雜湊；回傳摘要"""
        digest = hashlib.sha256()
        n = 0
        for t in self.read():
            digest.update(encode_record(t))
            n += 1
        if digest.hexdigest() != self.manifest.get('samples_sha256'):
            raise FormatError("samples.bin hash does not match the manifest")
        return {'count': n, 'size': self.manifest['size'], 'samples_sha256': digest.hexdigest(),
                'bytes': os.path.getsize(self.samples_path)}


def write_dataset(samples: Iterable[AlignedTriplet], path: str, **meta) -> Dict[str, Any]:
    return DatasetStore(path).write(samples, **meta)


def read_dataset(path: str) -> Iterator[AlignedTriplet]:
    return DatasetStore(path).read()
