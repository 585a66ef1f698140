#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Scale-ALiBi - 儲存格式測試
資料集容器與檢查點
"""

import json
import os
import shutil
import struct
import sys
import tempfile
import traceback
from collections import OrderedDict

import numpy as np
from numpy.testing import assert_array_equal

sys.path.append(os.path.dirname(__file__))

from config import preset
from pipeline.synth import sample_tiles, synth_dataset
from storage.checkpoint_handler import Checkpoint, load_checkpoint, save_checkpoint
from storage.dataset_store import DatasetStore, decode_record, encode_record, record_size
from utils.common import ContractError, FormatError


def _write(path, count=3, size=8, seed=0):
    samples = list(synth_dataset(sample_tiles(count, 15, seed), 2, seed, size))
    manifest = DatasetStore(path).write(samples, size=size, seed=seed, classes=2, subset='small', zoom=15)
    return samples, manifest


def test_record_size():
    """S=32 時每筆 69648 位元組"""
    assert record_size(32) == 69648
    assert record_size(8) == 16 + 4 * 17 * 64
    assert record_size(8, radar_channels=3) == record_size(8) + 4 * 64
    print("✅ 記錄大小")


def test_dataset_round_trip():
    """寫入再讀回逐位元相同，manifest 記錄順序與雜湊"""
    with tempfile.TemporaryDirectory() as tmp:
        samples, manifest = _write(tmp)
        assert manifest['count'] == 3 and manifest['offsets'] == [0, record_size(8), 2 * record_size(8)]
        assert os.path.getsize(os.path.join(tmp, 'samples.bin')) == 3 * record_size(8)
        store = DatasetStore(tmp)
        loaded = store.load_all()
        assert len(store) == 3
        assert all(a.equals(b) for a, b in zip(samples, loaded))
        assert store.verify()['samples_sha256'] == manifest['samples_sha256']
        batch = store.load_batch()
        assert batch.lores.dtype == np.float64 and batch.hires.shape == (3, 3, 16, 16)
        assert_array_equal(batch.labels, [s.class_id for s in samples])
    print("✅ 資料集存取")


def test_dataset_rewrite_is_identical():
    """相同種子重新產生的 samples.bin 逐位元相同"""
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        _write(a, seed=4)
        _write(b, seed=4)
        with open(os.path.join(a, 'samples.bin'), 'rb') as fa, open(os.path.join(b, 'samples.bin'), 'rb') as fb:
            assert fa.read() == fb.read()
    print("✅ 資料集重現")


def test_dataset_corruption():
    """截斷、多餘位元組、雜湊不符、manifest 損壞都回報 FormatError"""
    with tempfile.TemporaryDirectory() as tmp:
        _write(tmp)
        bin_path = os.path.join(tmp, 'samples.bin')
        with open(bin_path, 'rb') as f:
            original = f.read()

        corruptions = [original[:-100], original + b'\x00' * 8,
                       original[:20] + bytes([original[20] ^ 0xFF]) + original[21:]]
        for data in corruptions:
            with open(bin_path, 'wb') as f:
                f.write(data)
            try:
                DatasetStore(tmp).verify()
                raise AssertionError("corrupted dataset accepted")
            except FormatError:
                pass

        with open(bin_path, 'wb') as f:
            f.write(original)
        manifest_path = os.path.join(tmp, 'manifest.json')
        with open(manifest_path, 'r', encoding='utf-8') as f:
            manifest = json.load(f)
        for key, value in (('format', 'OTHER'), ('record_size', 1), ('offsets', [0, 1, 2])):
            broken = dict(manifest, **{key: value})
            with open(manifest_path, 'w', encoding='utf-8') as f:
                json.dump(broken, f)
            try:
                DatasetStore(tmp).read().__next__()
                raise AssertionError(f"bad manifest {key} accepted")
            except FormatError:
                pass
        with open(manifest_path, 'w', encoding='utf-8') as f:
            f.write('{not json')
        try:
            len(DatasetStore(tmp))
            raise AssertionError("invalid JSON accepted")
        except FormatError:
            pass
    print("✅ 資料集損壞偵測")


def test_failed_write_keeps_previous_dataset():
    """寫入中途失敗時，原本的資料集不變且不留暫存檔"""
    with tempfile.TemporaryDirectory() as tmp:
        samples, manifest = _write(tmp)
        mixed = samples[:1] + list(synth_dataset(sample_tiles(1, 15, 1), 2, 1, 4))
        try:
            DatasetStore(tmp).write(mixed, size=8)
            raise AssertionError("mixed sizes accepted")
        except ContractError:
            pass
        assert sorted(os.listdir(tmp)) == ['manifest.json', 'samples.bin']
        store = DatasetStore(tmp)
        assert store.verify()['samples_sha256'] == manifest['samples_sha256']
        assert all(a.equals(b) for a, b in zip(samples, store.load_all()))
    print("✅ 失敗寫入不破壞既有資料集")


def test_non_finite_record():
    """記錄中的 NaN 或 Inf 回報 FormatError 並指出記錄編號"""
    sample = list(synth_dataset(sample_tiles(1, 15, 0), 2, 0, 8))[0]
    buf = encode_record(sample)
    assert decode_record(buf, 8, 2, 0).equals(sample)
    for bad in (float('nan'), float('inf')):
        patched = buf[:16] + struct.pack('<f', bad) + buf[20:]
        try:
            decode_record(patched, 8, 2, 5)
            raise AssertionError(f"{bad} accepted")
        except FormatError as e:
            assert 'record 5' in str(e)
    print("✅ 非有限值記錄")



def test_empty_dataset():
    with tempfile.TemporaryDirectory() as tmp:
        manifest = DatasetStore(tmp).write([], size=8)
        assert manifest['count'] == 0
        assert DatasetStore(tmp).load_all() == []
        try:
            DatasetStore(tmp).load_batch()
            raise AssertionError("empty batch accepted")
        except ContractError:
            pass
    print("✅ 空資料集")


def _checkpoint(cfg):
    rng = np.random.default_rng(0)
    params = OrderedDict([('a.weight', rng.standard_normal((3, 4))), ('a.bias', rng.standard_normal(4)),
                          ('scalar', np.array(1.5))])
    return Checkpoint(cfg, params, {'a.weight': np.ones((3, 4))}, {'a.weight': np.full((3, 4), 2.0)},
                      step=17, adam_t=17, seed=9)


def test_checkpoint_round_trip():
    cfg = preset('micro')
    ckpt = _checkpoint(cfg)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'run', 'model.ckpt')
        save_checkpoint(path, ckpt)
        assert os.listdir(os.path.dirname(path)) == ['model.ckpt']
        # 單一檔案：搬移後仍可載入
        moved = os.path.join(tmp, 'moved.ckpt')
        shutil.move(path, moved)
        loaded = load_checkpoint(moved)
    assert loaded.config.digest() == cfg.digest()
    assert list(loaded.params) == list(ckpt.params)
    for name in ckpt.params:
        assert_array_equal(loaded.params[name], ckpt.params[name])
        assert loaded.params[name].shape == ckpt.params[name].shape
    assert_array_equal(loaded.adam_m['a.weight'], ckpt.adam_m['a.weight'])
    assert_array_equal(loaded.adam_v['a.weight'], ckpt.adam_v['a.weight'])
    assert (loaded.step, loaded.adam_t, loaded.seed) == (17, 17, 9)
    print("✅ 檢查點存取")


def test_checkpoint_large_seed():
    """種子以 int64 儲存，超過 2^53 仍精確還原"""
    ckpt = _checkpoint(preset('micro'))
    ckpt.seed = 2 ** 62 + 1
    ckpt.step = 2 ** 53 + 1
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'model.ckpt')
        save_checkpoint(path, ckpt)
        loaded = load_checkpoint(path)
    assert loaded.seed == 2 ** 62 + 1 and loaded.step == 2 ** 53 + 1
    print("✅ 大種子精確還原")


def test_checkpoint_corruption():
    """截斷、錯誤 magic、多餘位元組、內嵌設定被改動"""
    cfg = preset('micro')
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'model.ckpt')
        save_checkpoint(path, _checkpoint(cfg))
        with open(path, 'rb') as f:
            original = f.read()
        needle = b'"temperature": 0.1'
        assert original.count(needle) == 1
        tampered = original.replace(needle, b'"temperature": 0.5')
        for label, data in (('truncated', original[:-3]), ('magic', b'XXXXX' + original[5:]),
                            ('trailing', original + b'\x00'), ('config', tampered)):
            with open(path, 'wb') as f:
                f.write(data)
            try:
                load_checkpoint(path)
                raise AssertionError(f"{label} checkpoint accepted")
            except FormatError:
                pass
    print("✅ 檢查點損壞偵測")



TESTS = [
    test_record_size, test_dataset_round_trip, test_dataset_rewrite_is_identical, test_dataset_corruption,
    test_failed_write_keeps_previous_dataset, test_non_finite_record,
    test_empty_dataset, test_checkpoint_round_trip, test_checkpoint_large_seed, test_checkpoint_corruption,
]


def generate_test_report():
    """執行所有測試並輸出摘要"""
    results = {}
    for test in TESTS:
        try:
            test()
            results[test.__name__] = True
        except (Exception, SystemExit) as e:
            print(f"❌ {test.__name__} 失敗: {e}")
            traceback.print_exc()
            results[test.__name__] = False
    print(f"\n📊 儲存格式測試：{sum(results.values())}/{len(results)} 通過")
    return results


if __name__ == "__main__":
    sys.exit(0 if all(generate_test_report().values()) else 1)
