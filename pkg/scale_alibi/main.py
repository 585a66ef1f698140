#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Scale-ALiBi 主程式
Command-Line Entry Point

子命令：gen-data, train, gradcheck, bias-dump, probe, verify-dataset
退出碼：0 成功、1 驗證失敗、2 用法錯誤、3 IO / 格式錯誤
"""

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional

from config import DATASET_CONFIG, MODEL_PRESETS, PROBE_CONFIG, ModelConfig, preset
from geometry.bias import PatchGrid, cross_bias, self_bias, slope_schedule, write_bias_csv
from gradcheck import run_gradcheck
from network.model import ScaleAlibiModel
from pipeline.synth import sample_tiles, synth_dataset
from pipeline.tiles import MAX_ZOOM
from probes import ENCODERS, METHODS, ProbeEvaluator
from storage.checkpoint_handler import load_checkpoint
from storage.dataset_store import DatasetStore
from trainer import Trainer, TrainState
from utils.common import (EXIT_OK, ConfigError, ContractError, MetricsWriter, ScaleAlibiError, exit_code_for,
                          setup_logging)

# 設置日誌
logger = logging.getLogger(__name__)


def resolve_config(value: Optional[str], default: str = 'desk') -> ModelConfig:
    """--config 可以是預設名稱 (micro / desk / large) 或 JSON 檔案"""
    value = value or default
    if value in MODEL_PRESETS:
        return preset(value)
    if not os.path.exists(value):
        raise ConfigError(f"config {value!r} is neither a preset ({', '.join(MODEL_PRESETS)}) nor a file")
    return ModelConfig.from_json(value)


def announce(command: str, seed: Optional[int], config: Dict[str, Any]) -> None:
    """每次執行都先印出解析後的設定與種子"""
    print(json.dumps({'command': command, 'seed': seed, 'config': config}, sort_keys=True))


# ---------------------------------------------------------------------------
# 子命令
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    zoom = args.zoom if args.zoom is not None else DATASET_CONFIG['subsets'][args.subset]['zoom']
    announce('gen-data', args.seed, {'out': args.out, 'samples': args.samples, 'classes': args.classes,
                                     'size': args.size, 'subset': args.subset, 'zoom': zoom})
    try:
        tiles = sample_tiles(args.samples, zoom, args.seed)
    except ContractError as e:
        raise ConfigError(f"invalid gen-data arguments: {e}") from e
    manifest = DatasetStore(args.out).write(
        synth_dataset(tiles, args.classes, args.seed, args.size), size=args.size, seed=args.seed,
        classes=args.classes, subset=args.subset, zoom=zoom)
    print(json.dumps({'count': manifest['count'], 'record_size': manifest['record_size'],
                      'samples_sha256': manifest['samples_sha256']}))
    return EXIT_OK


def cmd_train(args) -> int:
    if args.resume:
        state = TrainState.load(args.resume)
        if args.config and resolve_config(args.config).digest() != state.cfg.digest():
            raise ConfigError("--config differs from the config stored with the resumed checkpoint")
        if args.seed is not None and args.seed != state.seed:
            raise ConfigError(f"--seed {args.seed} differs from the checkpoint seed {state.seed}")
    else:
        state = TrainState.initialize(resolve_config(args.config), args.seed)
    announce('train', state.seed, state.cfg.to_dict())

    dataset = DatasetStore(args.data).load_batch()
    trainer = Trainer(state, dataset)
    with MetricsWriter(args.log, stream=sys.stdout) as metrics:
        trainer.metrics = metrics
        trainer.train(args.steps)
    state.save(args.out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = resolve_config(args.config, default='micro')
    announce('gradcheck', args.seed, cfg.to_dict())
    report = run_gradcheck(cfg, args.seed, sabotage=args.sabotage)
    print(report.to_frame().to_string(index=False))
    report.raise_for_failure()
    print(f"gradcheck passed: worst {report.worst.group} {report.worst.error:.3e} < {report.tolerance:g}")
    return EXIT_OK


def cmd_bias_dump(args) -> int:
    try:
        query = PatchGrid(args.rows, args.cols, args.patch, args.gsd)
        slopes = slope_schedule(args.heads)
    except ContractError as e:
        raise ConfigError(f"invalid bias-dump arguments: {e}") from e
    cross = any(v is not None for v in (args.key_rows, args.key_cols, args.key_gsd))
    config: Dict[str, Any] = {'rows': args.rows, 'cols': args.cols, 'patch': args.patch, 'gsd': args.gsd,
                              'heads': args.heads, 'mode': 'cross' if cross else 'self'}
    if cross:
        key_rows = args.key_rows or args.rows
        key_cols = args.key_cols or args.cols
        # 未指定時取與查詢網格相同的覆蓋範圍
        key_gsd = args.key_gsd if args.key_gsd is not None else args.rows * args.gsd / key_rows
        try:
            key = PatchGrid(key_rows, key_cols, args.patch, key_gsd)
        except ContractError as e:
            raise ConfigError(f"invalid bias-dump key grid: {e}") from e
        config.update({'key_rows': key_rows, 'key_cols': key_cols, 'key_gsd': key_gsd})
        announce('bias-dump', None, config)
        bias = cross_bias(query, key, slopes)
    else:
        announce('bias-dump', None, config)
        bias = self_bias(query, slopes)

    if args.out in (None, '-'):
        write_bias_csv(bias, sys.stdout)
    else:
        with open(args.out, 'w', encoding='utf-8', newline='') as f:
            write_bias_csv(bias, f)
        logger.info(f"偏置矩陣已寫入 {args.out}：{bias.heads} 頭，形狀 {bias.shape[1:]}")
    return EXIT_OK


def cmd_probe(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = ScaleAlibiModel(ckpt.config, ckpt.seed)
    model.load_state_dict(ckpt.params)
    announce('probe', args.seed, {'ckpt': args.ckpt, 'data': args.data, 'method': args.method,
                                  'encoder': args.encoder, 'k': args.k, 'hidden': args.hidden,
                                  'epochs': args.epochs, 'model': ckpt.config.to_dict()})
    dataset = DatasetStore(args.data).load_batch()
    if dataset.lores.shape[-1] != ckpt.config.lores_px:
        raise ConfigError(f"dataset sample size {dataset.lores.shape[-1]} does not match checkpoint "
                          f"lores_px {ckpt.config.lores_px}")
    report = ProbeEvaluator(model, dataset, args.seed).run(args.method, args.encoder, args.k,
                                                           args.hidden, args.epochs)
    print(json.dumps(report.to_dict(), sort_keys=True, default=str))
    return EXIT_OK


def cmd_verify_dataset(args) -> int:
    announce('verify-dataset', None, {'data': args.data})
    summary = DatasetStore(args.data).verify()
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# 參數解析
# ---------------------------------------------------------------------------

def count_arg(minimum: int = 0, maximum: Optional[int] = None):
    """argparse 型別：介於 minimum 與 maximum 之間的整數"""
    def parse(value: str) -> int:
        try:
            number = int(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid integer {value!r}") from None
        if number < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}, got {number}")
        if maximum is not None and number > maximum:
            raise argparse.ArgumentTypeError(f"must be <= {maximum}, got {number}")
        return number
    return parse


def build_parser() -> argparse.ArgumentParser:
    # 停用縮寫 (含各子命令)：否則 train --log 會被當成 --log-level / --log-file 的前綴
    parser = argparse.ArgumentParser(prog='scale-alibi', description='Scale-ALiBi 多尺度遙測表示學習',
                                     allow_abbrev=False)
    parser.add_argument('--log-level', default=None, help='日誌等級 (預設取環境變數或 INFO)')
    parser.add_argument('--log-file', default=None, help='額外寫入的日誌檔案')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('gen-data', help='產生合成對齊三元組資料集', allow_abbrev=False)
    p.add_argument('--out', required=True, help='資料集目錄')
    p.add_argument('--samples', type=count_arg(0), default=64, help='樣本數')
    p.add_argument('--classes', type=count_arg(1), default=4, help='類別數')
    p.add_argument('--size', type=count_arg(4), default=DATASET_CONFIG['default_size'], help='lores 邊長 S')
    p.add_argument('--seed', type=int, default=0, help='隨機種子')
    p.add_argument('--subset', choices=sorted(DATASET_CONFIG['subsets']), default='small', help='資料集子集標記')
    p.add_argument('--zoom', type=count_arg(0, MAX_ZOOM - 1), default=None, help='瓦片層級 Y (預設依子集)')
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser('train', help='訓練模型', allow_abbrev=False)
    p.add_argument('--config', default=None, help='設定檔或預設名稱 (預設 desk)')
    p.add_argument('--data', required=True, help='資料集目錄')
    p.add_argument('--steps', type=count_arg(0), required=True, help='總訓練步數')
    p.add_argument('--out', required=True, help='輸出檢查點路徑')
    p.add_argument('--log', default=None, help='JSON-lines 指標檔 (預設輸出到 stdout)')
    p.add_argument('--resume', default=None, help='從檢查點續訓')
    p.add_argument('--seed', type=int, default=None, help='隨機種子 (預設取設定中的 seed)')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('gradcheck', help='有限差分梯度檢查', allow_abbrev=False)
    p.add_argument('--seed', type=int, default=0, help='隨機種子')
    p.add_argument('--config', default='micro', help='設定檔或預設名稱')
    p.add_argument('--sabotage', action='store_true', help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser('bias-dump', help='輸出 Scale-ALiBi 偏置矩陣 CSV', allow_abbrev=False)
    p.add_argument('--rows', type=int, required=True)
    p.add_argument('--cols', type=int, required=True)
    p.add_argument('--patch', type=int, required=True, help='分塊邊長 (像素)')
    p.add_argument('--gsd', type=float, required=True, help='每像素地面距離')
    p.add_argument('--key-rows', type=int, default=None)
    p.add_argument('--key-cols', type=int, default=None)
    p.add_argument('--key-gsd', type=float, default=None)
    p.add_argument('--heads', type=int, default=1)
    p.add_argument('--out', default=None, help='CSV 路徑 (預設 stdout)')
    p.set_defaults(func=cmd_bias_dump)

    p = sub.add_parser('probe', help='凍結編碼器的表示探測', allow_abbrev=False)
    p.add_argument('--ckpt', required=True, help='檢查點路徑')
    p.add_argument('--data', required=True, help='資料集目錄')
    p.add_argument('--method', choices=METHODS, required=True)
    p.add_argument('--encoder', choices=ENCODERS, default='lores')
    p.add_argument('--k', type=count_arg(1), default=None, help=f"kNN 鄰居數 (預設 {PROBE_CONFIG['knn_k']}) 或 k-means 群數")
    p.add_argument('--hidden', type=count_arg(1), default=PROBE_CONFIG['mlp_hidden'], help='MLP 隱藏層寬度')
    p.add_argument('--epochs', type=count_arg(1), default=PROBE_CONFIG['mlp_epochs'], help='MLP 訓練輪數')
    p.add_argument('--seed', type=int, default=0)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser('verify-dataset', help='檢查資料集容器一致性', allow_abbrev=False)
    p.add_argument('--data', required=True, help='資料集目錄')
    p.set_defaults(func=cmd_verify_dataset)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """主函數"""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level, args.log_file)
    try:
        return args.func(args)
    except (ScaleAlibiError, OSError) as e:
        code = exit_code_for(e)
        logger.error(f"{args.command} 失敗 (exit {code})：{e}")
        print(f"錯誤: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
