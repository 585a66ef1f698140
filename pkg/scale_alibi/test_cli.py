#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Scale-ALiBi - 命令列測試
以 main(argv) 直接呼叫各子命令並檢查退出碼
"""

import contextlib
import io
import json
import os
import sys
import tempfile
import traceback

from numpy.testing import assert_array_equal

sys.path.append(os.path.dirname(__file__))

from geometry.bias import PatchGrid, cross_bias, read_bias_csv, self_bias, slope_schedule
from main import main
from numeric.tensor import get_default_graph
from utils.common import EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_VERIFY_FAILED, read_metrics


def run(*argv):
    """執行 main 並回傳 (退出碼, stdout)"""
    out = io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(io.StringIO()):
        code = main(['--log-level', 'WARNING'] + [str(a) for a in argv])
    return code, out.getvalue()


def test_gen_data_and_verify():
    """相同種子兩次產生的資料集逐位元相同；verify-dataset 通過"""
    with tempfile.TemporaryDirectory() as tmp:
        a, b = os.path.join(tmp, 'a'), os.path.join(tmp, 'b')
        code, out = run('gen-data', '--out', a, '--samples', 6, '--size', 8, '--seed', 1)
        assert code == EXIT_OK
        announced = json.loads(out.splitlines()[0])
        assert announced['command'] == 'gen-data' and announced['seed'] == 1
        assert json.loads(out.splitlines()[-1])['count'] == 6
        assert run('gen-data', '--out', b, '--samples', 6, '--size', 8, '--seed', 1)[0] == EXIT_OK
        with open(os.path.join(a, 'samples.bin'), 'rb') as fa, open(os.path.join(b, 'samples.bin'), 'rb') as fb:
            assert fa.read() == fb.read()
        assert run('verify-dataset', '--data', a)[0] == EXIT_OK

        with open(os.path.join(a, 'samples.bin'), 'r+b') as f:
            f.truncate(100)
        assert run('verify-dataset', '--data', a)[0] == EXIT_IO
        assert run('verify-dataset', '--data', os.path.join(tmp, 'missing'))[0] == EXIT_IO

        empty = os.path.join(tmp, 'empty')
        assert run('gen-data', '--out', empty, '--samples', 0, '--size', 8)[0] == EXIT_OK
        assert run('verify-dataset', '--data', empty)[0] == EXIT_OK
    print("✅ gen-data / verify-dataset")


def test_bias_dump():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'self.csv')
        code, _ = run('bias-dump', '--rows', 2, '--cols', 2, '--patch', 2, '--gsd', 1.0, '--heads', 2, '--out', path)
        assert code == EXIT_OK
        matrices = read_bias_csv(path)
        expected = self_bias(PatchGrid(2, 2, 2, 1.0), slope_schedule(2)).values
        assert len(matrices) == 2
        for h in range(2):
            assert_array_equal(matrices[h], expected[h])

        path = os.path.join(tmp, 'cross.csv')
        code, out = run('bias-dump', '--rows', 2, '--cols', 2, '--patch', 2, '--gsd', 1.0,
                        '--key-rows', 4, '--key-cols', 4, '--out', path)
        assert code == EXIT_OK
        assert json.loads(out.splitlines()[0])['config']['key_gsd'] == 0.5
        expected = cross_bias(PatchGrid(2, 2, 2, 1.0), PatchGrid(4, 4, 2, 0.5), slope_schedule(1)).values
        assert_array_equal(read_bias_csv(path)[0], expected[0])

    code, out = run('bias-dump', '--rows', 1, '--cols', 2, '--patch', 4, '--gsd', 2.0)
    assert code == EXIT_OK and '# head=0' in out
    code, _ = run('bias-dump', '--rows', 2, '--cols', 2, '--patch', 2, '--gsd', 1.0,
                  '--key-rows', 4, '--key-cols', 4, '--key-gsd', 1.0)
    assert code == EXIT_VERIFY_FAILED
    print("✅ bias-dump")


def test_gradcheck_command():
    assert run('gradcheck', '--seed', 0)[0] == EXIT_OK
    assert run('gradcheck', '--seed', 0, '--sabotage')[0] == EXIT_VERIFY_FAILED
    print("✅ gradcheck")


def test_train_resume_probe():
    """micro 設定：訓練、續訓、探測，以及設定不符時的用法錯誤"""
    with tempfile.TemporaryDirectory() as tmp:
        data = os.path.join(tmp, 'data')
        ckpt = os.path.join(tmp, 'model.ckpt')
        log = os.path.join(tmp, 'metrics.jsonl')
        assert run('gen-data', '--out', data, '--samples', 8, '--size', 8, '--classes', 2)[0] == EXIT_OK

        code, _ = run('train', '--config', 'micro', '--data', data, '--steps', 3, '--out', ckpt, '--log', log)
        assert code == EXIT_OK and os.path.exists(ckpt)
        assert [r['step'] for r in read_metrics(log)] == [0, 1, 2]

        initial = os.path.join(tmp, 'init.ckpt')
        assert run('train', '--config', 'micro', '--data', data, '--steps', 0, '--out', initial)[0] == EXIT_OK
        assert os.path.exists(initial)

        code, out = run('train', '--data', data, '--steps', 5, '--out', ckpt, '--resume', ckpt)
        assert code == EXIT_OK
        steps = [json.loads(line)['step'] for line in out.splitlines()[1:] if line.startswith('{')]
        assert steps == [3, 4]

        code, out = run('probe', '--ckpt', ckpt, '--data', data, '--method', 'knn')
        assert code == EXIT_OK
        report = json.loads(out.splitlines()[-1])
        assert report['method'] == 'knn' and 0.0 <= report['accuracy'] <= 1.0

        assert run('train', '--data', data, '--steps', 6, '--out', ckpt, '--resume', ckpt, '--seed', 99)[0] == EXIT_USAGE
        assert run('train', '--config', 'desk', '--data', data, '--steps', 1, '--out', ckpt)[0] == EXIT_USAGE
        assert run('train', '--config', 'nope', '--data', data, '--steps', 1, '--out', ckpt)[0] == EXIT_USAGE

        other = os.path.join(tmp, 'other')
        assert run('gen-data', '--out', other, '--samples', 4, '--size', 16)[0] == EXIT_OK
        assert run('probe', '--ckpt', ckpt, '--data', other, '--method', 'knn')[0] == EXIT_USAGE
    print("✅ train / resume / probe")


def test_usage_errors():
    """argparse 用法錯誤以 SystemExit(2) 結束"""
    for argv in (['probe'], ['bias-dump', '--rows', 'x'], ['nonexistent']):
        try:
            with contextlib.redirect_stderr(io.StringIO()):
                main(argv)
            raise AssertionError(f"{argv} accepted")
        except SystemExit as e:
            assert e.code == EXIT_USAGE
    print("✅ 用法錯誤")


def test_bad_arguments_exit_usage():
    """非法數量、錯誤型別的設定、不合理的網格都以退出碼 2 結束，而非例外"""
    for argv in (['gen-data', '--out', 'x', '--samples', '-1'], ['gen-data', '--out', 'x', '--size', '2'],
                 ['gen-data', '--out', 'x', '--zoom', '99'], ['train', '--data', 'x', '--steps', '-3', '--out', 'y'],
                 ['train', '--data', 'x', '--steps', '1', '--out', 'y', '--lo', 'z']):
        try:
            with contextlib.redirect_stderr(io.StringIO()):
                main(argv)
            raise AssertionError(f"{argv} accepted")
        except SystemExit as e:
            assert e.code == EXIT_USAGE

    for flag in ('--rows', '--heads', '--patch'):
        argv = {'--rows': 2, '--cols': 2, '--patch': 2, '--gsd': 1.0, '--heads': 1}
        argv[flag] = 0
        assert run('bias-dump', *[x for kv in argv.items() for x in kv])[0] == EXIT_USAGE
    assert run('bias-dump', '--rows', 2, '--cols', 2, '--patch', 2, '--gsd', -1.0)[0] == EXIT_USAGE

    with tempfile.TemporaryDirectory() as tmp:
        data = os.path.join(tmp, 'data')
        assert run('gen-data', '--out', data, '--samples', 2, '--size', 8)[0] == EXIT_OK
        for bad in ({'mask_ratio': 'x'}, {'radar_depth': 1.5}, {'include_hires': 1}):
            path = os.path.join(tmp, 'bad.json')
            with open(path, 'w', encoding='utf-8') as f:
                json.dump(bad, f)
            code, _ = run('train', '--config', path, '--data', data, '--steps', 1, '--out', os.path.join(tmp, 'm.ckpt'))
            assert code == EXIT_USAGE, bad
    print("✅ 非法參數")



TESTS = [test_gen_data_and_verify, test_bias_dump, test_gradcheck_command, test_train_resume_probe,
         test_usage_errors, test_bad_arguments_exit_usage]


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
        finally:
            get_default_graph().clear()
    print(f"\n📊 命令列測試：{sum(results.values())}/{len(results)} 通過")
    return results


if __name__ == "__main__":
    sys.exit(0 if all(generate_test_report().values()) else 1)
