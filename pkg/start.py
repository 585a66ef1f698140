#!/usr/bin/env python3
"""
Scale-ALiBi - Quick Start
Scale-ALiBi 快速啟動

這是項目的主要入口點，把參數轉交給 scale_alibi/main.py。

Usage:
    python start.py gen-data --out data/desk --samples 64
    python start.py train --data data/desk --steps 200 --out runs/desk.ckpt
"""

import sys
from pathlib import Path

# 添加 scale_alibi 目錄到 Python 路徑
package_dir = Path(__file__).parent / "scale_alibi"
sys.path.insert(0, str(package_dir))

try:
    from main import main
except ImportError as e:
    print("❌ 無法導入 Scale-ALiBi 主程式")
    print(f"   錯誤: {e}")
    print()
    print("🔧 請確認以下事項:")
    print("   1. 已安裝 requirements.txt 中的套件")
    print("   2. scale_alibi/main.py 文件存在")
    sys.exit(1)

if __name__ == "__main__":
    sys.exit(main())
