#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
ORSI 显著性检测命令行脚本

用法示例:
    python scripts/orsi_sod.py train --config config/orsi_sod_config.yaml --data-root data/EORSSD
    python scripts/orsi_sod.py infer --checkpoint outputs/checkpoints/latest.pth --images data/EORSSD/test/images
    python scripts/orsi_sod.py eval --pred outputs/predictions --gt data/EORSSD/test/gt
"""

import os
import sys

# 添加项目根目录到Python路径
current_dir = os.path.dirname(os.path.abspath(__file__))
project_root = os.path.dirname(current_dir)
sys.path.append(project_root)

from src.cli import run

if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
