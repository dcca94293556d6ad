#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
合成数据生成模块

生成带纹理背景与若干亮色目标（矩形/椭圆）的遥感风格图像及对应掩码，
按数据集目录结构写盘，用于单元测试、过拟合检查与流程演示。
"""

import os
from typing import List, Optional, Tuple

import cv2
import numpy as np

from src.data.dataset import GT_DIR, IMAGE_DIR


class SyntheticSceneGenerator:
    """合成场景生成器，同一种子生成的场景完全一致"""

    def __init__(self, size: int = 64, max_objects: int = 3, seed: int = 0):
        """
        初始化生成器

        Args:
            size: 图像边长
            max_objects: 每张图像最多的目标数
            seed: 随机种子
        """
        self.size = size
        self.max_objects = max_objects
        self.seed = seed

    def generate(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        生成第 index 个场景

        Returns:
            (RGB 图像 (H, W, 3) uint8, 掩码 (H, W) uint8，取值 {0, 255})
        """
        rng = np.random.default_rng(self.seed + index)
        size = self.size

        background = rng.integers(20, 90, size=(size, size, 3)).astype(np.float32)
        background = cv2.GaussianBlur(background, (5, 5), 0)
        image = background.astype(np.uint8)
        mask = np.zeros((size, size), dtype=np.uint8)

        for _ in range(int(rng.integers(1, self.max_objects + 1))):
            color = tuple(int(c) for c in rng.integers(160, 255, size=3))
            half = int(rng.integers(max(2, size // 16), max(3, size // 5)))
            cx, cy = (int(v) for v in rng.integers(half, size - half, size=2))
            if rng.random() < 0.5:
                cv2.rectangle(image, (cx - half, cy - half), (cx + half, cy + half), color, -1)
                cv2.rectangle(mask, (cx - half, cy - half), (cx + half, cy + half), 255, -1)
            else:
                axes = (half, max(1, half // 2))
                angle = float(rng.integers(0, 180))
                cv2.ellipse(image, (cx, cy), axes, angle, 0, 360, color, -1)
                cv2.ellipse(mask, (cx, cy), axes, angle, 0, 360, 255, -1)
        return image, mask

    def write_split(self, root: str, split: str, count: int, start: int = 0,
                    image_ext: str = '.png') -> List[str]:
        """
        写出一个划分的图像与掩码

        Args:
            root: 数据集根目录
            split: 划分名称
            count: 样本数
            start: 起始编号
            image_ext: 图像扩展名（.png 或 .jpg）

        Returns:
            样本名称列表
        """
        image_dir = os.path.join(root, split, IMAGE_DIR)
        gt_dir = os.path.join(root, split, GT_DIR)
        os.makedirs(image_dir, exist_ok=True)
        os.makedirs(gt_dir, exist_ok=True)

        names = []
        for index in range(start, start + count):
            name = f"{index:04d}"
            image, mask = self.generate(index)
            cv2.imwrite(os.path.join(image_dir, name + image_ext), cv2.cvtColor(image, cv2.COLOR_RGB2BGR))
            cv2.imwrite(os.path.join(gt_dir, name + '.png'), mask)
            names.append(name)
        return names


def make_synthetic_dataset(root: str, train_count: int = 4, test_count: int = 2, size: int = 64,
                           seed: int = 0, max_objects: Optional[int] = None) -> str:
    """按 <root>/<split>/{images,gt} 结构生成一个合成数据集，返回根目录"""
    generator = SyntheticSceneGenerator(size, max_objects or 3, seed)
    generator.write_split(root, 'train', train_count)
    if test_count:
        generator.write_split(root, 'test', test_count, start=train_count)
    return root
