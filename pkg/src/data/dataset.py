#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
数据集模块

目录结构: <root>/<split>/images/*.{png,jpg} 与 <root>/<split>/gt/*.png。
负责样本扫描、预处理（缩放、归一化、掩码二值化）以及八重翻转/旋转增强。
增强在取样时惰性生成，不落盘。
"""

import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from src.errors import DatasetError, ShapeMismatchError

IMAGE_DIR = 'images'
GT_DIR = 'gt'
IMAGE_EXTENSIONS = ('.png', '.jpg', '.jpeg')
MASK_EXTENSIONS = ('.png',)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# 二面体群 D4 的 8 个元素：旋转 0/90/180/270，各自可再水平翻转
# 垂直翻转 = rot180 + 水平翻转，已包含在内
VARIANTS = ('identity', 'rot90', 'rot180', 'rot270',
            'hflip', 'rot90_hflip', 'rot180_hflip', 'rot270_hflip')
NUM_VARIANTS = len(VARIANTS)


@dataclass(frozen=True)
class SamplePair:
    """一对图像/掩码路径"""
    name: str
    image_path: str
    mask_path: str
    split: str


@dataclass
class AugmentedSet:
    """一对样本的 8 个增强版本，tags 与 VARIANTS 顺序一致"""
    images: List[np.ndarray] = field(default_factory=list)
    masks: List[np.ndarray] = field(default_factory=list)
    tags: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tags)


def list_by_stem(directory: str, extensions: Sequence[str]) -> Dict[str, str]:
    """
    目录下指定扩展名的文件：去扩展名的文件名 -> 路径，目录不存在时返回空字典

    Raises:
        DatasetError: 多个文件去掉扩展名后同名（如 a.jpg 与 a.png）
    """
    if not os.path.isdir(directory):
        return {}
    files: Dict[str, str] = {}
    duplicates: List[str] = []
    for name in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(name)
        if ext.lower() not in extensions:
            continue
        path = os.path.join(directory, name)
        if stem in files:
            duplicates.extend([files[stem], path])
        files[stem] = path
    if duplicates:
        raise DatasetError(f"存在去掉扩展名后同名的文件（{directory}）", set(duplicates))
    return files


def scan_split(root: str, split: str) -> List[SamplePair]:
    """
    扫描单个划分

    Raises:
        DatasetError: 存在没有对应掩码的图像或没有对应图像的掩码
    """
    images = list_by_stem(os.path.join(root, split, IMAGE_DIR), IMAGE_EXTENSIONS)
    masks = list_by_stem(os.path.join(root, split, GT_DIR), MASK_EXTENSIONS)
    orphans = sorted(set(images) ^ set(masks))
    if orphans:
        paths = [images.get(name) or masks.get(name) for name in orphans]
        raise DatasetError(f"{split} 划分中存在无法配对的文件: {', '.join(orphans)}", paths)
    return [SamplePair(name, images[name], masks[name], split) for name in sorted(images)]


def scan_dataset(root: str, splits: Sequence[str] = ('train', 'test')) -> List[SamplePair]:
    """
    扫描数据集根目录，按划分、文件名排序返回配对样本

    Args:
        root: 数据集根目录
        splits: 需要扫描的划分

    Returns:
        SamplePair 列表；空目录返回空列表
    """
    pairs: List[SamplePair] = []
    for split in splits:
        pairs.extend(scan_split(root, split))
    return pairs


def read_image(path: str) -> np.ndarray:
    """读取 RGB 图像，(H, W, 3) uint8"""
    image = cv2.imread(path, cv2.IMREAD_COLOR)
    if image is None:
        raise DatasetError(f"无法读取图像: {path}", [path])
    return cv2.cvtColor(image, cv2.COLOR_BGR2RGB)


def read_mask(path: str) -> np.ndarray:
    """读取单通道掩码，(H, W) uint8"""
    mask = cv2.imread(path, cv2.IMREAD_GRAYSCALE)
    if mask is None:
        raise DatasetError(f"无法读取掩码: {path}", [path])
    return mask


def preprocess_image(image: np.ndarray, size: int = 256, mean: Sequence[float] = IMAGENET_MEAN,
                     std: Sequence[float] = IMAGENET_STD) -> np.ndarray:
    """双线性缩放到 size x size，按通道归一化，返回 (3, size, size) float32"""
    resized = cv2.resize(image, (size, size), interpolation=cv2.INTER_LINEAR)
    scaled = resized.astype(np.float32) / 255.0
    normalized = (scaled - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return np.ascontiguousarray(normalized.transpose(2, 0, 1))


def binarize_mask(mask: np.ndarray) -> np.ndarray:
    """8 位掩码以 127.5 为阈值二值化；取值已在 [0,1] 的掩码以 0.5 为阈值"""
    mask = np.asarray(mask)
    if mask.max(initial=0) > 1:
        return (mask > 127.5).astype(np.float32)
    return (mask > 0.5).astype(np.float32)


def preprocess_mask(mask: np.ndarray, size: int = 256) -> np.ndarray:
    """最近邻缩放到 size x size 后二值化，返回 (1, size, size) float32"""
    resized = cv2.resize(mask, (size, size), interpolation=cv2.INTER_NEAREST)
    return binarize_mask(resized)[None]


def preprocess(pair: SamplePair, size: int = 256, mean: Sequence[float] = IMAGENET_MEAN,
               std: Sequence[float] = IMAGENET_STD) -> Tuple[np.ndarray, np.ndarray]:
    """读取并预处理一对样本"""
    image = preprocess_image(read_image(pair.image_path), size, mean, std)
    mask = preprocess_mask(read_mask(pair.mask_path), size)
    return image, mask


def apply_variant(array: np.ndarray, variant: int) -> np.ndarray:
    """
    对最后两个维度施加第 variant 个 D4 变换

    Args:
        array: (..., H, W) 数组
        variant: 0..7，对应 VARIANTS
    """
    if not 0 <= variant < NUM_VARIANTS:
        raise ValueError(f"增强编号必须在 0..{NUM_VARIANTS - 1} 之间，实际 {variant}")
    out = np.rot90(array, k=variant % 4, axes=(-2, -1))
    if variant >= 4:
        out = np.flip(out, axis=-1)
    return np.ascontiguousarray(out)


def augment_eightfold(image: np.ndarray, mask: np.ndarray) -> AugmentedSet:
    """
    生成 8 个二面体变换版本，图像与掩码同步变换

    Args:
        image: (C, H, W) 或 (H, W) 数组
        mask: 与 image 空间尺寸相同的数组
    """
    height, width = image.shape[-2:]
    if height != width:
        raise ShapeMismatchError('AugmentInput', 'width', height, width)
    if tuple(mask.shape[-2:]) != (height, width):
        raise ShapeMismatchError('AugmentMask', 'spatial', (height, width), tuple(mask.shape[-2:]))

    augmented = AugmentedSet()
    for variant, tag in enumerate(VARIANTS):
        augmented.images.append(apply_variant(image, variant))
        augmented.masks.append(apply_variant(mask, variant))
        augmented.tags.append(tag)
    return augmented


def augmented_count(num_pairs: int) -> int:
    return num_pairs * NUM_VARIANTS


class SaliencyDataset(Dataset):
    """
    训练/测试数据集

    开启增强时长度为 8 * 样本数，下标 i 对应第 i // 8 个样本的第 i % 8 个变换。
    """

    def __init__(self, pairs: Sequence[SamplePair], size: int = 256,
                 mean: Sequence[float] = IMAGENET_MEAN, std: Sequence[float] = IMAGENET_STD,
                 augment: bool = True):
        self.pairs = list(pairs)
        self.size = size
        self.mean = tuple(mean)
        self.std = tuple(std)
        self.augment = augment

    def __len__(self) -> int:
        return augmented_count(len(self.pairs)) if self.augment else len(self.pairs)

    def locate(self, index: int) -> Tuple[SamplePair, int]:
        """下标 -> (样本, 变换编号)"""
        if self.augment:
            return self.pairs[index // NUM_VARIANTS], index % NUM_VARIANTS
        return self.pairs[index], 0

    def __getitem__(self, index: int) -> Tuple[torch.Tensor, torch.Tensor]:
        pair, variant = self.locate(index)
        image, mask = preprocess(pair, self.size, self.mean, self.std)
        if variant:
            image = apply_variant(image, variant)
            mask = apply_variant(mask, variant)
        return torch.from_numpy(image), torch.from_numpy(mask)


def make_loader(dataset: Dataset, batch_size: int, seed: int, epoch: int = 0,
                shuffle: bool = True, num_workers: int = 0) -> DataLoader:
    """
    构造数据加载器，打乱顺序由 seed + epoch 决定

    Args:
        dataset: 数据集
        batch_size: 批大小
        seed: 主随机种子
        epoch: 当前 epoch，每个 epoch 重新设定打乱种子
        shuffle: 是否打乱
        num_workers: 加载进程数；顺序由采样器决定，与进程调度无关
    """
    generator = torch.Generator()
    generator.manual_seed(seed + epoch)
    return DataLoader(dataset, batch_size=batch_size, shuffle=shuffle, num_workers=num_workers,
                      generator=generator, drop_last=False)


@dataclass(frozen=True)
class InferenceImage:
    """推理用图像：名称、路径与原始尺寸 (H, W)"""
    name: str
    path: str
    original_size: Tuple[int, int]


def list_inference_images(image_dir: str) -> List[InferenceImage]:
    """列出推理目录中的图像（按文件名排序）"""
    if not os.path.isdir(image_dir):
        raise DatasetError(f"图像目录不存在: {image_dir}", [image_dir])
    images = []
    for stem, path in list_by_stem(image_dir, IMAGE_EXTENSIONS).items():
        height, width = read_image(path).shape[:2]
        images.append(InferenceImage(stem, path, (height, width)))
    return images


def load_inference_batch(images: Sequence[InferenceImage], size: int,
                         mean: Optional[Sequence[float]] = None,
                         std: Optional[Sequence[float]] = None) -> torch.Tensor:
    """把若干推理图像预处理为 (B, 3, size, size) 张量"""
    arrays = [preprocess_image(read_image(item.path), size, mean or IMAGENET_MEAN, std or IMAGENET_STD)
              for item in images]
    return torch.from_numpy(np.stack(arrays))
