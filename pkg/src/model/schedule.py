#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
特征尺寸约定模块

五级编码特征的通道数与空间尺寸约定（ShapeSchedule），以及统一的形状校验。
标准配置: 输入 256x256，通道 {64,128,256,512,512}；
微型配置: 输入 64x64，通道 {8,16,32,64,64}。
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import torch

from src.errors import ShapeMismatchError


NUM_LEVELS = 5

STANDARD_CHANNELS = (64, 128, 256, 512, 512)
STANDARD_INPUT_SIZE = 256

MICRO_CHANNELS = (8, 16, 32, 64, 64)
MICRO_INPUT_SIZE = 64


@dataclass(frozen=True)
class LevelShape:
    """单个层级的形状 (t, c_t, h_t, w_t)"""
    level: int
    channels: int
    height: int
    width: int


@dataclass(frozen=True)
class ShapeSchedule:
    """五级特征的形状约定，h_t = w_t = input_size / 2^(t-1)"""
    channels: Tuple[int, ...] = STANDARD_CHANNELS
    input_size: int = STANDARD_INPUT_SIZE

    def __post_init__(self):
        if len(self.channels) != NUM_LEVELS:
            raise ValueError(f"ShapeSchedule 需要 {NUM_LEVELS} 个层级，实际 {len(self.channels)}")
        if self.input_size % (2 ** (NUM_LEVELS - 1)) != 0:
            raise ValueError(f"输入尺寸 {self.input_size} 不能被 {2 ** (NUM_LEVELS - 1)} 整除")

    @classmethod
    def standard(cls) -> 'ShapeSchedule':
        return cls(STANDARD_CHANNELS, STANDARD_INPUT_SIZE)

    @classmethod
    def micro(cls) -> 'ShapeSchedule':
        return cls(MICRO_CHANNELS, MICRO_INPUT_SIZE)

    @classmethod
    def from_flag(cls, micro: bool) -> 'ShapeSchedule':
        return cls.micro() if micro else cls.standard()

    def size(self, level: int) -> int:
        """层级 t (1..5) 的空间边长"""
        self._check_level(level)
        return self.input_size // (2 ** (level - 1))

    def channels_at(self, level: int) -> int:
        self._check_level(level)
        return self.channels[level - 1]

    def level(self, level: int) -> LevelShape:
        size = self.size(level)
        return LevelShape(level, self.channels_at(level), size, size)

    def levels(self) -> List[LevelShape]:
        return [self.level(t) for t in range(1, NUM_LEVELS + 1)]

    def expected_shape(self, level: int, batch: int) -> Tuple[int, int, int, int]:
        shape = self.level(level)
        return batch, shape.channels, shape.height, shape.width

    def validate_images(self, images: torch.Tensor) -> None:
        """
        校验输入图像批次 (B, 3, H, W)

        Raises:
            ShapeMismatchError: 维度不符时，指明具体维度
        """
        if images.dim() != 4:
            raise ShapeMismatchError('ImageBatch', 'ndim', 4, images.dim())
        _, channels, height, width = images.shape
        if channels != 3:
            raise ShapeMismatchError('ImageBatch', 'channels', 3, channels)
        if height != self.input_size:
            raise ShapeMismatchError('ImageBatch', 'height', self.input_size, height)
        if width != self.input_size:
            raise ShapeMismatchError('ImageBatch', 'width', self.input_size, width)

    def validate_level(self, feature: torch.Tensor, level: int, what: str = 'FeatureMap') -> None:
        """校验单个层级特征与约定一致"""
        if feature.dim() != 4:
            raise ShapeMismatchError(f"{what}-{level}", 'ndim', 4, feature.dim())
        expected = self.level(level)
        actual = tuple(feature.shape[1:])
        for name, want, got in zip(('channels', 'height', 'width'),
                                   (expected.channels, expected.height, expected.width), actual):
            if want != got:
                raise ShapeMismatchError(f"{what}-{level}", name, want, got)

    def validate_features(self, features: Sequence[torch.Tensor], what: str = 'EncoderFeatures') -> None:
        """校验五级特征整体符合约定且批大小一致"""
        if len(features) != NUM_LEVELS:
            raise ShapeMismatchError(what, 'levels', NUM_LEVELS, len(features))
        batch = features[0].shape[0]
        for t, feature in enumerate(features, start=1):
            self.validate_level(feature, t, what)
            if feature.shape[0] != batch:
                raise ShapeMismatchError(f"{what}-{t}", 'batch', batch, feature.shape[0])

    @staticmethod
    def _check_level(level: int) -> None:
        if not 1 <= level <= NUM_LEVELS:
            raise ValueError(f"层级必须在 1..{NUM_LEVELS} 之间，实际 {level}")
