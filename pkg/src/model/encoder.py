#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
编码器模块

截断的 VGG-16 结构骨干网络（去掉最后一个最大池化层与全部全连接层），
输出五个块最后一层卷积的特征 f_e^1..f_e^5。
骨干接口与具体网络无关：任何输出符合 ShapeSchedule 的模块都可接入下游。
"""

import importlib
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import torch
import torch.nn as nn

from src.errors import BackboneWeightsError, ConfigError
from src.model.schedule import ShapeSchedule


# 每个块的卷积层数
VGG16_BLOCK_DEPTHS = (2, 2, 3, 3, 3)

PROVENANCE_PRETRAINED = 'pretrained-file'
PROVENANCE_RANDOM = 'random-init'
RANDOM_SOURCES = ('random', 'he')


def vgg16_layer_names() -> List[str]:
    """按前向顺序返回卷积层名称 conv1_1 .. conv5_3"""
    return [f"conv{block}_{index}"
            for block, depth in enumerate(VGG16_BLOCK_DEPTHS, start=1)
            for index in range(1, depth + 1)]


def torchvision_name_map() -> Dict[str, str]:
    """torchvision vgg16 `features.N` 下标到本模块层名的映射"""
    mapping = {}
    position = 0
    for block, depth in enumerate(VGG16_BLOCK_DEPTHS, start=1):
        for index in range(1, depth + 1):
            mapping[f"features.{position}"] = f"conv{block}_{index}"
            position += 2  # conv + relu
        position += 1  # maxpool
    return mapping


def expected_param_shapes(schedule: ShapeSchedule) -> Dict[str, Tuple[int, ...]]:
    """由形状约定推出每个参数张量的期望形状"""
    shapes: Dict[str, Tuple[int, ...]] = OrderedDict()
    in_channels = 3
    for block, depth in enumerate(VGG16_BLOCK_DEPTHS, start=1):
        out_channels = schedule.channels_at(block)
        for index in range(1, depth + 1):
            name = f"conv{block}_{index}"
            shapes[f"{name}.weight"] = (out_channels, in_channels, 3, 3)
            shapes[f"{name}.bias"] = (out_channels,)
            in_channels = out_channels
    return shapes


@dataclass
class BackboneParams:
    """骨干网络参数：层名 -> 张量，以及来源标记"""
    state: Dict[str, torch.Tensor]
    provenance: str
    schedule: ShapeSchedule = field(default_factory=ShapeSchedule.standard)

    def validate(self) -> None:
        """
        校验参数拓扑

        Raises:
            BackboneWeightsError: 缺失或形状不符的层
        """
        unmatched = set()
        for key, shape in expected_param_shapes(self.schedule).items():
            tensor = self.state.get(key)
            if tensor is None or tuple(tensor.shape) != shape:
                unmatched.add(key.rsplit('.', 1)[0])
        if unmatched:
            raise BackboneWeightsError("骨干网络权重缺失或形状不匹配的层", unmatched)


def init_backbone(source: str = 'random', schedule: Optional[ShapeSchedule] = None,
                  seed: int = 0, std: float = 0.01) -> BackboneParams:
    """
    初始化骨干网络参数

    Args:
        source: 'random'（正态分布，标准差 std）、'he'（按 fan-in 缩放的正态分布，
            std = sqrt(2 / (9·C_in))）或预训练权重文件路径
        schedule: 形状约定，默认标准配置
        seed: 随机初始化种子
        std: source='random' 时卷积权重的标准差（偏置均置零）

    Returns:
        BackboneParams
    """
    schedule = schedule or ShapeSchedule.standard()

    if source in RANDOM_SOURCES:
        generator = torch.Generator().manual_seed(seed)
        state: Dict[str, torch.Tensor] = OrderedDict()
        for key, shape in expected_param_shapes(schedule).items():
            if key.endswith('.weight'):
                scale = std if source == 'random' else math.sqrt(2.0 / (shape[1] * shape[2] * shape[3]))
                state[key] = torch.randn(shape, generator=generator) * scale
            else:
                state[key] = torch.zeros(shape)
        params = BackboneParams(state, PROVENANCE_RANDOM, schedule)
    else:
        from src.checkpoint_manager import load_backbone_file
        raw = load_backbone_file(source)
        params = BackboneParams(_rename_torchvision_keys(raw), PROVENANCE_PRETRAINED, schedule)

    params.validate()
    return params


def _rename_torchvision_keys(raw: Dict[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
    """把 torchvision 命名（features.N.weight）转换为 convB_I.weight，其他键原样保留"""
    mapping = torchvision_name_map()
    renamed: Dict[str, torch.Tensor] = OrderedDict()
    for key, tensor in raw.items():
        prefix, _, suffix = key.rpartition('.')
        renamed[f"{mapping[prefix]}.{suffix}" if prefix in mapping else key] = tensor
    return renamed


class VGG16Encoder(nn.Module):
    """截断的 VGG-16 编码器，不含归一化层"""

    def __init__(self, schedule: Optional[ShapeSchedule] = None):
        super().__init__()
        self.schedule = schedule or ShapeSchedule.standard()

        self.convs = nn.ModuleDict()
        in_channels = 3
        for block, depth in enumerate(VGG16_BLOCK_DEPTHS, start=1):
            out_channels = self.schedule.channels_at(block)
            for index in range(1, depth + 1):
                self.convs[f"conv{block}_{index}"] = nn.Conv2d(in_channels, out_channels, 3, padding=1)
                in_channels = out_channels
        self.pool = nn.MaxPool2d(kernel_size=2, stride=2)

    def load_params(self, params: BackboneParams) -> None:
        """加载 BackboneParams（要求拓扑完全一致）"""
        params.validate()
        with torch.no_grad():
            for name, conv in self.convs.items():
                conv.weight.copy_(params.state[f"{name}.weight"])
                conv.bias.copy_(params.state[f"{name}.bias"])

    def forward(self, images: torch.Tensor) -> List[torch.Tensor]:
        self.schedule.validate_images(images)
        features = []
        x = images
        for block, depth in enumerate(VGG16_BLOCK_DEPTHS, start=1):
            if block > 1:
                x = self.pool(x)
            for index in range(1, depth + 1):
                x = torch.relu(self.convs[f"conv{block}_{index}"](x))
            features.append(x)
        return features


class ScheduledBackbone(nn.Module):
    """包装自定义骨干，强制其输出符合声明的形状约定"""

    def __init__(self, backbone: nn.Module, schedule: ShapeSchedule):
        super().__init__()
        self.backbone = backbone
        self.schedule = schedule

    def forward(self, images: torch.Tensor) -> List[torch.Tensor]:
        self.schedule.validate_images(images)
        features = list(self.backbone(images))
        self.schedule.validate_features(features)
        return features


def load_factory(spec: str) -> Callable[[ShapeSchedule], nn.Module]:
    """
    解析 "package.module:factory" 形式的骨干工厂函数

    Args:
        spec: 模块路径与属性名，以冒号分隔
    """
    module_name, _, attr = spec.partition(':')
    if not module_name or not attr:
        raise ConfigError('model.custom_backbone', f"格式应为 'module:factory'，实际 '{spec}'")
    try:
        module = importlib.import_module(module_name)
        return getattr(module, attr)
    except (ImportError, AttributeError) as e:
        raise ConfigError('model.custom_backbone', f"无法导入 '{spec}': {e}") from e


def build_encoder(backbone: str, schedule: ShapeSchedule,
                  custom_backbone: Optional[str] = None) -> nn.Module:
    """
    按名称构建编码器

    Args:
        backbone: 'vgg16-shaped' 或 'custom'
        schedule: 形状约定
        custom_backbone: backbone=custom 时的工厂函数路径
    """
    if backbone == 'vgg16-shaped':
        return VGG16Encoder(schedule)
    if backbone == 'custom':
        if not custom_backbone:
            raise ConfigError('model.custom_backbone', "backbone=custom 时必须指定工厂函数")
        return ScheduledBackbone(load_factory(custom_backbone)(schedule), schedule)
    raise ConfigError('model.backbone', f"未知骨干网络 '{backbone}'")


def extract_features(images: torch.Tensor, params: BackboneParams) -> List[torch.Tensor]:
    """
    用给定参数提取五级编码特征（评估模式，结果确定）

    Args:
        images: (B, 3, S, S) 预处理后的图像批次
        params: 骨干网络参数

    Returns:
        长度为 5 的特征列表，符合 params.schedule
    """
    encoder = VGG16Encoder(params.schedule).to(dtype=images.dtype, device=images.device)
    encoder.load_params(params)
    encoder.eval()
    with torch.no_grad():
        return encoder(images)
