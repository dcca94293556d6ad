#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
基础网络层

卷积 + BN + ReLU 组合、反卷积连接以及新增层的参数初始化。
"""

import torch.nn as nn


class ConvBNReLU(nn.Sequential):
    """3x3（可带空洞）卷积 + BatchNorm + ReLU，padding 等于空洞率以保持空间尺寸"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, dilation: int = 1):
        padding = dilation * (kernel_size - 1) // 2
        super().__init__(
            nn.Conv2d(in_channels, out_channels, kernel_size, padding=padding,
                      dilation=dilation, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=False),
        )
        self.dilation = dilation


class DeconvBNReLU(nn.Sequential):
    """2x2 步长 2 的反卷积 + BatchNorm + ReLU，空间尺寸精确放大 2 倍"""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__(
            nn.ConvTranspose2d(in_channels, out_channels, kernel_size=2, stride=2, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=False),
        )


def init_new_layers(module: nn.Module) -> None:
    """
    新增层初始化：卷积/全连接权重取 He 正态分布，偏置置零，BN 取单位变换

    Args:
        module: 需要初始化的模块（递归处理子模块）
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, mode='fan_in', nonlinearity='relu')
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
