#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
解码器模块

分叉-聚合块（BAB）、块间反卷积连接以及五个深监督输出头。
解码顺序严格为 t = 5,4,3,2,1，信息从粗到细流动。
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.errors import DispatchError, ShapeMismatchError
from src.model.layers import ConvBNReLU, DeconvBNReLU
from src.model.schedule import NUM_LEVELS, ShapeSchedule


BAB_MODE_FULL = 'full'
BAB_MODE_DIRECT = 'direct'
BAB_MODE_NORMAL_CONV = 'normal-conv'
BAB_MODES = (BAB_MODE_FULL, BAB_MODE_DIRECT, BAB_MODE_NORMAL_CONV)

# 两个分叉的空洞率 (r1, r2)
SHALLOW_RATES = (5, 3)
DEEP_RATES = (3, 2)


def bifurcation_rates(level: int) -> Tuple[int, int]:
    """t=1,2,3 取 (5,3)，t=4,5 取 (3,2)"""
    return SHALLOW_RATES if level <= 3 else DEEP_RATES


@dataclass(frozen=True)
class BabConfig:
    """单个 BAB 的配置"""
    level: int
    channels: int
    upstream_channels: Optional[int] = None
    output_size: Optional[int] = None
    mode: str = BAB_MODE_FULL
    aggregate: bool = True

    def __post_init__(self):
        if not 1 <= self.level <= NUM_LEVELS:
            raise ValueError(f"BAB 层级必须在 1..{NUM_LEVELS} 之间，实际 {self.level}")
        if self.mode not in BAB_MODES:
            raise ValueError(f"未知 bab_mode '{self.mode}'，可选 {BAB_MODES}")
        if (self.level < NUM_LEVELS) != (self.upstream_channels is not None):
            raise ValueError(f"BAB-{self.level} 的 upstream_channels 设置与层级不符")

    @property
    def rates(self) -> Tuple[int, int]:
        return bifurcation_rates(self.level)

    @property
    def has_upstream(self) -> bool:
        return self.level < NUM_LEVELS

    @classmethod
    def for_level(cls, schedule: ShapeSchedule, level: int, mode: str = BAB_MODE_FULL,
                  aggregate: bool = True) -> 'BabConfig':
        upstream = schedule.channels_at(level + 1) if level < NUM_LEVELS else None
        return cls(level, schedule.channels_at(level), upstream, schedule.size(level), mode, aggregate)


@dataclass
class DecoderState:
    """解码结果：f_bab 与 S 均按层级 1..5 排列"""
    f_bab: List[torch.Tensor] = field(default_factory=list)
    saliency: List[torch.Tensor] = field(default_factory=list)

    @property
    def final(self) -> torch.Tensor:
        """最终预测 S^1"""
        return self.saliency[0]


class BifurcationAggregationBlock(nn.Module):
    """
    BAB-t

    上游特征经反卷积后与 f_accom 通道拼接，三个级联 3x3 卷积得到 f_bc^{t,1..3}；
    在第 1、2 个级联卷积之后各引出一个空洞卷积分叉，与 f_bc^{t,3} 拼接后 3x3 卷积聚合。
    aggregate=False 时只保留反卷积连接与级联卷积（基线解码块）。
    """

    def __init__(self, cfg: BabConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels

        if cfg.has_upstream:
            self.deconv = DeconvBNReLU(cfg.upstream_channels, c)
        first_in = 2 * c if cfg.has_upstream else c
        self.cascade = nn.ModuleList([ConvBNReLU(first_in, c), ConvBNReLU(c, c), ConvBNReLU(c, c)])

        if cfg.aggregate:
            self.bifurcations = nn.ModuleList([self._make_bifurcation(c, rate) for rate in cfg.rates])
            self.aggregation = ConvBNReLU(3 * c, c)

    def _make_bifurcation(self, channels: int, rate: int) -> nn.Module:
        if self.cfg.mode == BAB_MODE_DIRECT:
            return nn.Identity()
        if self.cfg.mode == BAB_MODE_NORMAL_CONV:
            return ConvBNReLU(channels, channels, 3, dilation=1)
        return ConvBNReLU(channels, channels, 3, dilation=rate)

    def _check_inputs(self, f_accom: torch.Tensor, upstream: Optional[torch.Tensor]) -> None:
        level = self.cfg.level
        if upstream is not None and not self.cfg.has_upstream:
            raise DispatchError(f"BAB-{level} 不接受上游特征")
        if upstream is None and self.cfg.has_upstream:
            raise DispatchError(f"BAB-{level} 缺少上游特征 f_bab^{level + 1}")
        if f_accom.dim() != 4:
            raise ShapeMismatchError(f"BAB-{level} 输入", 'ndim', 4, f_accom.dim())
        if f_accom.shape[1] != self.cfg.channels:
            raise ShapeMismatchError(f"BAB-{level} 输入", 'channels', self.cfg.channels, f_accom.shape[1])
        if self.cfg.output_size is not None and f_accom.shape[-1] != self.cfg.output_size:
            raise ShapeMismatchError(f"BAB-{level} 输入", 'width', self.cfg.output_size, f_accom.shape[-1])

    def link(self, upstream: torch.Tensor, f_accom: torch.Tensor) -> torch.Tensor:
        """反卷积上游特征并与 f_accom 通道拼接"""
        lifted = self.deconv(upstream)
        if lifted.shape[-2:] != f_accom.shape[-2:]:
            raise ShapeMismatchError(f"BAB-{self.cfg.level} 反卷积输出", 'spatial',
                                     tuple(f_accom.shape[-2:]), tuple(lifted.shape[-2:]))
        return torch.cat([f_accom, lifted], dim=1)

    def cascade_features(self, x: torch.Tensor) -> List[torch.Tensor]:
        """三个级联卷积的输出 f_bc^{t,1..3}"""
        outputs = []
        for conv in self.cascade:
            x = conv(x)
            outputs.append(x)
        return outputs

    def forward(self, f_accom: torch.Tensor, upstream: Optional[torch.Tensor] = None) -> torch.Tensor:
        self._check_inputs(f_accom, upstream)
        x = self.link(upstream, f_accom) if upstream is not None else f_accom
        bc1, bc2, bc3 = self.cascade_features(x)
        if not self.cfg.aggregate:
            return bc3
        bif1 = self.bifurcations[0](bc1)
        bif2 = self.bifurcations[1](bc2)
        return self.aggregation(torch.cat([bif1, bif2, bc3], dim=1))


class SupervisionHead(nn.Module):
    """3x3 卷积到单通道，双线性上采样到输入尺寸，Sigmoid 压缩到 [0,1]"""

    def __init__(self, channels: int, target_size: int):
        super().__init__()
        self.channels = channels
        self.target_size = target_size
        self.conv = nn.Conv2d(channels, 1, kernel_size=3, padding=1, bias=True)

    def forward(self, f_bab: torch.Tensor) -> torch.Tensor:
        if f_bab.dim() != 4:
            raise ShapeMismatchError('SupervisionHead 输入', 'ndim', 4, f_bab.dim())
        if f_bab.shape[1] != self.channels:
            raise ShapeMismatchError('SupervisionHead 输入', 'channels', self.channels, f_bab.shape[1])
        logits = self.conv(f_bab)
        if logits.shape[-1] != self.target_size or logits.shape[-2] != self.target_size:
            logits = F.interpolate(logits, size=(self.target_size, self.target_size),
                                   mode='bilinear', align_corners=False)
        return torch.sigmoid(logits)


class Decoder(nn.Module):
    """五个 BAB 与五个监督头，bab_blocks[t-1] 对应 BAB-t"""

    def __init__(self, schedule: ShapeSchedule, mode: str = BAB_MODE_FULL, aggregate: bool = True):
        super().__init__()
        self.schedule = schedule
        self.bab_blocks = nn.ModuleList([
            BifurcationAggregationBlock(BabConfig.for_level(schedule, t, mode, aggregate))
            for t in range(1, NUM_LEVELS + 1)
        ])
        self.heads = nn.ModuleList([
            SupervisionHead(schedule.channels_at(t), schedule.input_size)
            for t in range(1, NUM_LEVELS + 1)
        ])

    def bab_forward(self, level: int, f_accom: torch.Tensor,
                    upstream: Optional[torch.Tensor] = None) -> torch.Tensor:
        return self.bab_blocks[level - 1](f_accom, upstream)

    def supervision_head(self, level: int, f_bab: torch.Tensor) -> torch.Tensor:
        return self.heads[level - 1](f_bab)

    def decode(self, accom_features: List[torch.Tensor]) -> DecoderState:
        """
        依次运行 BAB-5 -> BAB-1

        Args:
            accom_features: 按层级 1..5 排列的 ACCoM（或编码器）特征

        Returns:
            DecoderState，f_bab 与 saliency 均按层级 1..5 排列
        """
        self.schedule.validate_features(accom_features, 'DecoderInput')
        f_bab: List[Optional[torch.Tensor]] = [None] * NUM_LEVELS
        upstream = None
        for t in range(NUM_LEVELS, 0, -1):
            upstream = self.bab_forward(t, accom_features[t - 1], upstream)
            f_bab[t - 1] = upstream
        saliency = [self.supervision_head(t, f_bab[t - 1]) for t in range(1, NUM_LEVELS + 1)]
        return DecoderState(f_bab=f_bab, saliency=saliency)

    def forward(self, accom_features: List[torch.Tensor]) -> DecoderState:
        return self.decode(accom_features)
