#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
相邻上下文协调模块（ACCoM）

局部分支：四路并行空洞卷积（r = 1,2,3,4）+ 拼接融合，再经通道注意力与空间注意力调制；
相邻分支：前一层特征下采样、后一层特征上采样，经空间注意力得到的图作用于 f_c；
最终输出为各分支与原始特征 f_e^t 的逐元素求和。
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.errors import DispatchError, ShapeMismatchError
from src.model.layers import ConvBNReLU
from src.model.schedule import NUM_LEVELS


DILATION_RATES = (1, 2, 3, 4)


@dataclass(frozen=True)
class AccomConfig:
    """单个 ACCoM 的配置"""
    level: int
    channels: int
    dilation_rates: Tuple[int, ...] = DILATION_RATES
    reduction: int = 16
    spatial_kernel: int = 7
    local_branch: bool = True
    adjacent_branches: bool = True

    def __post_init__(self):
        if not 1 <= self.level <= NUM_LEVELS:
            raise ValueError(f"ACCoM 层级必须在 1..{NUM_LEVELS} 之间，实际 {self.level}")
        if tuple(self.dilation_rates) != DILATION_RATES:
            raise ValueError(f"空洞率必须为 {DILATION_RATES}，实际 {self.dilation_rates}")
        if self.spatial_kernel % 2 != 1:
            raise ValueError(f"空间注意力卷积核必须为奇数，实际 {self.spatial_kernel}")

    @property
    def has_previous(self) -> bool:
        return self.level > 1

    @property
    def has_subsequent(self) -> bool:
        return self.level < NUM_LEVELS

    @property
    def hidden_channels(self) -> int:
        return max(1, self.channels // self.reduction)


@dataclass
class BranchFeatures:
    """ACCoM 内部各分支的输出；未执行的分支为 None"""
    f_c: torch.Tensor
    f_loc: Optional[torch.Tensor] = None
    f_pc: Optional[torch.Tensor] = None
    f_sc: Optional[torch.Tensor] = None

    def executed(self) -> List[str]:
        """已执行分支的名称"""
        return [name for name in ('f_loc', 'f_pc', 'f_sc') if getattr(self, name) is not None]


def _check_channels(feature: torch.Tensor, channels: int, what: str) -> None:
    if feature.dim() != 4:
        raise ShapeMismatchError(what, 'ndim', 4, feature.dim())
    if feature.shape[1] != channels:
        raise ShapeMismatchError(what, 'channels', channels, feature.shape[1])


class ChannelAttention(nn.Module):
    """空间全局最大池化 -> FC + ReLU -> FC + Sigmoid，输出 (B, C) 通道权重"""

    def __init__(self, channels: int, hidden_channels: int):
        super().__init__()
        self.channels = channels
        self.fc1 = nn.Linear(channels, hidden_channels)
        self.fc2 = nn.Linear(hidden_channels, channels)

    def pool(self, f: torch.Tensor) -> torch.Tensor:
        """每个通道在空间上的最大值，(B, C)"""
        _check_channels(f, self.channels, 'ChannelAttention 输入')
        return torch.amax(f, dim=(2, 3))

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        descriptor = self.pool(f)
        return torch.sigmoid(self.fc2(torch.relu(self.fc1(descriptor))))


class SpatialAttention(nn.Module):
    """通道维全局最大池化 -> 单通道卷积 + Sigmoid，输出 (B, 1, H, W)"""

    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(1, 1, kernel_size, padding=kernel_size // 2, bias=True)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        if f.dim() != 4:
            raise ShapeMismatchError('SpatialAttention 输入', 'ndim', 4, f.dim())
        pooled = torch.amax(f, dim=1, keepdim=True)
        return torch.sigmoid(self.conv(pooled))


class AdjacentContextCoordination(nn.Module):
    """ACCoM-t：协调当前层与相邻层特征"""

    def __init__(self, cfg: AccomConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels

        if cfg.local_branch:
            self.pyramid = nn.ModuleList([ConvBNReLU(c, c, 3, dilation=r) for r in cfg.dilation_rates])
            self.pyramid_fuse = ConvBNReLU(len(cfg.dilation_rates) * c, c, 3)
            self.channel_att = ChannelAttention(c, cfg.hidden_channels)
            self.local_sa = SpatialAttention(cfg.spatial_kernel)

        # 相邻分支的空间注意力参数与局部分支独立
        if cfg.adjacent_branches and cfg.has_previous:
            self.previous_sa = SpatialAttention(cfg.spatial_kernel)
        if cfg.adjacent_branches and cfg.has_subsequent:
            self.subsequent_sa = SpatialAttention(cfg.spatial_kernel)

        self.down = nn.MaxPool2d(kernel_size=2, stride=2)

    def dilated_pyramid(self, f_cur: torch.Tensor) -> torch.Tensor:
        """四路空洞卷积并行后拼接，3x3 卷积融合回 c_t 通道，得到 f_c"""
        if not self.cfg.local_branch:
            raise DispatchError(f"ACCoM-{self.cfg.level} 已关闭局部分支，没有空洞金字塔")
        _check_channels(f_cur, self.cfg.channels, f"ACCoM-{self.cfg.level} 当前特征")
        stacked = torch.cat([branch(f_cur) for branch in self.pyramid], dim=1)
        return self.pyramid_fuse(stacked)

    def channel_attention(self, f: torch.Tensor) -> torch.Tensor:
        return self.channel_att(f)

    def spatial_attention(self, f: torch.Tensor) -> torch.Tensor:
        return self.local_sa(f)

    def local_branch(self, f_c: torch.Tensor) -> torch.Tensor:
        """f_loc = SA(CA(f_c) ⊙ f_c) ⊗ f_c"""
        weights = self.channel_attention(f_c)
        modulated = f_c * weights[:, :, None, None]
        return self.spatial_attention(modulated) * f_c

    def previous_to_current(self, f_prev: torch.Tensor, f_c: torch.Tensor) -> torch.Tensor:
        """f_pc = SA(Down(f_e^{t-1})) ⊗ f_c，Down 为 2x2 最大池化"""
        if not hasattr(self, 'previous_sa'):
            raise DispatchError(f"ACCoM-{self.cfg.level} 没有 previous-to-current 分支")
        down = self.down(f_prev)
        if down.shape[-2:] != f_c.shape[-2:]:
            raise ShapeMismatchError(f"ACCoM-{self.cfg.level} 下采样后的前一层特征", 'spatial',
                                     tuple(f_c.shape[-2:]), tuple(down.shape[-2:]))
        return self.previous_sa(down) * f_c

    def subsequent_to_current(self, f_next: torch.Tensor, f_c: torch.Tensor) -> torch.Tensor:
        """f_sc = SA(Up(f_e^{t+1})) ⊗ f_c，Up 为 2 倍双线性插值（align_corners=False）"""
        if not hasattr(self, 'subsequent_sa'):
            raise DispatchError(f"ACCoM-{self.cfg.level} 没有 subsequent-to-current 分支")
        up = F.interpolate(f_next, scale_factor=2, mode='bilinear', align_corners=False)
        if up.shape[-2:] != f_c.shape[-2:]:
            raise ShapeMismatchError(f"ACCoM-{self.cfg.level} 上采样后的后一层特征", 'spatial',
                                     tuple(f_c.shape[-2:]), tuple(up.shape[-2:]))
        return self.subsequent_sa(up) * f_c

    def _check_dispatch(self, f_prev: Optional[torch.Tensor], f_next: Optional[torch.Tensor]) -> None:
        level = self.cfg.level
        if f_prev is not None and not self.cfg.has_previous:
            raise DispatchError(f"ACCoM-{level} 不接受前一层特征")
        if f_next is not None and not self.cfg.has_subsequent:
            raise DispatchError(f"ACCoM-{level} 不接受后一层特征")
        if self.cfg.adjacent_branches:
            if self.cfg.has_previous and f_prev is None:
                raise DispatchError(f"ACCoM-{level} 缺少前一层特征")
            if self.cfg.has_subsequent and f_next is None:
                raise DispatchError(f"ACCoM-{level} 缺少后一层特征")

    def branches(self, f_cur: torch.Tensor, f_prev: Optional[torch.Tensor] = None,
                 f_next: Optional[torch.Tensor] = None) -> BranchFeatures:
        """执行适用的分支，返回各分支输出"""
        self._check_dispatch(f_prev, f_next)
        _check_channels(f_cur, self.cfg.channels, f"ACCoM-{self.cfg.level} 当前特征")

        if self.cfg.local_branch:
            f_c = self.dilated_pyramid(f_cur)
            result = BranchFeatures(f_c=f_c, f_loc=self.local_branch(f_c))
        else:
            # 没有局部分支时，相邻分支直接作用在 f_e^t 上
            result = BranchFeatures(f_c=f_cur)

        if self.cfg.adjacent_branches:
            if f_prev is not None:
                result.f_pc = self.previous_to_current(f_prev, result.f_c)
            if f_next is not None:
                result.f_sc = self.subsequent_to_current(f_next, result.f_c)
        return result

    def coordinate(self, f_cur: torch.Tensor, f_prev: Optional[torch.Tensor] = None,
                   f_next: Optional[torch.Tensor] = None) -> torch.Tensor:
        """f_accom = f_loc + f_pc + f_sc + f_e（按层级省略不存在的项）"""
        result = self.branches(f_cur, f_prev, f_next)
        output = f_cur
        for name in result.executed():
            output = output + getattr(result, name)
        return output

    def forward(self, f_cur: torch.Tensor, f_prev: Optional[torch.Tensor] = None,
                f_next: Optional[torch.Tensor] = None) -> torch.Tensor:
        return self.coordinate(f_cur, f_prev, f_next)
