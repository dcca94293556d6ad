#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
混合损失模块

像素级 BCE 损失 + 图级 IoU 损失，对五个深监督输出不加权求和。
"""

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import torch
import torch.nn as nn

from src.errors import ShapeMismatchError
from src.model.schedule import NUM_LEVELS

EPS = 1e-7

LOSS_MODES = ('both', 'bce', 'iou')


def _check_pair(saliency: torch.Tensor, truth: torch.Tensor) -> None:
    if saliency.shape != truth.shape:
        for dim, (want, got) in enumerate(zip(truth.shape, saliency.shape)):
            if want != got:
                raise ShapeMismatchError('SaliencyMap', f"dim{dim}", want, got)
        raise ShapeMismatchError('SaliencyMap', 'ndim', truth.dim(), saliency.dim())


def bce_loss(saliency: torch.Tensor, truth: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """所有像素上 max(0, -[G log(S+eps) + (1-G) log(1-S+eps)]) 的均值"""
    _check_pair(saliency, truth)
    loss = -(truth * torch.log(saliency + eps) + (1.0 - truth) * torch.log(1.0 - saliency + eps))
    # S 恰为 0 或 1 时 log(1+eps) > 0，逐像素截断到 0
    loss = loss.clamp_min(0.0)
    return loss.mean()


def iou_loss(saliency: torch.Tensor, truth: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """
    每个样本 1 - (ΣSG + eps) / (ΣS + ΣG - ΣSG + eps)，再对批次取平均

    Args:
        saliency: (B, 1, H, W) 或 (H, W) 显著图
        truth: 与 saliency 同形状的二值掩码
    """
    _check_pair(saliency, truth)
    if saliency.dim() < 3:
        saliency = saliency.unsqueeze(0)
        truth = truth.unsqueeze(0)
    dims = tuple(range(1, saliency.dim()))
    intersection = (saliency * truth).sum(dim=dims)
    union = saliency.sum(dim=dims) + truth.sum(dim=dims) - intersection
    return (1.0 - (intersection + eps) / (union + eps)).mean()


@dataclass
class LossBreakdown:
    """按层级 1..5 排列的各项损失及总损失"""
    bce: List[torch.Tensor] = field(default_factory=list)
    iou: List[torch.Tensor] = field(default_factory=list)
    total: torch.Tensor = None
    mode: str = 'both'

    def as_floats(self) -> Dict[str, float]:
        """用于训练日志的标量字典"""
        row = {f"bce_{t}": float(v.detach()) for t, v in enumerate(self.bce, start=1)}
        row.update({f"iou_{t}": float(v.detach()) for t, v in enumerate(self.iou, start=1)})
        row['total'] = float(self.total.detach())
        return row


def total_loss(saliency_maps: Sequence[torch.Tensor], truth: torch.Tensor,
               mode: str = 'both', eps: float = EPS) -> LossBreakdown:
    """
    深监督混合损失

    Args:
        saliency_maps: 五个显著图 S^1..S^5，均已在真值分辨率
        truth: 真值掩码
        mode: both | bce | iou，决定哪些项计入 total（两项都会计算以便记录）

    Returns:
        LossBreakdown
    """
    if mode not in LOSS_MODES:
        raise ValueError(f"未知损失模式 '{mode}'，可选 {LOSS_MODES}")
    if len(saliency_maps) != NUM_LEVELS:
        raise ShapeMismatchError('SaliencyMaps', 'levels', NUM_LEVELS, len(saliency_maps))

    breakdown = LossBreakdown(mode=mode)
    for saliency in saliency_maps:
        breakdown.bce.append(bce_loss(saliency, truth, eps))
        breakdown.iou.append(iou_loss(saliency, truth, eps))

    terms = []
    if mode in ('both', 'bce'):
        terms.extend(breakdown.bce)
    if mode in ('both', 'iou'):
        terms.extend(breakdown.iou)
    breakdown.total = torch.stack(terms).sum()
    return breakdown


class HybridLoss(nn.Module):
    """total_loss 的模块形式，便于在训练器中按配置构造"""

    def __init__(self, mode: str = 'both', eps: float = EPS):
        super().__init__()
        if mode not in LOSS_MODES:
            raise ValueError(f"未知损失模式 '{mode}'，可选 {LOSS_MODES}")
        self.mode = mode
        self.eps = eps

    def forward(self, saliency_maps: Sequence[torch.Tensor], truth: torch.Tensor) -> LossBreakdown:
        return total_loss(saliency_maps, truth, self.mode, self.eps)
