#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
有限差分梯度校验

对输入张量和参数张量随机抽取若干元素，用中心差分与自动求导结果比较。
整模型逐元素差分代价太高，因此只抽样；模块级校验直接使用 torch.autograd.gradcheck。

网络中有大量 ReLU 与最大池化，差分步长内可能跨过不可导点（kink）。
此时前向差分与后向差分不一致，中心差分不代表任何一侧的导数，
这类元素记为跳过，不参与误差比较，跳过比例过高时校验失败。
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch


@dataclass
class GradientEntry:
    name: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float
    forward: Optional[float] = None
    backward: Optional[float] = None

    @property
    def abs_error(self) -> float:
        return abs(self.analytic - self.numeric)

    def relative_error(self, floor: float = 1e-8) -> float:
        scale = max(abs(self.analytic), abs(self.numeric), floor)
        return self.abs_error / scale


@dataclass
class GradientCheckResult:
    entries: List[GradientEntry] = field(default_factory=list)
    skipped: List[GradientEntry] = field(default_factory=list)

    @property
    def sampled(self) -> int:
        return len(self.entries) + len(self.skipped)

    @property
    def skip_fraction(self) -> float:
        return len(self.skipped) / self.sampled if self.sampled else 0.0

    def max_relative_error(self, atol: float = 1e-8) -> float:
        """忽略绝对误差低于 atol 的元素后的最大相对误差"""
        errors = [e.relative_error() for e in self.entries if e.abs_error > atol]
        return max(errors) if errors else 0.0

    def passed(self, rtol: float = 1e-3, atol: float = 1e-8, max_skip_fraction: float = 0.5) -> bool:
        return self.max_relative_error(atol) < rtol and self.skip_fraction <= max_skip_fraction

    def worst(self, count: int = 5) -> List[GradientEntry]:
        return sorted(self.entries, key=lambda e: e.relative_error(), reverse=True)[:count]

    def names(self) -> List[str]:
        return sorted({e.name for e in self.entries + self.skipped})


def sample_indices(tensor: torch.Tensor, fraction: float, rng: np.random.Generator,
                   minimum: int = 1) -> List[Tuple[int, ...]]:
    """按比例不放回抽取元素下标，至少 minimum 个"""
    total = tensor.numel()
    count = min(total, max(minimum, int(round(total * fraction))))
    flat = rng.choice(total, size=count, replace=False)
    return [tuple(int(i) for i in np.unravel_index(f, tuple(tensor.shape))) for f in sorted(flat)]


def crosses_kink(forward: float, backward: float, kink_rtol: float, kink_atol: float) -> bool:
    """前向与后向差分不一致，说明步长内存在不可导点"""
    return abs(forward - backward) > kink_rtol * max(abs(forward), abs(backward)) + kink_atol


def finite_difference_check(loss_fn: Callable[[], torch.Tensor], tensors: Dict[str, torch.Tensor],
                            fraction: float = 0.01, step: float = 1e-6, seed: int = 0,
                            minimum: int = 1, kink_rtol: float = 1e-3,
                            kink_atol: float = 2e-7) -> GradientCheckResult:
    """
    差分校验

    每个抽样元素计算 L(x+h)、L(x-h)，与 L(x) 组成前向、后向和中心差分。
    前向与后向差分之差超过 kink_rtol·max(|前向|, |后向|) + kink_atol 时记为跳过，
    否则用中心差分与解析梯度比较。kink_rtol/kink_atol 不大于比较时的 rtol 与 2·atol 时，
    未被识别的不可导点造成的中心差分误差不会超过比较容差。

    Args:
        loss_fn: 无参可调用对象，返回标量损失（内部读取 tensors 的当前值）
        tensors: 名称 -> 需要求导的叶子张量（建议 float64）
        fraction: 每个张量抽样比例
        step: 差分步长
        seed: 抽样种子
        minimum: 每个张量最少抽样数
        kink_rtol: 判定跨越不可导点的相对容差
        kink_atol: 判定跨越不可导点的绝对容差

    Returns:
        GradientCheckResult
    """
    rng = np.random.default_rng(seed)
    names = list(tensors.keys())
    leaves: Sequence[torch.Tensor] = [tensors[name] for name in names]

    loss = loss_fn()
    analytic = torch.autograd.grad(loss, leaves, allow_unused=True)

    result = GradientCheckResult()
    with torch.no_grad():
        base = loss_fn().item()
        for name, leaf, grad in zip(names, leaves, analytic):
            for index in sample_indices(leaf, fraction, rng, minimum):
                original = leaf[index].item()
                leaf[index] = original + step
                plus = loss_fn().item()
                leaf[index] = original - step
                minus = loss_fn().item()
                leaf[index] = original

                forward = (plus - base) / step
                backward = (base - minus) / step
                value = 0.0 if grad is None else grad[index].item()
                entry = GradientEntry(name, index, value, (plus - minus) / (2.0 * step), forward, backward)
                if crosses_kink(forward, backward, kink_rtol, kink_atol):
                    result.skipped.append(entry)
                else:
                    result.entries.append(entry)
    return result


def check_model_gradients(model: torch.nn.Module, images: torch.Tensor, truth: torch.Tensor,
                          fraction: float = 0.01, step: float = 1e-6, seed: int = 0, minimum: int = 1,
                          mode: str = 'both') -> GradientCheckResult:
    """
    校验 total_loss 对输入图像与网络全部参数的梯度

    按 named_parameters() 逐个张量以 fraction 比例抽样（每个张量至少 minimum 个），
    输入图像同样抽样。请在双精度、评估模式下调用。
    """
    from src.loss import total_loss

    images = images.detach().clone().requires_grad_(True)
    tensors: Dict[str, torch.Tensor] = {'images': images}
    tensors.update(dict(model.named_parameters()))

    def loss_fn() -> torch.Tensor:
        return total_loss(model(images), truth, mode=mode).total

    return finite_difference_check(loss_fn, tensors, fraction=fraction, step=step, seed=seed, minimum=minimum)
