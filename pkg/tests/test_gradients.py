#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
梯度校验单元测试

在微型配置、双精度下，用中心差分校验总损失对输入与抽样参数的解析梯度
"""

import os
import sys
import unittest

import numpy as np
import torch

# 添加项目根目录到Python路径
current_dir = os.path.dirname(os.path.abspath(__file__))
project_root = os.path.dirname(current_dir)
sys.path.append(project_root)

# 导入待测试模块
from src.logger import get_logger
from src.loss import total_loss
from src.model.accom import ChannelAttention, SpatialAttention
from src.model.decoder import SupervisionHead
from src.model.gradient_check import (GradientCheckResult, GradientEntry, check_model_gradients, crosses_kink,
                                     finite_difference_check, sample_indices)
from src.model.layers import init_new_layers
from src.model.network import ACCoNet
from src.model.schedule import ShapeSchedule


class TestGradientCheckHelpers(unittest.TestCase):
    """测试差分校验工具本身"""

    def setUp(self):
        """初始化测试环境"""
        self.logger = get_logger('test_gradients', level='debug')

    def test_sample_indices(self):
        """按比例抽样且至少 minimum 个，不重复"""
        tensor = torch.zeros(10, 20)
        rng = np.random.default_rng(0)
        indices = sample_indices(tensor, 0.01, rng, minimum=3)
        self.assertEqual(len(indices), 3)
        self.assertEqual(len(set(indices)), 3)
        self.assertEqual(len(sample_indices(tensor, 0.5, rng)), 100)

    def test_quadratic(self):
        """二次函数的差分梯度与解析梯度一致"""
        x = torch.randn(50, dtype=torch.float64, requires_grad=True)
        result = finite_difference_check(lambda: (x ** 2).sum() + 3 * x.sum(), {'x': x}, fraction=0.2)
        self.assertEqual(result.sampled, 10)
        self.assertEqual(result.skipped, [])
        self.assertTrue(result.passed())

    def test_kink_skipped(self):
        """步长内跨过 ReLU 不可导点的元素被跳过，其余元素正常比较"""
        x = torch.tensor([0.0, 0.5, -0.5, 0.0], dtype=torch.float64, requires_grad=True)
        result = finite_difference_check(lambda: torch.relu(x).sum(), {'x': x}, fraction=1.0)
        self.assertEqual(sorted(e.index for e in result.skipped), [(0,), (3,)])
        self.assertEqual(len(result.entries), 2)
        self.assertAlmostEqual(result.skip_fraction, 0.5)
        self.assertTrue(result.passed(max_skip_fraction=0.5))
        self.assertFalse(result.passed(max_skip_fraction=0.25))
        self.assertTrue(crosses_kink(1.0, 0.0, 1e-3, 2e-7))
        self.assertFalse(crosses_kink(1.0, 1.0 - 1e-6, 1e-3, 2e-7))

    def test_result_reports_worst(self):
        """错误的梯度被识别并排在最前"""
        result = GradientCheckResult([GradientEntry('a', (0,), 1.0, 1.0), GradientEntry('b', (1,), 1.0, 2.0)])
        self.assertFalse(result.passed())
        self.assertEqual(result.worst(1)[0].name, 'b')
        self.assertAlmostEqual(result.max_relative_error(), 0.5)


class TestModuleGradients(unittest.TestCase):
    """模块级 gradcheck"""

    def setUp(self):
        """初始化测试环境"""
        self.logger = get_logger('test_gradients', level='debug')
        torch.manual_seed(0)

    def test_attention_modules(self):
        """通道注意力与空间注意力"""
        f = torch.randn(2, 8, 5, 5, dtype=torch.float64, requires_grad=True)
        self.assertTrue(torch.autograd.gradcheck(ChannelAttention(8, 2).double(), (f,), eps=1e-6, atol=1e-6))
        self.assertTrue(torch.autograd.gradcheck(SpatialAttention(7).double(), (f,), eps=1e-6, atol=1e-6))

    def test_supervision_head(self):
        """监督头（含双线性上采样）"""
        f = torch.randn(1, 4, 4, 4, dtype=torch.float64, requires_grad=True)
        self.assertTrue(torch.autograd.gradcheck(SupervisionHead(4, 8).double(), (f,), eps=1e-6, atol=1e-6))

    def test_total_loss(self):
        """混合损失对五个显著图的梯度"""
        generator = torch.Generator().manual_seed(1)
        maps = tuple((torch.rand(1, 1, 4, 4, generator=generator, dtype=torch.float64) * 0.9 + 0.05)
                     .requires_grad_(True) for _ in range(5))
        truth = (torch.rand(1, 1, 4, 4, generator=generator, dtype=torch.float64) > 0.5).double()
        self.assertTrue(torch.autograd.gradcheck(lambda *s: total_loss(list(s), truth).total, maps,
                                                 eps=1e-6, atol=1e-6))


class TestNetworkGradients(unittest.TestCase):
    """整网差分校验（微型配置，双精度，评估模式）"""

    def setUp(self):
        """初始化测试环境"""
        self.logger = get_logger('test_gradients', level='debug')
        torch.manual_seed(0)
        self.model = ACCoNet(ShapeSchedule.micro()).double().eval()
        init_new_layers(self.model.encoder)
        generator = torch.Generator().manual_seed(2)
        self.images = torch.randn(1, 3, 64, 64, generator=generator, dtype=torch.float64)
        self.truth = torch.zeros(1, 1, 64, 64, dtype=torch.float64)
        self.truth[..., 20:44, 12:40] = 1.0

    def test_loss_gradients(self):
        """输入与全部参数张量的抽样元素相对误差 < 1e-3"""
        # 单元测试按 0.1% 抽样；1% 抽样见 scripts/test_integration.py
        result = check_model_gradients(self.model, self.images, self.truth, fraction=0.001, step=1e-6,
                                       seed=0, minimum=1)
        self.logger.debug(f"抽样 {result.sampled} 个元素，跨越不可导点跳过 {len(result.skipped)} 个")
        self.logger.debug("最大相对误差: " + ", ".join(
            f"{e.name}{list(e.index)} {e.relative_error():.2e}" for e in result.worst(3)))

        expected = {'images'} | {name for name, _ in self.model.named_parameters()}
        self.assertEqual(set(result.names()), expected, "每个参数张量都应被抽样")
        self.assertLessEqual(result.skip_fraction, 0.5, f"跳过比例 {result.skip_fraction:.2f} 过高")
        self.assertTrue(result.passed(rtol=1e-3, atol=1e-7),
                        f"最大相对误差 {result.max_relative_error(atol=1e-7):.3e}")


if __name__ == "__main__":
    unittest.main()
