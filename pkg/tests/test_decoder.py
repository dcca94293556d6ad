#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
解码器单元测试

测试 BAB 的形状与调度、分叉模式、监督头以及从粗到细的解码顺序
"""

import os
import sys
import unittest

import numpy as np
import torch
import torch.nn as nn

# 添加项目根目录到Python路径
current_dir = os.path.dirname(os.path.abspath(__file__))
project_root = os.path.dirname(current_dir)
sys.path.append(project_root)

# 导入待测试模块
import oracles
from src.errors import DispatchError, ShapeMismatchError
from src.logger import get_logger
from src.model.decoder import (BAB_MODE_DIRECT, BAB_MODE_NORMAL_CONV, BabConfig, BifurcationAggregationBlock,
                               Decoder, SupervisionHead, bifurcation_rates)
from src.model.schedule import ShapeSchedule


def micro_features(batch: int = 1, seed: int = 0):
    schedule = ShapeSchedule.micro()
    generator = torch.Generator().manual_seed(seed)
    return [torch.randn(schedule.expected_shape(t, batch), generator=generator) for t in range(1, 6)]


class TestBifurcationAggregationBlock(unittest.TestCase):
    """测试单个 BAB"""

    def setUp(self):
        """初始化测试环境"""
        self.logger = get_logger('test_decoder', level='debug')

    def test_rates_by_level(self):
        """t=1..3 的空洞率为 (5,3)，t=4,5 为 (3,2)"""
        self.assertEqual([bifurcation_rates(t) for t in range(1, 6)],
                         [(5, 3), (5, 3), (5, 3), (3, 2), (3, 2)])

    def test_standard_level3_shape(self):
        """标准配置 BAB-3: (1,256,64,64) 与上游 (1,512,32,32) 得到 (1,256,64,64)"""
        block = BifurcationAggregationBlock(BabConfig.for_level(ShapeSchedule.standard(), 3)).eval()
        with torch.no_grad():
            output = block(torch.randn(1, 256, 64, 64), torch.randn(1, 512, 32, 32))
        self.assertEqual(tuple(output.shape), (1, 256, 64, 64))

    def test_standard_level5_shape(self):
        """标准配置 BAB-5 没有上游输入"""
        block = BifurcationAggregationBlock(BabConfig.for_level(ShapeSchedule.standard(), 5)).eval()
        with torch.no_grad():
            output = block(torch.randn(1, 512, 16, 16))
        self.assertEqual(tuple(output.shape), (1, 512, 16, 16))

    def test_upstream_dispatch(self):
        """BAB-5 拒绝上游特征，其余层级缺少上游特征时报错"""
        schedule = ShapeSchedule.micro()
        bab5 = BifurcationAggregationBlock(BabConfig.for_level(schedule, 5))
        bab3 = BifurcationAggregationBlock(BabConfig.for_level(schedule, 3))
        with self.assertRaises(DispatchError):
            bab5(torch.randn(1, 64, 4, 4), torch.randn(1, 64, 2, 2))
        with self.assertRaises(DispatchError):
            bab3(torch.randn(1, 32, 16, 16))

    def test_shape_errors(self):
        """通道或尺寸不符时抛出 ShapeMismatchError"""
        schedule = ShapeSchedule.micro()
        bab3 = BifurcationAggregationBlock(BabConfig.for_level(schedule, 3))
        with self.assertRaises(ShapeMismatchError):
            bab3(torch.randn(1, 16, 16, 16), torch.randn(1, 64, 8, 8))
        with self.assertRaises(ShapeMismatchError):
            bab3(torch.randn(1, 32, 16, 16), torch.randn(1, 64, 4, 4))

    def test_invalid_config(self):
        """层级、模式或上游通道与层级不符时拒绝构造"""
        with self.assertRaises(ValueError):
            BabConfig(level=0, channels=8)
        with self.assertRaises(ValueError):
            BabConfig(level=5, channels=8, mode='skip')
        with self.assertRaises(ValueError):
            BabConfig(level=3, channels=8)
        with self.assertRaises(ValueError):
            BabConfig(level=5, channels=8, upstream_channels=8)

    def test_bifurcation_modes(self):
        """full 使用空洞卷积，direct 为直连，normal-conv 为普通卷积"""
        schedule = ShapeSchedule.micro()
        full = BifurcationAggregationBlock(BabConfig.for_level(schedule, 2))
        self.assertEqual([b[0].dilation for b in full.bifurcations], [(5, 5), (3, 3)])

        direct = BifurcationAggregationBlock(BabConfig.for_level(schedule, 2, BAB_MODE_DIRECT))
        self.assertTrue(all(isinstance(b, nn.Identity) for b in direct.bifurcations))

        normal = BifurcationAggregationBlock(BabConfig.for_level(schedule, 4, BAB_MODE_NORMAL_CONV))
        self.assertEqual([b[0].dilation for b in normal.bifurcations], [(1, 1), (1, 1)])

        f_accom, upstream = torch.randn(2, 16, 32, 32), torch.randn(2, 32, 16, 16)
        for block in (full, direct):
            self.assertEqual(tuple(block(f_accom, upstream).shape), (2, 16, 32, 32))

    def test_without_aggregation(self):
        """aggregate=False 时输出第三个级联卷积"""
        schedule = ShapeSchedule.micro()
        block = BifurcationAggregationBlock(BabConfig.for_level(schedule, 5, aggregate=False)).eval()
        self.assertFalse(hasattr(block, 'aggregation'))
        f_accom = torch.randn(1, 64, 4, 4)
        with torch.no_grad():
            output = block(f_accom)
            expected = block.cascade_features(f_accom)[2]
        self.assertTrue(torch.equal(output, expected))


class TestBabAgainstOracle(unittest.TestCase):
    """与循环实现逐元素比对（双精度，评估模式）"""

    def setUp(self):
        """初始化测试环境"""
        self.logger = get_logger('test_decoder', level='debug')
        torch.manual_seed(0)
        self.block = BifurcationAggregationBlock(
            BabConfig(level=4, channels=3, upstream_channels=2, output_size=4)).double().eval()
        oracles.randomize_batch_norm(self.block, seed=3)
        generator = torch.Generator().manual_seed(4)
        self.f_accom = torch.randn(1, 3, 4, 4, generator=generator, dtype=torch.float64)
        self.upstream = torch.randn(1, 2, 2, 2, generator=generator, dtype=torch.float64)

    def test_block(self):
        """反卷积连接、级联卷积、两个分叉与聚合"""
        with torch.no_grad():
            actual = self.block(self.f_accom, self.upstream)[0].numpy()

        lifted = oracles.deconv_bn_relu(self.upstream[0].numpy(), self.block.deconv)
        x = np.concatenate([self.f_accom[0].numpy(), lifted], axis=0)
        bc1 = oracles.conv_bn_relu(x, self.block.cascade[0])
        bc2 = oracles.conv_bn_relu(bc1, self.block.cascade[1])
        bc3 = oracles.conv_bn_relu(bc2, self.block.cascade[2])
        bif1 = oracles.conv_bn_relu(bc1, self.block.bifurcations[0])
        bif2 = oracles.conv_bn_relu(bc2, self.block.bifurcations[1])
        expected = oracles.conv_bn_relu(np.concatenate([bif1, bif2, bc3], axis=0), self.block.aggregation)

        np.testing.assert_allclose(actual, expected, rtol=1e-9, atol=1e-10)

    def test_supervision_head(self):
        """3x3 卷积、双线性上采样与 Sigmoid"""
        head = SupervisionHead(3, 8).double()
        with torch.no_grad():
            actual = head(self.f_accom)[0].numpy()
        logits = oracles.conv2d(self.f_accom[0].numpy(), oracles._np(head.conv.weight),
                                oracles._np(head.conv.bias), 1, 1)
        upsampled = oracles.bilinear_resize(logits, 8, 8)
        expected = 1.0 / (1.0 + np.exp(-upsampled))
        np.testing.assert_allclose(actual, expected, rtol=1e-9, atol=1e-12)

    def test_gradcheck(self):
        """解析梯度与数值梯度一致"""
        inputs = (self.f_accom.clone().requires_grad_(True), self.upstream.clone().requires_grad_(True))
        self.assertTrue(torch.autograd.gradcheck(self.block, inputs, eps=1e-6, atol=1e-6, rtol=1e-3))


class TestDecoder(unittest.TestCase):
    """测试完整解码器"""

    def setUp(self):
        """初始化测试环境"""
        self.logger = get_logger('test_decoder', level='debug')
        self.schedule = ShapeSchedule.micro()

    def test_decode_shapes(self):
        """五个显著图都在输入分辨率且取值在 [0,1]"""
        decoder = Decoder(self.schedule)
        state = decoder(micro_features(batch=2))
        self.assertEqual(len(state.saliency), 5)
        for t, (f_bab, saliency) in enumerate(zip(state.f_bab, state.saliency), start=1):
            self.assertEqual(tuple(f_bab.shape), self.schedule.expected_shape(t, 2))
            self.assertEqual(tuple(saliency.shape), (2, 1, 64, 64))
            self.assertGreaterEqual(float(saliency.min()), 0.0)
            self.assertLessEqual(float(saliency.max()), 1.0)
        self.assertIs(state.final, state.saliency[0])

    def test_coarse_to_fine_order(self):
        """BAB 按 5,4,3,2,1 的顺序执行"""
        decoder = Decoder(self.schedule)
        order = []
        for t, block in enumerate(decoder.bab_blocks, start=1):
            block.register_forward_hook(lambda module, inputs, output, level=t: order.append(level))
        decoder(micro_features())
        self.assertEqual(order, [5, 4, 3, 2, 1])

    def test_zero_head_gives_half(self):
        """监督头参数全零时输出恒为 0.5"""
        decoder = Decoder(self.schedule)
        for head in decoder.heads:
            for p in head.parameters():
                nn.init.zeros_(p)
        state = decoder(micro_features())
        for saliency in state.saliency:
            self.assertTrue(torch.equal(saliency, torch.full_like(saliency, 0.5)))

    def test_rejects_wrong_features(self):
        """特征层数或形状不符时抛出 ShapeMismatchError"""
        decoder = Decoder(self.schedule)
        features = micro_features()
        with self.assertRaises(ShapeMismatchError):
            decoder(features[:4])
        features[2] = torch.randn(1, 32, 8, 8)
        with self.assertRaises(ShapeMismatchError):
            decoder(features)


if __name__ == "__main__":
    unittest.main()
