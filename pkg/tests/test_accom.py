#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
ACCoM 单元测试

测试分支调度、注意力模块、加性组合关系，并与逐元素循环实现逐项比对
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
from src.model.accom import AccomConfig, AdjacentContextCoordination, ChannelAttention, SpatialAttention
from src.model.schedule import ShapeSchedule


def micro_inputs(level: int, batch: int = 1, seed: int = 0, dtype=torch.float32):
    """按微型约定构造 (f_cur, f_prev, f_next)"""
    schedule = ShapeSchedule.micro()
    generator = torch.Generator().manual_seed(seed)

    def feature(t):
        return torch.randn(schedule.expected_shape(t, batch), generator=generator, dtype=dtype)

    f_cur = feature(level)
    f_prev = feature(level - 1) if level > 1 else None
    f_next = feature(level + 1) if level < 5 else None
    return f_cur, f_prev, f_next


def micro_accom(level: int, **kwargs) -> AdjacentContextCoordination:
    schedule = ShapeSchedule.micro()
    return AdjacentContextCoordination(AccomConfig(level=level, channels=schedule.channels_at(level), **kwargs))


class TestAccomDispatch(unittest.TestCase):
    """测试各层级执行的分支"""

    def setUp(self):
        """初始化测试环境"""
        self.logger = get_logger('test_accom', level='debug')

    def test_branch_counts_per_level(self):
        """ACCoM-1 与 ACCoM-5 执行两个分支，其余三个"""
        expected = {
            1: ['f_loc', 'f_sc'],
            2: ['f_loc', 'f_pc', 'f_sc'],
            3: ['f_loc', 'f_pc', 'f_sc'],
            4: ['f_loc', 'f_pc', 'f_sc'],
            5: ['f_loc', 'f_pc'],
        }
        for level, branches in expected.items():
            accom = micro_accom(level)
            f_cur, f_prev, f_next = micro_inputs(level)
            result = accom.branches(f_cur, f_prev, f_next)
            self.assertEqual(result.executed(), branches, f"ACCoM-{level} 分支不符")

    def test_output_shape_matches_input(self):
        """输出与 f_e^t 形状相同"""
        for level in range(1, 6):
            accom = micro_accom(level)
            f_cur, f_prev, f_next = micro_inputs(level, batch=2)
            self.assertEqual(accom(f_cur, f_prev, f_next).shape, f_cur.shape)

    def test_boundary_inputs_rejected(self):
        """t=1 提供前一层、t=5 提供后一层特征时抛出 DispatchError"""
        f_cur, _, f_next = micro_inputs(1)
        with self.assertRaises(DispatchError):
            micro_accom(1)(f_cur, torch.zeros(1, 8, 128, 128), f_next)

        f_cur, f_prev, _ = micro_inputs(5)
        with self.assertRaises(DispatchError):
            micro_accom(5)(f_cur, f_prev, torch.zeros(1, 64, 2, 2))

    def test_missing_neighbour_rejected(self):
        """中间层级缺少相邻特征时抛出 DispatchError"""
        f_cur, f_prev, _ = micro_inputs(3)
        with self.assertRaises(DispatchError):
            micro_accom(3)(f_cur, f_prev, None)

    def test_neighbour_spatial_mismatch(self):
        """相邻特征尺寸与当前层不匹配时抛出 ShapeMismatchError"""
        f_cur, _, f_next = micro_inputs(3)
        with self.assertRaises(ShapeMismatchError):
            micro_accom(3)(f_cur, torch.randn(1, 16, 24, 24), f_next)

    def test_channel_mismatch(self):
        """当前特征通道数不符时抛出 ShapeMismatchError"""
        _, f_prev, f_next = micro_inputs(3)
        with self.assertRaises(ShapeMismatchError) as ctx:
            micro_accom(3)(torch.randn(1, 31, 16, 16), f_prev, f_next)
        self.assertEqual(ctx.exception.dimension, 'channels')

    def test_without_local_branch(self):
        """关闭局部分支时相邻分支直接作用于 f_e^t"""
        accom = micro_accom(3, local_branch=False)
        self.assertFalse(hasattr(accom, 'pyramid'))
        f_cur, f_prev, f_next = micro_inputs(3)
        result = accom.branches(f_cur, f_prev, f_next)
        self.assertEqual(result.executed(), ['f_pc', 'f_sc'])
        self.assertTrue(torch.equal(result.f_c, f_cur))
        with self.assertRaises(DispatchError):
            accom.dilated_pyramid(f_cur)

    def test_without_adjacent_branches(self):
        """关闭相邻分支时只执行局部分支"""
        accom = micro_accom(3, adjacent_branches=False)
        self.assertFalse(hasattr(accom, 'previous_sa'))
        f_cur, _, _ = micro_inputs(3)
        result = accom.branches(f_cur)
        self.assertEqual(result.executed(), ['f_loc'])
        with self.assertRaises(DispatchError):
            accom.previous_to_current(torch.randn(1, 16, 32, 32), result.f_c)

    def test_invalid_config(self):
        """层级、空洞率或卷积核不合法时拒绝构造"""
        with self.assertRaises(ValueError):
            AccomConfig(level=6, channels=8)
        with self.assertRaises(ValueError):
            AccomConfig(level=2, channels=8, dilation_rates=(1, 2, 4, 8))
        with self.assertRaises(ValueError):
            AccomConfig(level=2, channels=8, spatial_kernel=4)


class TestAttention(unittest.TestCase):
    """测试通道注意力与空间注意力"""

    def setUp(self):
        """初始化测试环境"""
        self.logger = get_logger('test_accom', level='debug')

    def test_zero_weights_give_half(self):
        """参数全零时注意力恒为 0.5"""
        channel = ChannelAttention(8, 2)
        spatial = SpatialAttention(7)
        for m in (channel, spatial):
            for p in m.parameters():
                nn.init.zeros_(p)
        f = torch.randn(2, 8, 6, 6)
        self.assertTrue(torch.equal(channel(f), torch.full((2, 8), 0.5)))
        self.assertTrue(torch.equal(spatial(f), torch.full((2, 1, 6, 6), 0.5)))

    def test_attention_ranges_and_shapes(self):
        """注意力输出形状正确且在 (0,1) 内"""
        f = torch.randn(2, 8, 6, 6)
        weights = ChannelAttention(8, 2)(f)
        attention = SpatialAttention(7)(f)
        self.assertEqual(tuple(weights.shape), (2, 8))
        self.assertEqual(tuple(attention.shape), (2, 1, 6, 6))
        for tensor in (weights, attention):
            self.assertGreaterEqual(float(tensor.min()), 0.0)
            self.assertLessEqual(float(tensor.max()), 1.0)

    def test_channel_descriptor_is_local(self):
        """放大一个通道只改变该通道的池化描述"""
        channel = ChannelAttention(8, 2)
        f = torch.rand(1, 8, 5, 5) + 0.1
        scaled = f.clone()
        scaled[:, 3] *= 2.0
        before, after = channel.pool(f), channel.pool(scaled)
        changed = (before != after)[0].nonzero().flatten().tolist()
        self.assertEqual(changed, [3])

    def test_channel_attention_rejects_wrong_channels(self):
        """通道数不符时抛出 ShapeMismatchError"""
        with self.assertRaises(ShapeMismatchError):
            ChannelAttention(8, 2)(torch.randn(1, 4, 5, 5))


class TestAccomComposition(unittest.TestCase):
    """测试 ACCoM 的加性组合关系"""

    def setUp(self):
        """初始化测试环境"""
        self.logger = get_logger('test_accom', level='debug')

    def test_zero_fused_features_return_input(self):
        """f_c 为零时各分支输出为零，ACCoM 输出等于 f_e^t"""
        for level in (1, 3, 5):
            accom = micro_accom(level).eval()
            with torch.no_grad():
                accom.pyramid_fuse[0].weight.zero_()
            f_cur, f_prev, f_next = micro_inputs(level, seed=level)
            with torch.no_grad():
                output = accom(f_cur, f_prev, f_next)
            self.assertTrue(torch.equal(output, f_cur), f"ACCoM-{level} 输出应等于输入")

    def test_saturated_attention_sums_branches(self):
        """注意力饱和为 1 时各分支都等于 f_c，输出为 f_e + 3·f_c"""
        accom = micro_accom(3).eval()
        with torch.no_grad():
            for sa in (accom.local_sa, accom.previous_sa, accom.subsequent_sa):
                sa.conv.weight.zero_()
                sa.conv.bias.fill_(40.0)
            accom.channel_att.fc2.weight.zero_()
            accom.channel_att.fc2.bias.fill_(40.0)

            f_cur, f_prev, f_next = micro_inputs(3, seed=11)
            result = accom.branches(f_cur, f_prev, f_next)
            output = accom(f_cur, f_prev, f_next)
        for name in result.executed():
            self.assertTrue(torch.allclose(getattr(result, name), result.f_c, atol=1e-6), name)
        self.assertTrue(torch.allclose(output, f_cur + 3 * result.f_c, atol=1e-5))


class TestAccomAgainstOracle(unittest.TestCase):
    """与循环实现逐元素比对（双精度，评估模式）"""

    def setUp(self):
        """初始化测试环境"""
        self.logger = get_logger('test_accom', level='debug')
        torch.manual_seed(0)
        # 4 通道、4x4 的小特征图，前后层尺寸按 2 倍关系构造
        self.accom = AdjacentContextCoordination(AccomConfig(level=3, channels=4, reduction=2)).double().eval()
        oracles.randomize_batch_norm(self.accom, seed=1)
        generator = torch.Generator().manual_seed(2)
        self.f_cur = torch.randn(1, 4, 4, 4, generator=generator, dtype=torch.float64)
        self.f_prev = torch.randn(1, 3, 8, 8, generator=generator, dtype=torch.float64)
        self.f_next = torch.randn(1, 5, 2, 2, generator=generator, dtype=torch.float64)

    def _oracle_f_c(self, x):
        stacked = np.concatenate([oracles.conv_bn_relu(x, branch) for branch in self.accom.pyramid], axis=0)
        return oracles.conv_bn_relu(stacked, self.accom.pyramid_fuse)

    def test_dilated_pyramid(self):
        """空洞金字塔与融合卷积"""
        with torch.no_grad():
            actual = self.accom.dilated_pyramid(self.f_cur)[0].numpy()
        expected = self._oracle_f_c(self.f_cur[0].numpy())
        np.testing.assert_allclose(actual, expected, rtol=1e-9, atol=1e-10)

    def test_attention_modules(self):
        """通道注意力与空间注意力"""
        f = self.f_cur
        with torch.no_grad():
            weights = self.accom.channel_att(f)[0].numpy()
            attention = self.accom.local_sa(f)[0].numpy()
        np.testing.assert_allclose(weights, oracles.channel_attention(f[0].numpy(), self.accom.channel_att),
                                   rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(attention, oracles.spatial_attention(f[0].numpy(), self.accom.local_sa),
                                   rtol=1e-9, atol=1e-12)

    def test_resampling(self):
        """最大池化下采样与双线性上采样"""
        with torch.no_grad():
            down = self.accom.down(self.f_prev)[0].numpy()
            up = torch.nn.functional.interpolate(self.f_next, scale_factor=2, mode='bilinear',
                                                 align_corners=False)[0].numpy()
        np.testing.assert_allclose(down, oracles.max_pool2(self.f_prev[0].numpy()), atol=0)
        np.testing.assert_allclose(up, oracles.bilinear_resize(self.f_next[0].numpy(), 4, 4),
                                   rtol=1e-12, atol=1e-12)

    def test_full_module(self):
        """f_accom = f_loc + f_pc + f_sc + f_e"""
        with torch.no_grad():
            actual = self.accom(self.f_cur, self.f_prev, self.f_next)[0].numpy()

        x = self.f_cur[0].numpy()
        f_c = self._oracle_f_c(x)
        weights = oracles.channel_attention(f_c, self.accom.channel_att)
        modulated = f_c * weights[:, None, None]
        f_loc = oracles.spatial_attention(modulated, self.accom.local_sa) * f_c
        down = oracles.max_pool2(self.f_prev[0].numpy())
        f_pc = oracles.spatial_attention(down, self.accom.previous_sa) * f_c
        up = oracles.bilinear_resize(self.f_next[0].numpy(), 4, 4)
        f_sc = oracles.spatial_attention(up, self.accom.subsequent_sa) * f_c
        expected = x + f_loc + f_pc + f_sc

        np.testing.assert_allclose(actual, expected, rtol=1e-9, atol=1e-10)

    def test_gradcheck(self):
        """解析梯度与数值梯度一致"""
        inputs = tuple(t.clone().requires_grad_(True) for t in (self.f_cur, self.f_prev, self.f_next))
        self.assertTrue(torch.autograd.gradcheck(self.accom, inputs, eps=1e-6, atol=1e-6, rtol=1e-3))


if __name__ == "__main__":
    unittest.main()
