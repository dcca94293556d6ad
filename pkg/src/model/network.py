#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
ACCoNet 整体网络

编码器 -> 五个 ACCoM -> 五个 BAB 解码块 + 深监督头。
消融开关（use_accom / use_bab / local_branch / adjacent_branches / bab_mode）在构造时确定。
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import torch
import torch.nn as nn

from src.logger import get_logger
from src.model.accom import AccomConfig, AdjacentContextCoordination
from src.model.decoder import BAB_MODE_FULL, Decoder, DecoderState
from src.model.encoder import BackboneParams, VGG16Encoder, build_encoder
from src.model.layers import init_new_layers
from src.model.schedule import NUM_LEVELS, ShapeSchedule


@dataclass
class NetworkOutput:
    """一次前向的全部中间结果"""
    encoder_features: List[torch.Tensor]
    accom_features: List[torch.Tensor]
    decoder: DecoderState

    @property
    def saliency(self) -> List[torch.Tensor]:
        return self.decoder.saliency

    @property
    def final(self) -> torch.Tensor:
        return self.decoder.final


class ACCoNet(nn.Module):
    """
    相邻上下文协调网络

    Args:
        schedule: 特征形状约定
        backbone: 'vgg16-shaped' 或 'custom'
        custom_backbone: 自定义骨干工厂 'module:factory'
        use_accom: False 时编码特征直接送入解码器
        use_bab: False 时解码块只保留反卷积连接与级联卷积
        local_branch: ACCoM 是否包含局部分支
        adjacent_branches: ACCoM 是否包含相邻分支
        bab_mode: full | direct | normal-conv
        channel_reduction: 通道注意力降维比例
        spatial_kernel: 空间注意力卷积核尺寸
    """

    def __init__(self, schedule: Optional[ShapeSchedule] = None, backbone: str = 'vgg16-shaped',
                 custom_backbone: Optional[str] = None, use_accom: bool = True, use_bab: bool = True,
                 local_branch: bool = True, adjacent_branches: bool = True,
                 bab_mode: str = BAB_MODE_FULL, channel_reduction: int = 16, spatial_kernel: int = 7):
        super().__init__()
        self.schedule = schedule or ShapeSchedule.standard()
        self.flags = {
            'use_accom': use_accom,
            'use_bab': use_bab,
            'local_branch': local_branch,
            'adjacent_branches': adjacent_branches,
            'bab_mode': bab_mode,
        }

        self.encoder = build_encoder(backbone, self.schedule, custom_backbone)

        if use_accom:
            self.accoms = nn.ModuleList([
                AdjacentContextCoordination(AccomConfig(
                    level=t,
                    channels=self.schedule.channels_at(t),
                    reduction=channel_reduction,
                    spatial_kernel=spatial_kernel,
                    local_branch=local_branch,
                    adjacent_branches=adjacent_branches,
                ))
                for t in range(1, NUM_LEVELS + 1)
            ])
        else:
            self.accoms = None

        self.decoder = Decoder(self.schedule, mode=bab_mode, aggregate=use_bab)

        if self.accoms is not None:
            init_new_layers(self.accoms)
        init_new_layers(self.decoder)

    @classmethod
    def from_config(cls, model_config: Dict[str, Any], flags: Dict[str, Any]) -> 'ACCoNet':
        """
        由配置节构建网络

        Args:
            model_config: 配置中的 model 节
            flags: ConfigManager.model_flags 解析后的消融开关
        """
        schedule = ShapeSchedule.from_flag(model_config.get('micro', False))
        return cls(
            schedule=schedule,
            backbone=model_config.get('backbone', 'vgg16-shaped'),
            custom_backbone=model_config.get('custom_backbone'),
            channel_reduction=model_config.get('channel_reduction', 16),
            spatial_kernel=model_config.get('spatial_kernel', 7),
            **flags,
        )

    def load_backbone(self, params: BackboneParams) -> None:
        """向 VGG 结构编码器加载骨干参数"""
        if not isinstance(self.encoder, VGG16Encoder):
            raise TypeError("只有 vgg16-shaped 骨干支持加载 BackboneParams")
        self.encoder.load_params(params)
        get_logger().info(f"已加载骨干参数，来源: {params.provenance}")

    def coordinate(self, features: List[torch.Tensor]) -> List[torch.Tensor]:
        """对五级编码特征逐级执行 ACCoM；关闭 ACCoM 时原样返回"""
        if self.accoms is None:
            return list(features)
        outputs = []
        for t in range(1, NUM_LEVELS + 1):
            f_prev = features[t - 2] if t > 1 and self.flags['adjacent_branches'] else None
            f_next = features[t] if t < NUM_LEVELS and self.flags['adjacent_branches'] else None
            outputs.append(self.accoms[t - 1](features[t - 1], f_prev, f_next))
        return outputs

    def run(self, images: torch.Tensor) -> NetworkOutput:
        """前向并保留全部中间特征"""
        features = self.encoder(images)
        self.schedule.validate_features(features)
        accom_features = self.coordinate(features)
        state = self.decoder.decode(accom_features)
        return NetworkOutput(features, accom_features, state)

    def forward(self, images: torch.Tensor) -> List[torch.Tensor]:
        """返回按层级 1..5 排列的五个显著图，第一个为最终预测"""
        return self.run(images).saliency

    def count_parameters(self) -> Dict[str, int]:
        """各部分参数量"""
        counts = {
            'encoder': sum(p.numel() for p in self.encoder.parameters()),
            'accom': sum(p.numel() for p in self.accoms.parameters()) if self.accoms is not None else 0,
            'decoder': sum(p.numel() for p in self.decoder.parameters()),
        }
        counts['total'] = sum(counts.values())
        return counts
