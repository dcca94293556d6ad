#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
训练断点管理模块

负责保存/加载带版本号的训练断点，跟踪运行状态，支持中断后续训；
同时提供骨干网络权重文件的读写。
"""

import os
import json
import uuid
import datetime
from typing import Any, Dict, List, Optional

import torch

from src.errors import CheckpointError

FORMAT_VERSION = 1
BACKBONE_FORMAT_VERSION = 1

LATEST_NAME = 'latest.pth'
STATUS_NAME = 'run_status.json'


def checkpoint_name(epoch: int) -> str:
    return f"checkpoint_epoch_{epoch:03d}.pth"


class CheckpointManager:
    """训练断点管理器"""

    def __init__(self, checkpoint_dir: str, logger=None):
        """
        初始化断点管理器

        Args:
            checkpoint_dir: 断点目录
            logger: 日志管理器实例
        """
        self.checkpoint_dir = checkpoint_dir
        self.logger = logger
        os.makedirs(self.checkpoint_dir, exist_ok=True)

        self.run_id = f"RUN_{uuid.uuid4().hex[:8]}_{datetime.datetime.now().strftime('%Y%m%d%H%M%S')}"
        self.status = "initialized"  # initialized, running, completed, failed
        self.completed_epochs: List[int] = []
        self.details = "初始化状态"

    @property
    def latest_path(self) -> str:
        return os.path.join(self.checkpoint_dir, LATEST_NAME)

    @property
    def status_path(self) -> str:
        return os.path.join(self.checkpoint_dir, STATUS_NAME)

    def save(self, model: torch.nn.Module, optimizer: Optional[torch.optim.Optimizer], epoch: int,
             iteration: int, config: Dict[str, Any], fingerprint: str) -> str:
        """
        保存一个 epoch 结束时的断点，同时覆盖 latest.pth

        Args:
            model: 网络
            optimizer: 优化器（推理用的断点可为 None）
            epoch: 已完成的 epoch 数
            iteration: 已完成的迭代数
            config: 完整配置
            fingerprint: 模型配置指纹

        Returns:
            断点文件路径
        """
        payload = {
            'format_version': FORMAT_VERSION,
            'model_state': model.state_dict(),
            'optimizer_state': optimizer.state_dict() if optimizer is not None else None,
            'epoch': epoch,
            'iteration': iteration,
            'config': config,
            'fingerprint': fingerprint,
        }
        path = os.path.join(self.checkpoint_dir, checkpoint_name(epoch))
        torch.save(payload, path)
        torch.save(payload, self.latest_path)

        if epoch not in self.completed_epochs:
            self.completed_epochs.append(epoch)
        self.update_status("running", f"epoch {epoch} 已保存")

        if self.logger:
            self.logger.info(f"断点已保存: {path} (epoch={epoch}, iteration={iteration})")
        return path

    def list_checkpoints(self) -> List[str]:
        """按 epoch 升序列出断点文件"""
        names = sorted(
            name for name in os.listdir(self.checkpoint_dir)
            if name.startswith('checkpoint_epoch_') and name.endswith('.pth')
        )
        return [os.path.join(self.checkpoint_dir, name) for name in names]

    def resume_from_last(self, fingerprint: Optional[str] = None) -> Optional[Dict[str, Any]]:
        """
        从最后一个断点恢复

        Returns:
            断点内容，没有可恢复的断点时返回 None
        """
        if not os.path.exists(self.latest_path):
            if self.logger:
                self.logger.info("没有找到可恢复的断点")
            return None

        checkpoint = load_checkpoint(self.latest_path, fingerprint)
        self._read_status()
        self.status = "running"
        self.details = f"从 epoch {checkpoint['epoch']} 恢复"
        self._save_status()

        if self.logger:
            self.logger.info(f"已恢复运行: {self.run_id}, epoch={checkpoint['epoch']}, "
                             f"iteration={checkpoint['iteration']}")
        return checkpoint

    def update_status(self, status: str, details: Optional[str] = None) -> None:
        self.status = status
        if details:
            self.details = details
        self._save_status()

    def complete_run(self) -> None:
        """完成整个训练"""
        self.update_status("completed", "全部 epoch 已完成")
        if self.logger:
            self.logger.info("训练已完成")

    def fail_run(self, error: str) -> None:
        """
        标记训练失败

        Args:
            error: 错误信息
        """
        self.update_status("failed", f"运行失败: {error}")
        if self.logger:
            self.logger.error(f"运行失败: {error}")

    def _read_status(self) -> None:
        if not os.path.exists(self.status_path):
            return
        try:
            with open(self.status_path, 'r', encoding='utf-8') as f:
                saved = json.load(f)
            self.run_id = saved.get('run_id', self.run_id)
            self.completed_epochs = list(saved.get('completed_epochs', []))
        except (OSError, ValueError) as e:
            if self.logger:
                self.logger.warning(f"读取运行状态失败，忽略: {str(e)}")

    def _save_status(self) -> None:
        """保存当前运行状态到状态文件"""
        status = {
            'run_id': self.run_id,
            'status': self.status,
            'completed_epochs': self.completed_epochs,
            'details': self.details,
        }
        try:
            with open(self.status_path, 'w', encoding='utf-8') as f:
                json.dump(status, f, ensure_ascii=False, indent=2)
            if self.logger:
                self.logger.debug(f"状态保存成功: {self.run_id}, 状态: {self.status}")
        except OSError as e:
            if self.logger:
                self.logger.error(f"保存状态失败: {str(e)}")


def load_checkpoint(path: str, fingerprint: Optional[str] = None,
                    map_location: str = 'cpu') -> Dict[str, Any]:
    """
    加载断点并校验版本与指纹

    Args:
        path: 断点文件路径
        fingerprint: 期望的配置指纹，None 表示不校验
        map_location: 张量加载位置

    Raises:
        CheckpointError: 文件不存在、版本不符或指纹不一致
    """
    if not os.path.exists(path):
        raise CheckpointError(f"断点文件不存在: {path}")
    try:
        checkpoint = torch.load(path, map_location=map_location, weights_only=False)
    except Exception as e:
        raise CheckpointError(f"无法读取断点文件 {path}: {e}") from e

    if not isinstance(checkpoint, dict) or checkpoint.get('format_version') != FORMAT_VERSION:
        version = checkpoint.get('format_version') if isinstance(checkpoint, dict) else None
        raise CheckpointError(f"断点格式版本不符: 期望 {FORMAT_VERSION}, 实际 {version} ({path})")
    if fingerprint is not None and checkpoint.get('fingerprint') != fingerprint:
        raise CheckpointError(
            f"断点与当前配置的指纹不一致: 断点 {checkpoint.get('fingerprint')}, 当前 {fingerprint}"
        )
    return checkpoint


def save_backbone_file(state: Dict[str, torch.Tensor], path: str) -> str:
    """
    保存骨干网络权重文件

    Args:
        state: 层名参数字典（conv1_1.weight 等）
        path: 输出路径
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    torch.save({'format_version': BACKBONE_FORMAT_VERSION,
                'layers': {key: tensor.detach().cpu() for key, tensor in state.items()}}, path)
    return path


def load_backbone_file(path: str) -> Dict[str, torch.Tensor]:
    """
    读取骨干网络权重文件

    支持本仓库的版本化格式 {'format_version', 'layers'}，也接受原始 state dict
    （例如 torchvision vgg16 的 features.N.weight）。

    Raises:
        CheckpointError: 文件不存在、无法读取或版本不符
    """
    if not os.path.exists(path):
        raise CheckpointError(f"骨干权重文件不存在: {path}")
    try:
        raw = torch.load(path, map_location='cpu', weights_only=False)
    except Exception as e:
        raise CheckpointError(f"无法读取骨干权重文件 {path}: {e}") from e

    if not isinstance(raw, dict):
        raise CheckpointError(f"骨干权重文件格式无法识别: {path}")
    if 'layers' in raw:
        if raw.get('format_version') != BACKBONE_FORMAT_VERSION:
            raise CheckpointError(
                f"骨干权重文件版本不符: 期望 {BACKBONE_FORMAT_VERSION}, 实际 {raw.get('format_version')}"
            )
        return dict(raw['layers'])
    return {key: value for key, value in raw.items() if isinstance(value, torch.Tensor)}

