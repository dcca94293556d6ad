#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
训练与推理模块

按实验配置构建网络，执行 Adam 优化循环（每批一步，学习率在第 30 个 epoch 后除以 10），
逐迭代写训练日志，每个 epoch 保存断点，支持续训；推理时输出 8 位显著图。
"""

import os
import random
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import cv2
import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from src.checkpoint_manager import CheckpointManager, load_checkpoint
from src.config_manager import ConfigManager
from src.data.dataset import (SaliencyDataset, list_inference_images, load_inference_batch,
                              make_loader, scan_split)
from src.errors import CheckpointError, DatasetError, NonFiniteLossError
from src.logger import get_logger
from src.loss import HybridLoss, LossBreakdown
from src.model.encoder import VGG16Encoder, init_backbone
from src.model.network import ACCoNet

TRAIN_LOG_NAME = 'train_log.csv'
TRAIN_LOG_COLUMNS = (['iteration', 'epoch', 'lr']
                     + [f"bce_{t}" for t in range(1, 6)]
                     + [f"iou_{t}" for t in range(1, 6)]
                     + ['total'])


def lr_at(epoch: int, lr: float = 1e-4, decay_epoch: int = 30, decay_factor: float = 10.0) -> float:
    """epoch < decay_epoch 时为 lr，之后为 lr / decay_factor"""
    if epoch < 0:
        raise ValueError(f"epoch 不能为负数: {epoch}")
    return lr if epoch < decay_epoch else lr / decay_factor


def set_seed(seed: int, deterministic: bool = True) -> None:
    """设置全部随机源"""
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)
        if torch.backends.cudnn.is_available():
            torch.backends.cudnn.benchmark = False
            torch.backends.cudnn.deterministic = True


def build_model(manager: ConfigManager) -> ACCoNet:
    """
    按配置构建网络并初始化骨干参数

    Args:
        manager: 配置管理器

    Returns:
        ACCoNet
    """
    model_config = manager.get_section('model')
    model = ACCoNet.from_config(model_config, manager.model_flags())
    if isinstance(model.encoder, VGG16Encoder):
        params = init_backbone(model_config['backbone_source'], model.schedule,
                               seed=manager.get('system.seed'), std=model_config['backbone_init_std'])
        model.load_backbone(params)
    return model


@dataclass
class GradientReport:
    """一次反向传播后各参数是否收到梯度"""
    received: List[str] = field(default_factory=list)
    missing: List[str] = field(default_factory=list)

    def modules_with_gradients(self) -> List[str]:
        """收到梯度的顶层子模块名称"""
        return sorted({name.split('.', 1)[0] for name in self.received})


def gradient_report(model: torch.nn.Module) -> GradientReport:
    report = GradientReport()
    for name, param in model.named_parameters():
        if param.grad is not None:
            report.received.append(name)
        else:
            report.missing.append(name)
    return report


@dataclass
class TrainResult:
    """训练结果"""
    checkpoint_path: Optional[str]
    epochs_completed: int
    iterations: int
    losses: List[float] = field(default_factory=list)


class Trainer:
    """训练器"""

    def __init__(self, manager: ConfigManager, out_dir: Optional[str] = None):
        """
        初始化训练器

        Args:
            manager: 配置管理器
            out_dir: 输出目录，默认取配置 output.dir
        """
        self.manager = manager
        self.system = manager.get_section('system')
        self.train_config = manager.get_section('train')
        self.data_config = manager.get_section('data')
        self.out_dir = out_dir or manager.get('output.dir')
        self.logger = get_logger()

        set_seed(self.system['seed'], self.system['deterministic'])
        self.device = torch.device(self.system['device'])
        self.fingerprint = manager.fingerprint()

        self.model = build_model(manager).to(self.device)
        self.optimizer = torch.optim.Adam(
            self.model.parameters(),
            lr=self.train_config['lr'],
            betas=tuple(self.train_config['betas']),
            eps=self.train_config['adam_eps'],
            weight_decay=self.train_config['weight_decay'],
        )
        self.criterion = HybridLoss(self.train_config['loss_mode'])

        os.makedirs(self.out_dir, exist_ok=True)
        self.checkpoints = CheckpointManager(os.path.join(self.out_dir, 'checkpoints'), self.logger)
        self.log_path = os.path.join(self.out_dir, TRAIN_LOG_NAME)

        self.epoch = 0
        self.iteration = 0

    @property
    def input_size(self) -> int:
        return self.model.schedule.input_size

    def lr_at(self, epoch: int) -> float:
        return lr_at(epoch, self.train_config['lr'], self.train_config['lr_decay_epoch'],
                     self.train_config['lr_decay_factor'])

    def set_lr(self, epoch: int) -> float:
        lr = self.lr_at(epoch)
        for group in self.optimizer.param_groups:
            group['lr'] = lr
        return lr

    def train_step(self, images: torch.Tensor, masks: torch.Tensor) -> Tuple[LossBreakdown, GradientReport]:
        """
        执行一次优化步

        Args:
            images: (B, 3, S, S) 图像批次
            masks: (B, 1, S, S) 二值掩码

        Returns:
            (各项损失, 梯度记录)

        Raises:
            NonFiniteLossError: 损失为 NaN/Inf
        """
        self.model.train()
        images = images.to(self.device)
        masks = masks.to(self.device)

        self.optimizer.zero_grad(set_to_none=True)
        breakdown = self.criterion(self.model(images), masks)
        if not torch.isfinite(breakdown.total):
            raise NonFiniteLossError(self.iteration, float(breakdown.total.detach()))

        breakdown.total.backward()
        report = gradient_report(self.model)
        if self.train_config['grad_clip'] > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.train_config['grad_clip'])
        self.optimizer.step()
        return breakdown, report

    def _append_log(self, epoch: int, lr: float, breakdown: LossBreakdown) -> None:
        row = {'iteration': self.iteration, 'epoch': epoch, 'lr': lr}
        row.update(breakdown.as_floats())
        frame = pd.DataFrame([row], columns=TRAIN_LOG_COLUMNS)
        frame.to_csv(self.log_path, mode='a', header=not os.path.exists(self.log_path), index=False)

    def resume(self) -> bool:
        """从最后一个断点恢复模型、优化器与计数器"""
        checkpoint = self.checkpoints.resume_from_last(self.fingerprint)
        if checkpoint is None:
            return False
        self.model.load_state_dict(checkpoint['model_state'])
        if checkpoint['optimizer_state'] is not None:
            self.optimizer.load_state_dict(checkpoint['optimizer_state'])
        self.epoch = checkpoint['epoch']
        self.iteration = checkpoint['iteration']
        return True

    def build_dataset(self, dataset_root: Optional[str] = None) -> SaliencyDataset:
        root = dataset_root or self.data_config['root']
        if not root:
            raise DatasetError("未指定数据集根目录（--data-root 或 data.root）")
        pairs = scan_split(root, self.data_config['train_split'])
        if not pairs:
            raise DatasetError(f"训练集为空: {os.path.join(root, self.data_config['train_split'])}", [root])
        dataset = SaliencyDataset(pairs, self.input_size, self.data_config['normalize_mean'],
                                  self.data_config['normalize_std'], self.data_config['augment'])
        self.logger.info(f"训练样本 {len(pairs)} 对，增强后 {len(dataset)} 对")
        return dataset

    def train(self, dataset_root: Optional[str] = None, dataset: Optional[torch.utils.data.Dataset] = None,
              resume: bool = False) -> TrainResult:
        """
        执行训练循环

        Args:
            dataset_root: 数据集根目录（dataset 为 None 时使用）
            dataset: 直接提供的数据集
            resume: 是否从最后一个断点续训

        Returns:
            TrainResult
        """
        if dataset is None:
            dataset = self.build_dataset(dataset_root)
        if resume and self.resume():
            self.logger.info(f"从 epoch {self.epoch} 继续训练")
        self.manager.save_config(os.path.join(self.out_dir, 'config.yaml'))

        epochs = self.train_config['epochs']
        max_iterations = self.train_config['max_iterations']
        log_interval = self.train_config['log_interval']
        checkpoint_interval = self.train_config['checkpoint_interval']
        losses: List[float] = []
        checkpoint_path = None
        stop = False

        self.checkpoints.update_status("running", f"开始训练，共 {epochs} 个 epoch")
        try:
            for epoch in range(self.epoch, epochs):
                lr = self.set_lr(epoch)
                loader = make_loader(dataset, self.train_config['batch_size'], self.system['seed'], epoch,
                                     num_workers=self.data_config['num_workers'])
                progress = tqdm(loader, desc=f"epoch {epoch + 1}/{epochs}", leave=False)
                for images, masks in progress:
                    self.iteration += 1
                    breakdown, _ = self.train_step(images, masks)
                    total = float(breakdown.total.detach())
                    losses.append(total)
                    self._append_log(epoch, lr, breakdown)
                    progress.set_postfix(loss=f"{total:.4f}")
                    if self.iteration % log_interval == 0:
                        self.logger.debug(f"iteration {self.iteration}: loss={total:.6f}, lr={lr:g}")
                    if max_iterations and self.iteration >= max_iterations:
                        stop = True
                        break

                self.epoch = epoch + 1
                if stop or self.epoch == epochs or self.epoch % checkpoint_interval == 0:
                    checkpoint_path = self.checkpoints.save(self.model, self.optimizer, self.epoch,
                                                            self.iteration, self.manager.config, self.fingerprint)
                self.logger.info(f"epoch {self.epoch} 完成, iteration={self.iteration}, lr={lr:g}")
                if stop:
                    self.logger.info(f"达到最大迭代数 {max_iterations}，停止训练")
                    break
        except NonFiniteLossError as e:
            self.checkpoints.fail_run(str(e))
            raise

        self.checkpoints.complete_run()
        return TrainResult(checkpoint_path, self.epoch, self.iteration, losses)


def load_model_from_checkpoint(checkpoint_path: str, fingerprint: Optional[str] = None,
                               device: str = 'cpu') -> Tuple[ACCoNet, ConfigManager, Dict[str, Any]]:
    """
    从断点重建网络

    Raises:
        CheckpointError: 文件不存在、版本不符或指纹不一致
    """
    checkpoint = load_checkpoint(checkpoint_path, fingerprint, map_location=device)
    manager = ConfigManager.from_dict(checkpoint['config'])
    if manager.fingerprint() != checkpoint['fingerprint']:
        raise CheckpointError(f"断点中的配置与其指纹不一致: {checkpoint_path}")
    model = ACCoNet.from_config(manager.get_section('model'), manager.model_flags())
    model.load_state_dict(checkpoint['model_state'])
    model.to(device).eval()
    return model, manager, checkpoint


def quantize(saliency: np.ndarray) -> np.ndarray:
    """[0,1] 显著图 -> round(255·S) 的 uint8"""
    return np.clip(np.round(saliency * 255.0), 0, 255).astype(np.uint8)


def infer(checkpoint_path: str, image_dir: str, out_dir: str, fingerprint: Optional[str] = None,
          restore_size: bool = True, batch_size: int = 1, device: str = 'cpu') -> List[str]:
    """
    用断点对目录中的图像推理，输出 S^1 为 8 位单通道 PNG（同名）

    Args:
        checkpoint_path: 断点路径
        image_dir: 输入图像目录
        out_dir: 输出目录
        fingerprint: 当前配置指纹，None 表示不比对
        restore_size: 是否还原到原图尺寸
        batch_size: 推理批大小
        device: 设备

    Returns:
        输出文件路径列表
    """
    logger = get_logger()
    model, manager, _ = load_model_from_checkpoint(checkpoint_path, fingerprint, device)
    data_config = manager.get_section('data')
    size = model.schedule.input_size

    images = list_inference_images(image_dir)
    os.makedirs(out_dir, exist_ok=True)
    outputs: List[str] = []

    with torch.no_grad():
        for start in tqdm(range(0, len(images), batch_size), desc='推理', leave=False):
            chunk = images[start:start + batch_size]
            batch = load_inference_batch(chunk, size, data_config['normalize_mean'],
                                         data_config['normalize_std']).to(device)
            final = model(batch)[0][:, 0].cpu().numpy()
            for item, saliency in zip(chunk, final):
                if restore_size and tuple(saliency.shape) != item.original_size:
                    height, width = item.original_size
                    saliency = cv2.resize(saliency, (width, height), interpolation=cv2.INTER_LINEAR)
                path = os.path.join(out_dir, f"{item.name}.png")
                cv2.imwrite(path, quantize(saliency))
                outputs.append(path)

    logger.info(f"推理完成: {len(outputs)} 张显著图已写入 {out_dir}")
    return outputs
