#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
配置管理模块

负责读取和管理实验配置文件（YAML）。配置合并顺序为：
命令行覆盖 > 配置文件 > 文档化的默认值（DEFAULT_CONFIG）。
合并结果经 jsonschema 校验，未知键直接拒绝。
"""

import os
import copy
import json
import hashlib
from typing import Dict, Any, Optional, List, Tuple

import yaml
import jsonschema

from src.errors import ConfigError


# 文档化的默认配置，配置文件中缺失的键由此补齐
DEFAULT_CONFIG: Dict[str, Any] = {
    'system': {
        'seed': 42,                 # 全局随机种子（初始化、打乱顺序）
        'log_level': 'info',
        'device': 'cpu',            # cpu | cuda | cuda:N
        'deterministic': True,      # 启用 torch 确定性算法
    },
    'model': {
        'backbone': 'vgg16-shaped',         # vgg16-shaped | custom
        'custom_backbone': None,            # "package.module:factory"，backbone=custom 时必填
        'backbone_source': 'random',        # random | he | 预训练权重文件路径
        'backbone_init_std': 0.01,          # 随机初始化时卷积权重的标准差
        'micro': False,                     # 微型通道/尺寸配置，用于梯度检查与CI
        'ablation': 'full',                 # 消融预设，见 ABLATION_PRESETS
        'use_accom': True,
        'use_bab': True,
        'local_branch': True,
        'adjacent_branches': True,
        'bab_mode': 'full',                 # full | direct | normal-conv
        'channel_reduction': 16,            # 通道注意力降维比例
        'spatial_kernel': 7,                # 空间注意力卷积核尺寸
    },
    'data': {
        'root': None,
        'train_split': 'train',
        'test_split': 'test',
        'normalize_mean': [0.485, 0.456, 0.406],
        'normalize_std': [0.229, 0.224, 0.225],
        'augment': True,
        'num_workers': 0,
    },
    'train': {
        'lr': 1.0e-4,
        'lr_decay_epoch': 30,
        'lr_decay_factor': 10.0,
        'batch_size': 6,
        'epochs': 39,
        'betas': [0.9, 0.999],
        'adam_eps': 1.0e-8,
        'weight_decay': 0.0,
        'grad_clip': 0.0,           # 0 表示不裁剪
        'loss_mode': 'both',        # both | bce | iou
        'max_iterations': 0,        # 0 表示不限制
        'log_interval': 10,
        'checkpoint_interval': 1,   # 每隔多少个 epoch 保存断点，最后一个 epoch 总是保存
    },
    'infer': {
        'restore_size': True,       # 输出前还原到原图尺寸
    },
    'eval': {
        'thresholds': 256,
        'beta2': 0.3,
        'alpha': 0.5,
        'normalize_predictions': True,
    },
    'output': {
        'dir': 'outputs',
    },
}


# 消融预设：名称 -> 模型开关
ABLATION_PRESETS: Dict[str, Dict[str, Any]] = {
    'full': {'use_accom': True, 'use_bab': True, 'local_branch': True,
             'adjacent_branches': True, 'bab_mode': 'full'},
    'baseline': {'use_accom': False, 'use_bab': False, 'local_branch': True,
                 'adjacent_branches': True, 'bab_mode': 'full'},
    'baseline+accom': {'use_accom': True, 'use_bab': False, 'local_branch': True,
                       'adjacent_branches': True, 'bab_mode': 'full'},
    'baseline+bab': {'use_accom': False, 'use_bab': True, 'local_branch': True,
                     'adjacent_branches': True, 'bab_mode': 'full'},
    'wo_lb': {'use_accom': True, 'use_bab': True, 'local_branch': False,
              'adjacent_branches': True, 'bab_mode': 'full'},
    'wo_ab': {'use_accom': True, 'use_bab': True, 'local_branch': True,
              'adjacent_branches': False, 'bab_mode': 'full'},
    'w_dc': {'use_accom': True, 'use_bab': True, 'local_branch': True,
             'adjacent_branches': True, 'bab_mode': 'direct'},
    'w_nc': {'use_accom': True, 'use_bab': True, 'local_branch': True,
             'adjacent_branches': True, 'bab_mode': 'normal-conv'},
}

# 论文表格中的写法
ABLATION_ALIASES: Dict[str, str] = {
    'Ours': 'full',
    'Baseline': 'baseline',
    '+ACCoM': 'baseline+accom',
    'Baseline+ACCoM': 'baseline+accom',
    '+BAB': 'baseline+bab',
    'Baseline+BAB': 'baseline+bab',
    'w/o LB': 'wo_lb',
    'w/o AB': 'wo_ab',
    'w/ DC': 'w_dc',
    'w/ NC': 'w_nc',
}

MODEL_FLAG_KEYS = ('use_accom', 'use_bab', 'local_branch', 'adjacent_branches', 'bab_mode')


def resolve_ablation(name: str) -> str:
    """把别名规范化为预设名称，未知名称抛出 ConfigError"""
    canonical = ABLATION_ALIASES.get(name, name)
    if canonical not in ABLATION_PRESETS:
        raise ConfigError('model.ablation',
                          f"未知的消融变体 '{name}'，可选: {', '.join(ABLATION_PRESETS)}")
    return canonical


def _section(properties: Dict[str, Any]) -> Dict[str, Any]:
    return {'type': 'object', 'additionalProperties': False, 'properties': properties}


_NUMBER = {'type': 'number'}
_POSITIVE = {'type': 'number', 'exclusiveMinimum': 0}
_POSITIVE_INT = {'type': 'integer', 'minimum': 1}
_NON_NEGATIVE_INT = {'type': 'integer', 'minimum': 0}
_TRIPLE = {'type': 'array', 'items': _NUMBER, 'minItems': 3, 'maxItems': 3}

CONFIG_SCHEMA: Dict[str, Any] = {
    'type': 'object',
    'additionalProperties': False,
    'properties': {
        'system': _section({
            'seed': _NON_NEGATIVE_INT,
            'log_level': {'enum': ['debug', 'info', 'warning', 'error', 'critical']},
            'device': {'type': 'string'},
            'deterministic': {'type': 'boolean'},
        }),
        'model': _section({
            'backbone': {'enum': ['vgg16-shaped', 'custom']},
            'custom_backbone': {'type': ['string', 'null']},
            'backbone_source': {'type': 'string', 'minLength': 1},
            'backbone_init_std': _POSITIVE,
            'micro': {'type': 'boolean'},
            'ablation': {'enum': list(ABLATION_PRESETS)},
            'use_accom': {'type': 'boolean'},
            'use_bab': {'type': 'boolean'},
            'local_branch': {'type': 'boolean'},
            'adjacent_branches': {'type': 'boolean'},
            'bab_mode': {'enum': ['full', 'direct', 'normal-conv']},
            'channel_reduction': _POSITIVE_INT,
            'spatial_kernel': {'type': 'integer', 'minimum': 1},
        }),
        'data': _section({
            'root': {'type': ['string', 'null']},
            'train_split': {'type': 'string'},
            'test_split': {'type': 'string'},
            'normalize_mean': _TRIPLE,
            'normalize_std': {'type': 'array', 'items': _POSITIVE, 'minItems': 3, 'maxItems': 3},
            'augment': {'type': 'boolean'},
            'num_workers': _NON_NEGATIVE_INT,
        }),
        'train': _section({
            'lr': _POSITIVE,
            'lr_decay_epoch': _NON_NEGATIVE_INT,
            'lr_decay_factor': _POSITIVE,
            'batch_size': _POSITIVE_INT,
            'epochs': _POSITIVE_INT,
            'betas': {'type': 'array', 'items': {'type': 'number', 'minimum': 0, 'exclusiveMaximum': 1},
                      'minItems': 2, 'maxItems': 2},
            'adam_eps': _POSITIVE,
            'weight_decay': {'type': 'number', 'minimum': 0},
            'grad_clip': {'type': 'number', 'minimum': 0},
            'loss_mode': {'enum': ['both', 'bce', 'iou']},
            'max_iterations': _NON_NEGATIVE_INT,
            'log_interval': _POSITIVE_INT,
            'checkpoint_interval': _POSITIVE_INT,
        }),
        'infer': _section({
            'restore_size': {'type': 'boolean'},
        }),
        'eval': _section({
            'thresholds': {'type': 'integer', 'minimum': 2},
            'beta2': _POSITIVE,
            'alpha': {'type': 'number', 'minimum': 0, 'maximum': 1},
            'normalize_predictions': {'type': 'boolean'},
        }),
        'output': _section({
            'dir': {'type': 'string', 'minLength': 1},
        }),
    },
}


def _deep_update(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    """递归合并字典，update 中的值覆盖 base"""
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


class ConfigManager:
    """配置管理类，负责读取、校验并解析实验配置"""

    def __init__(self, config_path: Optional[str] = None,
                 overrides: Optional[Dict[str, Any]] = None):
        """
        初始化配置管理器

        Args:
            config_path: 实验配置文件路径；为 None 时只使用默认配置
            overrides: 命令行覆盖项，键为点分路径（如 'train.lr'）
        """
        self.config_path = config_path
        self._config = copy.deepcopy(DEFAULT_CONFIG)

        if config_path is not None:
            self._config = _deep_update(self._config, self.read_config_file(config_path))

        if overrides:
            self.apply_overrides(overrides)
        else:
            self.validate()

    @staticmethod
    def read_config_file(config_path: str) -> Dict[str, Any]:
        """
        读取 YAML 配置文件

        Args:
            config_path: 配置文件路径

        Returns:
            文件中的配置字典（可能不完整）
        """
        if not os.path.exists(config_path):
            raise FileNotFoundError(f"配置文件不存在: {config_path}")

        with open(config_path, 'r', encoding='utf-8') as f:
            try:
                data = yaml.safe_load(f)
            except yaml.YAMLError as e:
                raise ConfigError('<file>', f"YAML 解析失败: {e}") from e

        if data is None:
            return {}
        if not isinstance(data, dict):
            raise ConfigError('<root>', "配置文件顶层必须是键值映射")
        return data

    def validate(self) -> None:
        """用 jsonschema 校验当前配置，失败时抛出 ConfigError 并指明键名"""
        if isinstance(self._config.get('model', {}).get('ablation'), str):
            self._config['model']['ablation'] = resolve_ablation(self._config['model']['ablation'])

        validator = jsonschema.Draft7Validator(CONFIG_SCHEMA)
        errors = sorted(validator.iter_errors(self._config), key=lambda e: list(e.absolute_path))
        if not errors:
            if self._config['model']['backbone'] == 'custom' and not self._config['model']['custom_backbone']:
                raise ConfigError('model.custom_backbone', "backbone=custom 时必须指定工厂函数")
            return

        error = errors[0]
        path = '.'.join(str(p) for p in error.absolute_path)
        if error.validator == 'additionalProperties':
            allowed = set(error.schema.get('properties', {}))
            unknown = sorted(set(error.instance) - allowed)
            prefix = f"{path}." if path else ''
            raise ConfigError(f"{prefix}{unknown[0]}", "未知配置项")
        raise ConfigError(path or '<root>', error.message)

    def apply_overrides(self, overrides: Dict[str, Any]) -> None:
        """
        应用命令行覆盖项并重新校验

        Args:
            overrides: 点分路径 -> 值；值为 None 的项被忽略
        """
        for dotted_key, value in overrides.items():
            if value is None:
                continue
            parts = dotted_key.split('.')
            node = self._config
            for part in parts[:-1]:
                if part not in node or not isinstance(node[part], dict):
                    raise ConfigError(dotted_key, "未知配置项")
                node = node[part]
            if parts[-1] not in node:
                raise ConfigError(dotted_key, "未知配置项")
            node[parts[-1]] = value
        self.validate()

    @property
    def config(self) -> Dict[str, Any]:
        """返回合并后配置的副本"""
        return copy.deepcopy(self._config)

    def get_section(self, name: str) -> Dict[str, Any]:
        """
        获取指定配置节

        Args:
            name: 配置节名称，如 'model', 'train'

        Returns:
            配置节字典副本
        """
        if name not in self._config:
            raise ConfigError(name, "未知配置节")
        return copy.deepcopy(self._config[name])

    def get(self, dotted_key: str) -> Any:
        """按点分路径读取单个配置值"""
        node: Any = self._config
        for part in dotted_key.split('.'):
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(dotted_key, "未知配置项")
            node = node[part]
        return copy.deepcopy(node)

    def model_flags(self) -> Dict[str, Any]:
        """
        解析模型开关

        ablation 为 full 时使用配置中的显式开关；否则由消融预设决定。
        """
        model = self._config['model']
        if model['ablation'] == 'full':
            return {key: model[key] for key in MODEL_FLAG_KEYS}
        return dict(ABLATION_PRESETS[model['ablation']])

    def fingerprint(self) -> str:
        """
        计算配置指纹

        仅包含决定网络结构与输入约定的配置项，检查点与推理配置据此比对。
        """
        model = self._config['model']
        payload = {
            'backbone': model['backbone'],
            'custom_backbone': model['custom_backbone'],
            'micro': model['micro'],
            'channel_reduction': model['channel_reduction'],
            'spatial_kernel': model['spatial_kernel'],
            'flags': self.model_flags(),
            'normalize_mean': [float(v) for v in self._config['data']['normalize_mean']],
            'normalize_std': [float(v) for v in self._config['data']['normalize_std']],
        }
        encoded = json.dumps(payload, sort_keys=True).encode('utf-8')
        return hashlib.sha256(encoded).hexdigest()

    def parameter_rows(self) -> List[Tuple[str, str]]:
        """展开为 (点分键, 值) 行，供 --dry-run 输出参数表"""
        rows: List[Tuple[str, str]] = []

        def walk(prefix: str, node: Any) -> None:
            if isinstance(node, dict):
                for key in node:
                    walk(f"{prefix}.{key}" if prefix else key, node[key])
            else:
                rows.append((prefix, str(node)))

        walk('', self._config)
        rows.append(('resolved.model_flags', json.dumps(self.model_flags(), sort_keys=True)))
        rows.append(('resolved.fingerprint', self.fingerprint()))
        return rows

    def save_config(self, file_path: str) -> str:
        """
        保存合并后的配置到 YAML 文件

        Args:
            file_path: 目标文件路径

        Returns:
            写入的文件路径
        """
        directory = os.path.dirname(file_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(file_path, 'w', encoding='utf-8') as f:
            yaml.safe_dump(self._config, f, default_flow_style=False, allow_unicode=True, sort_keys=False)
        return file_path

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> 'ConfigManager':
        """从（检查点中保存的）配置字典重建配置管理器"""
        manager = cls()
        manager._config = _deep_update(copy.deepcopy(DEFAULT_CONFIG), copy.deepcopy(config))
        manager.validate()
        return manager


# 单例模式
_instance: Optional[ConfigManager] = None


def get_config_manager(config_path: Optional[str] = None,
                       overrides: Optional[Dict[str, Any]] = None) -> ConfigManager:
    """
    获取ConfigManager的单例实例

    传入 config_path 或 overrides 时重新构建实例。

    Args:
        config_path: 配置文件路径
        overrides: 命令行覆盖项

    Returns:
        ConfigManager实例
    """
    global _instance
    if _instance is None or config_path is not None or overrides:
        _instance = ConfigManager(config_path, overrides)
    return _instance
