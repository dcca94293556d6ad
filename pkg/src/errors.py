#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
异常定义模块

显著性检测流程中各环节抛出的领域异常。
"""

from typing import Iterable, Optional


class OrsiSodError(Exception):
    """所有领域异常的基类"""


class ShapeMismatchError(OrsiSodError, ValueError):
    """张量形状与约定不符"""

    def __init__(self, what: str, dimension: str, expected, actual):
        self.what = what
        self.dimension = dimension
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what} 的维度 '{dimension}' 不匹配: 期望 {expected}, 实际 {actual}")


class DispatchError(OrsiSodError, ValueError):
    """分支/上游输入与层级不匹配（如 t=1 时提供了 previous 特征）"""


class BackboneWeightsError(OrsiSodError, ValueError):
    """预训练权重文件与骨干网络拓扑不一致"""

    def __init__(self, message: str, layers: Iterable[str]):
        self.layers = sorted(layers)
        super().__init__(f"{message}: {', '.join(self.layers)}")


class ConfigError(OrsiSodError, ValueError):
    """配置项非法"""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"配置项 '{key}' 非法: {message}")


class DatasetError(OrsiSodError, ValueError):
    """数据集结构或文件错误"""

    def __init__(self, message: str, paths: Optional[Iterable[str]] = None):
        self.paths = sorted(paths) if paths else []
        if self.paths:
            message = f"{message}: {', '.join(self.paths)}"
        super().__init__(message)


class CheckpointError(OrsiSodError, RuntimeError):
    """检查点缺失、版本不符或配置指纹不一致"""


class NonFiniteLossError(OrsiSodError, RuntimeError):
    """训练中出现 NaN/Inf 损失"""

    def __init__(self, iteration: int, value: float):
        self.iteration = iteration
        self.value = value
        super().__init__(f"第 {iteration} 次迭代损失非有限值: {value}")
