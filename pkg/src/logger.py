#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
日志管理模块

提供统一的日志记录功能，支持日志分级、文件输出和控制台输出。
训练、推理与评估共用同一套日志格式。
"""

import os
import logging
import datetime
from typing import Optional, Dict, Any, Mapping
from logging.handlers import RotatingFileHandler


class Logger:
    """日志管理类，对 logging.Logger 做一层薄封装"""

    # 日志级别映射
    LEVELS = {
        'debug': logging.DEBUG,
        'info': logging.INFO,
        'warning': logging.WARNING,
        'error': logging.ERROR,
        'critical': logging.CRITICAL
    }

    FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    def __init__(self, name: str = 'orsi_sod', log_dir: str = None,
                 level: str = 'info', console_output: bool = True, file_output: bool = True,
                 max_bytes: int = 10485760, backup_count: int = 10):
        """
        初始化日志管理器

        Args:
            name: 日志名称
            log_dir: 日志文件目录，默认为项目根目录下的logs文件夹
            level: 日志级别，可选值为debug, info, warning, error, critical
            console_output: 是否输出到控制台
            file_output: 是否输出到文件
            max_bytes: 单个日志文件最大字节数，默认为10MB
            backup_count: 备份文件数量，默认为10个
        """
        self.name = name
        self.level = self.LEVELS.get(level.lower(), logging.INFO)

        if log_dir is None:
            project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
            self.log_dir = os.path.join(project_root, 'logs')
        else:
            self.log_dir = log_dir

        self.logger = logging.getLogger(name)
        self.logger.setLevel(self.level)
        self.logger.propagate = False

        # 重复创建时清理旧处理器，避免重复输出
        if self.logger.handlers:
            self.logger.handlers.clear()

        formatter = logging.Formatter(self.FORMAT)

        if console_output:
            console_handler = logging.StreamHandler()
            console_handler.setLevel(self.level)
            console_handler.setFormatter(formatter)
            self.logger.addHandler(console_handler)

        if file_output:
            os.makedirs(self.log_dir, exist_ok=True)
            today = datetime.datetime.now().strftime('%Y%m%d')
            log_file = os.path.join(self.log_dir, f"{name}_{today}.log")
            file_handler = RotatingFileHandler(
                log_file, maxBytes=max_bytes, backupCount=backup_count, encoding='utf-8')
            file_handler.setLevel(self.level)
            file_handler.setFormatter(formatter)
            self.logger.addHandler(file_handler)

    def get_logger(self) -> logging.Logger:
        """返回底层 logging.Logger 实例"""
        return self.logger

    def debug(self, message: str, *args, **kwargs) -> None:
        self.logger.debug(message, *args, **kwargs)

    def info(self, message: str, *args, **kwargs) -> None:
        self.logger.info(message, *args, **kwargs)

    def warning(self, message: str, *args, **kwargs) -> None:
        self.logger.warning(message, *args, **kwargs)

    def error(self, message: str, *args, **kwargs) -> None:
        self.logger.error(message, *args, **kwargs)

    def critical(self, message: str, *args, **kwargs) -> None:
        self.logger.critical(message, *args, **kwargs)

    def set_level(self, level: str) -> None:
        """
        设置日志级别

        Args:
            level: 日志级别，可选值为debug, info, warning, error, critical
        """
        if level.lower() in self.LEVELS:
            self.level = self.LEVELS[level.lower()]
            self.logger.setLevel(self.level)
            for handler in self.logger.handlers:
                handler.setLevel(self.level)

    def log_mapping(self, title: str, mapping: Mapping[str, Any], level: str = 'info') -> None:
        """
        逐行输出一个键值表（如评估指标、解析后的配置）

        Args:
            title: 标题
            mapping: 键值对
            level: 日志级别
        """
        log_fn = getattr(self.logger, level.lower(), self.logger.info)
        log_fn(title)
        for key, value in mapping.items():
            if isinstance(value, float):
                log_fn(f"  - {key}: {value:.6f}")
            else:
                log_fn(f"  - {key}: {value}")


# 单例模式
_instances: Dict[str, Logger] = {}


def get_logger(name: str = 'orsi_sod', log_dir: Optional[str] = None,
               level: Optional[str] = None, console_output: bool = True,
               file_output: bool = True) -> Logger:
    """
    获取Logger的单例实例

    同名 logger 只创建一次；再次请求且显式指定 level 时调整级别。

    Args:
        name: 日志名称
        log_dir: 日志文件目录
        level: 日志级别，首次创建时默认 info
        console_output: 是否输出到控制台
        file_output: 是否输出到文件

    Returns:
        Logger实例
    """
    if name not in _instances:
        _instances[name] = Logger(name, log_dir, level or 'info', console_output, file_output)
    elif level is not None and _instances[name].level != Logger.LEVELS.get(level.lower(), logging.INFO):
        _instances[name].set_level(level)
    return _instances[name]
