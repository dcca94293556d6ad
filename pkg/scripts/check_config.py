#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
配置文件检查脚本

校验实验配置，输出解析后的消融开关、配置指纹以及各部分参数量。
"""

import os
import sys
import argparse

# 添加项目根目录到Python路径
current_dir = os.path.dirname(os.path.abspath(__file__))
project_root = os.path.dirname(current_dir)
sys.path.append(project_root)

# 导入项目模块
from src.config_manager import get_config_manager
from src.logger import get_logger
from src.model.network import ACCoNet


def main():
    parser = argparse.ArgumentParser(description='检查实验配置文件')
    parser.add_argument('--config', type=str,
                        default=os.path.join(project_root, 'config', 'orsi_sod_config.yaml'),
                        help='配置文件路径')
    args = parser.parse_args()

    logger = get_logger('config_check', level='debug')
    logger.info(f"正在检查配置文件: {args.config}")

    try:
        config_manager = get_config_manager(args.config)

        logger.log_mapping("系统配置:", config_manager.get_section('system'))
        logger.log_mapping("消融开关:", config_manager.model_flags())
        logger.info(f"配置指纹: {config_manager.fingerprint()}")

        model = ACCoNet.from_config(config_manager.get_section('model'), config_manager.model_flags())
        logger.log_mapping("参数量:", model.count_parameters())

        logger.info("配置文件检查完成")
        return True

    except Exception as e:
        logger.error(f"检查配置文件时出错: {str(e)}", exc_info=True)
        return False


if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
