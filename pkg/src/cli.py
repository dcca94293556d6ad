#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
命令行入口

子命令:
    train    训练（--dry-run 只校验配置并打印解析后的参数表）
    infer    用断点对图像目录推理，输出 8 位显著图
    eval     评估预测目录，输出指标报告与 PR 曲线
    plot-pr  叠加绘制多条 PR 曲线

配置优先级: 命令行参数 > 配置文件 > 默认值。
"""

import os
import argparse
from typing import Any, Dict, List, Optional

from rich.console import Console
from rich.table import Table

from src.config_manager import ConfigManager
from src.errors import CheckpointError, ConfigError, DatasetError, OrsiSodError
from src.logger import get_logger

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INTERRUPTED = 130


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', type=str, help='实验配置文件路径（YAML）')
    parser.add_argument('--out', type=str, help='输出目录')
    parser.add_argument('--seed', type=int, help='随机种子')
    parser.add_argument('--micro', action='store_true', help='使用微型形状约定（通道 8..64，输入 64x64）')
    parser.add_argument('--ablation', type=str,
                        help='消融变体: full, baseline, baseline+accom, baseline+bab, wo_lb, wo_ab, w_dc, w_nc')
    parser.add_argument('--backbone', type=str, choices=['vgg16-shaped', 'custom'], help='骨干网络')
    parser.add_argument('--custom-backbone', type=str, help="自定义骨干工厂 'module:factory'")
    parser.add_argument('--log-level', type=str, choices=['debug', 'info', 'warning', 'error', 'critical'],
                        help='日志级别')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='orsi_sod', description='光学遥感图像显著性检测（ACCoNet）')
    subparsers = parser.add_subparsers(dest='command', required=True)

    train = subparsers.add_parser('train', help='训练网络')
    _add_common(train)
    train.add_argument('--data-root', type=str, help='数据集根目录')
    train.add_argument('--epochs', type=int, help='训练轮数')
    train.add_argument('--batch-size', type=int, help='批大小')
    train.add_argument('--lr', type=float, help='初始学习率')
    train.add_argument('--loss-mode', type=str, choices=['both', 'bce', 'iou'], help='损失模式')
    train.add_argument('--backbone-source', type=str, help="骨干参数来源: 'random' 或权重文件路径")
    train.add_argument('--max-iterations', type=int, help='最大迭代数（0 表示不限制）')
    train.add_argument('--resume', action='store_true', help='从最后一个断点续训')
    train.add_argument('--dry-run', action='store_true', help='只校验配置并打印参数表')

    infer = subparsers.add_parser('infer', help='推理')
    _add_common(infer)
    infer.add_argument('--checkpoint', type=str, required=True, help='断点文件路径')
    infer.add_argument('--images', type=str, required=True, help='输入图像目录')
    infer.add_argument('--no-restore-size', action='store_true', help='输出保持网络输入尺寸')

    evaluate = subparsers.add_parser('eval', help='评估')
    evaluate.add_argument('--config', type=str, help='实验配置文件路径（YAML）')
    evaluate.add_argument('--pred', type=str, required=True, help='预测图目录')
    evaluate.add_argument('--gt', type=str, required=True, help='真值目录')
    evaluate.add_argument('--out', type=str, help='报告输出目录')
    evaluate.add_argument('--log-level', type=str, choices=['debug', 'info', 'warning', 'error', 'critical'],
                          help='日志级别')

    plot = subparsers.add_parser('plot-pr', help='绘制 PR 曲线')
    plot.add_argument('--curves', type=str, nargs='+', required=True, help='PR 曲线 CSV 文件')
    plot.add_argument('--labels', type=str, nargs='+', help='曲线图例')
    plot.add_argument('--out', type=str, required=True, help='输出目录')
    plot.add_argument('--log-level', type=str, choices=['debug', 'info', 'warning', 'error', 'critical'],
                      help='日志级别')
    return parser


def collect_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """命令行参数 -> 点分配置覆盖项（未给出的参数为 None，不覆盖）"""
    mapping = {
        'system.seed': 'seed',
        'system.log_level': 'log_level',
        'output.dir': 'out',
        'model.ablation': 'ablation',
        'model.backbone': 'backbone',
        'model.custom_backbone': 'custom_backbone',
        'model.backbone_source': 'backbone_source',
        'data.root': 'data_root',
        'train.epochs': 'epochs',
        'train.batch_size': 'batch_size',
        'train.lr': 'lr',
        'train.loss_mode': 'loss_mode',
        'train.max_iterations': 'max_iterations',
    }
    overrides = {key: getattr(args, attr, None) for key, attr in mapping.items()}
    if getattr(args, 'micro', False):
        overrides['model.micro'] = True
    return overrides


def print_parameter_table(manager: ConfigManager, console: Optional[Console] = None) -> None:
    """用 rich 表格打印解析后的全部参数"""
    console = console or Console()
    table = Table(title='解析后的实验参数')
    table.add_column('参数', style='cyan')
    table.add_column('值', style='green')
    for key, value in manager.parameter_rows():
        table.add_row(key, value)
    console.print(table)


def _train(args: argparse.Namespace, manager: ConfigManager, logger) -> int:
    if args.dry_run:
        print_parameter_table(manager)
        logger.info("配置校验通过（dry-run，未训练）")
        return EXIT_OK

    from src.trainer import Trainer
    trainer = Trainer(manager)
    try:
        result = trainer.train(resume=args.resume)
    except KeyboardInterrupt:
        trainer.checkpoints.update_status("paused", "用户中断")
        logger.warning("训练被中断，可使用 --resume 从最后一个断点继续")
        return EXIT_INTERRUPTED
    logger.info(f"训练完成: {result.epochs_completed} 个 epoch, {result.iterations} 次迭代, "
                f"断点 {result.checkpoint_path}")
    return EXIT_OK


def _infer(args: argparse.Namespace, manager: ConfigManager, logger) -> int:
    from src.trainer import infer
    out_dir = args.out or os.path.join(manager.get('output.dir'), 'predictions')
    restore = manager.get('infer.restore_size') and not args.no_restore_size
    outputs = infer(args.checkpoint, args.images, out_dir, fingerprint=manager.fingerprint(),
                    restore_size=restore, device=manager.get('system.device'))
    logger.info(f"共输出 {len(outputs)} 张显著图")
    return EXIT_OK


def _eval(args: argparse.Namespace, manager: ConfigManager, logger) -> int:
    from src.evaluation.evaluator import evaluate_dataset, report_meta, write_report
    eval_config = manager.get_section('eval')
    out_dir = args.out or os.path.join(manager.get('output.dir'), 'eval')
    report = evaluate_dataset(args.pred, args.gt, eval_config['thresholds'], eval_config['beta2'],
                              eval_config['alpha'], eval_config['normalize_predictions'])
    meta = report_meta(eval_config['thresholds'], eval_config['beta2'], eval_config['alpha'],
                       eval_config['normalize_predictions'])
    write_report(report, out_dir, meta)
    logger.log_mapping("评估指标:", report.scalars())
    return EXIT_OK


def _plot_pr(args: argparse.Namespace, logger) -> int:
    from src.evaluation.evaluator import plot_pr_curves
    image_path, merged_path = plot_pr_curves(args.curves, args.labels, args.out)
    logger.info(f"PR 曲线: {image_path}, 数据: {merged_path}")
    return EXIT_OK


def run(argv: Optional[List[str]] = None) -> int:
    """
    执行一条命令

    Args:
        argv: 命令行参数（不含程序名）

    Returns:
        退出码：0 成功，1 运行失败，2 配置错误，130 中断
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK

    logger = get_logger(level=args.log_level) if args.log_level else get_logger()

    try:
        if args.command == 'plot-pr':
            return _plot_pr(args, logger)

        manager = ConfigManager(args.config, collect_overrides(args))
        if not args.log_level:
            logger.set_level(manager.get('system.log_level'))

        if args.command == 'train':
            return _train(args, manager, logger)
        if args.command == 'infer':
            return _infer(args, manager, logger)
        return _eval(args, manager, logger)

    except ConfigError as e:
        logger.error(f"配置错误: {str(e)}")
        return EXIT_CONFIG
    except FileNotFoundError as e:
        logger.error(f"路径不存在: {str(e)}")
        return EXIT_FAILURE
    except (DatasetError, CheckpointError) as e:
        logger.error(f"{args.command} 失败: {str(e)}")
        return EXIT_FAILURE
    except OrsiSodError as e:
        logger.error(f"{args.command} 失败: {str(e)}", exc_info=True)
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"{args.command} 执行出错: {str(e)}", exc_info=True)
        return EXIT_FAILURE
