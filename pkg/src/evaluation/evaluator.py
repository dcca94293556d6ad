#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
数据集评估模块

读取预测目录与真值目录中同名的图像，逐张计算指标并汇总，
输出 YAML 指标报告、PR 曲线 CSV，以及多条 PR 曲线的对比图。
"""

import os
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np
import pandas as pd
import yaml
from tqdm import tqdm

from src import __version__
from src.data.dataset import list_by_stem
from src.errors import DatasetError, ShapeMismatchError
from src.evaluation.sod_metrics import ALPHA, BETA2, NUM_THRESHOLDS, MetricReport, SODMetrics
from src.logger import get_logger

IMAGE_EXTENSIONS = ('.png', '.jpg', '.jpeg', '.bmp')

REPORT_NAME = 'metrics.yaml'
PR_CURVE_NAME = 'pr_curve.csv'
PR_COLUMNS = ['threshold', 'precision', 'recall']


def list_images(directory: str) -> Dict[str, str]:
    """目录下的图像：去扩展名的文件名 -> 路径，同名不同扩展名时抛出 DatasetError"""
    if not os.path.isdir(directory):
        raise DatasetError(f"目录不存在: {directory}", [directory])
    return list_by_stem(directory, IMAGE_EXTENSIONS)


def match_pairs(pred_dir: str, gt_dir: str) -> List[Tuple[str, str, str]]:
    """
    按文件名匹配预测与真值

    Returns:
        (basename, 预测路径, 真值路径) 列表，按文件名排序

    Raises:
        DatasetError: 存在无法匹配的文件名
    """
    preds = list_images(pred_dir)
    gts = list_images(gt_dir)
    unmatched = sorted(set(preds) ^ set(gts))
    if unmatched:
        paths = [preds.get(name) or gts.get(name) for name in unmatched]
        raise DatasetError(f"预测与真值文件名不匹配: {', '.join(unmatched)}", paths)
    return [(name, preds[name], gts[name]) for name in sorted(gts)]


def read_gray(path: str) -> np.ndarray:
    image = cv2.imread(path, cv2.IMREAD_GRAYSCALE)
    if image is None:
        raise DatasetError(f"无法读取图像: {path}", [path])
    return image


def load_prediction(path: str, normalize: bool = True) -> np.ndarray:
    """8 位预测图 -> [0,1]；非常数图按最小-最大值归一化"""
    pred = read_gray(path).astype(np.float64) / 255.0
    if normalize:
        low, high = pred.min(), pred.max()
        if high > low:
            pred = (pred - low) / (high - low)
    return pred


def load_mask(path: str) -> np.ndarray:
    return read_gray(path) > 127.5


def evaluate_dataset(pred_dir: str, gt_dir: str, num_thresholds: int = NUM_THRESHOLDS,
                     beta2: float = BETA2, alpha: float = ALPHA,
                     normalize_predictions: bool = True, show_progress: bool = True) -> MetricReport:
    """
    评估一个预测目录

    Args:
        pred_dir: 预测图目录（8 位灰度）
        gt_dir: 真值目录
        num_thresholds: 阈值个数
        beta2: F-measure 的 β²
        alpha: S-measure 的 α
        normalize_predictions: 是否对预测做最小-最大归一化
        show_progress: 是否显示进度条

    Returns:
        MetricReport
    """
    logger = get_logger()
    pairs = match_pairs(pred_dir, gt_dir)
    if not pairs:
        raise DatasetError(f"没有可评估的图像: {gt_dir}", [gt_dir])

    metrics = SODMetrics(num_thresholds, beta2, alpha)
    for name, pred_path, gt_path in tqdm(pairs, desc='评估', disable=not show_progress):
        pred = load_prediction(pred_path, normalize_predictions)
        gt = load_mask(gt_path)
        try:
            metrics.step(pred, gt, name)
        except ShapeMismatchError as e:
            raise DatasetError(f"{pred_path} 与真值尺寸不一致: {e}", [pred_path, gt_path]) from e

    report = metrics.get_results()
    if report.degenerate:
        logger.warning(f"{len(report.degenerate)} 张真值没有前景像素，recall 按 0 计入: "
                       f"{', '.join(report.degenerate)}")
    logger.info(f"评估完成: {report.num_images} 张图像, S={report.s_measure:.4f}, "
                f"maxF={report.max_f:.4f}, MAE={report.mae:.4f}")
    return report


def report_meta(num_thresholds: int = NUM_THRESHOLDS, beta2: float = BETA2,
                alpha: float = ALPHA, normalize_predictions: bool = True) -> Dict[str, object]:
    """报告头部：版本与指标约定"""
    return {
        'tool_version': __version__,
        'threshold_grid': f"k/{num_thresholds}, k=0..{num_thresholds - 1}",
        'binarization': 'pred > threshold',
        'adaptive_threshold': 'min(1, 2*mean(pred)), pred >= threshold',
        'beta2': beta2,
        'alpha': alpha,
        'e_measure_normalization': 'pixel count N',
        'zero_denominator': 'precision=0 without predicted positives; recall=0 without GT foreground',
        'degenerate_gt': 'S: 1-mean(pred) for empty GT, mean(pred) for full GT; '
                         'E: mean(1-FM) for empty GT, mean(FM) for full GT',
        'prediction_normalization': 'min-max per image' if normalize_predictions else 'none',
    }


def write_pr_curve(report: MetricReport, path: str) -> str:
    frame = pd.DataFrame(report.pr_rows(), columns=PR_COLUMNS)
    frame.to_csv(path, index=False, float_format='%.10f')
    return path


def read_pr_curve(path: str) -> pd.DataFrame:
    """读取 PR 曲线 CSV，校验列名"""
    if not os.path.exists(path):
        raise DatasetError(f"PR 曲线文件不存在: {path}", [path])
    frame = pd.read_csv(path)
    missing = [column for column in PR_COLUMNS if column not in frame.columns]
    if missing:
        raise DatasetError(f"PR 曲线文件缺少列 {missing}: {path}", [path])
    return frame


def write_report(report: MetricReport, out_dir: str, meta: Optional[Dict[str, object]] = None) -> str:
    """
    写出指标报告与 PR 曲线

    Returns:
        报告文件路径
    """
    os.makedirs(out_dir, exist_ok=True)
    pr_path = write_pr_curve(report, os.path.join(out_dir, PR_CURVE_NAME))

    document = {
        'meta': meta or report_meta(),
        'num_images': report.num_images,
        'metrics': {key: round(value, 10) for key, value in report.scalars().items()},
        'pr_curve': os.path.basename(pr_path),
    }
    if report.degenerate:
        document['degenerate_gt'] = list(report.degenerate)

    report_path = os.path.join(out_dir, REPORT_NAME)
    with open(report_path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(document, f, default_flow_style=False, allow_unicode=True, sort_keys=False)
    get_logger().info(f"指标报告已写入: {report_path}")
    return report_path


def plot_pr_curves(curve_paths: Sequence[str], labels: Optional[Sequence[str]], out_dir: str) -> Tuple[str, str]:
    """
    叠加绘制多条 PR 曲线

    Args:
        curve_paths: PR 曲线 CSV 路径
        labels: 每条曲线的图例，None 时使用文件所在目录名
        out_dir: 输出目录

    Returns:
        (图像路径, 合并后的 CSV 路径)
    """
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    if labels is None:
        labels = [os.path.basename(os.path.dirname(os.path.abspath(p))) or p for p in curve_paths]
    if len(labels) != len(curve_paths):
        raise ValueError(f"图例数量 {len(labels)} 与曲线数量 {len(curve_paths)} 不一致")

    os.makedirs(out_dir, exist_ok=True)
    frames = []
    fig, ax = plt.subplots(figsize=(6, 5))
    for path, label in zip(curve_paths, labels):
        frame = read_pr_curve(path)
        ax.plot(frame['recall'], frame['precision'], label=label)
        frames.append(frame.assign(label=label))
    ax.set_xlabel('Recall')
    ax.set_ylabel('Precision')
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, linestyle='--', alpha=0.5)
    ax.legend(loc='lower left')

    image_path = os.path.join(out_dir, 'pr_curves.png')
    fig.savefig(image_path, dpi=150, bbox_inches='tight')
    plt.close(fig)

    merged_path = os.path.join(out_dir, 'pr_curves.csv')
    pd.concat(frames, ignore_index=True)[['label'] + PR_COLUMNS].to_csv(
        merged_path, index=False, float_format='%.10f')
    get_logger().info(f"PR 曲线图已写入: {image_path}")
    return image_path, merged_path
