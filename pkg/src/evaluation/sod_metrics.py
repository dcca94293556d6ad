#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
显著性检测评估指标

S-measure、max/mean/adaptive F-measure、max/mean/adaptive E-measure、MAE 与 PR 曲线。

约定（同时写入评估报告头部）:
    - 阈值网格 τ_k = k/256, k = 0..255；扫描二值化为 pred > τ
    - 自适应阈值 τ_adp = min(1, 2·mean(pred))，二值化为 pred >= τ_adp
    - 无预测正样本时 precision = 0；真值无前景时 recall = 0
    - E-measure 按像素数 N 归一化；全 0 / 全 1 真值采用公开定义中的特例
    - S-measure 以真值质心划分四个区域，质心所在行列归入左/上区域
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.errors import ShapeMismatchError

NUM_THRESHOLDS = 256
BETA2 = 0.3
ALPHA = 0.5

_EPS = np.finfo(np.float64).eps


def threshold_grid(num: int = NUM_THRESHOLDS) -> np.ndarray:
    return np.arange(num, dtype=np.float64) / num


def adaptive_threshold(pred: np.ndarray) -> float:
    return min(1.0, 2.0 * float(pred.mean()))


def prepare_pair(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    校验并规范化一对预测/真值

    Returns:
        (float64 预测, bool 真值)
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        if pred.ndim != gt.ndim:
            raise ShapeMismatchError('EvalPair', 'ndim', gt.ndim, pred.ndim)
        for dim, (want, got) in enumerate(zip(gt.shape, pred.shape)):
            if want != got:
                raise ShapeMismatchError('EvalPair', 'height' if dim == 0 else 'width', want, got)
    if pred.size and (pred.min() < 0.0 or pred.max() > 1.0):
        raise ValueError(f"预测值必须在 [0,1] 内，实际范围 [{pred.min()}, {pred.max()}]")
    return pred, gt.astype(bool) if gt.dtype == bool else gt > 0.5


def _count_above(sorted_values: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """每个阈值下严格大于阈值的元素个数"""
    return sorted_values.size - np.searchsorted(sorted_values, thresholds, side='right')


@dataclass
class ConfusionCounts:
    """各阈值下的 TP/FP/FN/TN 计数（数组或标量）"""
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    def precision(self) -> np.ndarray:
        predicted = self.tp + self.fp
        return np.where(predicted > 0, self.tp / np.maximum(predicted, 1), 0.0)

    def recall(self) -> np.ndarray:
        positives = self.tp + self.fn
        return np.where(positives > 0, self.tp / np.maximum(positives, 1), 0.0)


def sweep_counts(pred: np.ndarray, gt: np.ndarray, thresholds: np.ndarray) -> ConfusionCounts:
    """pred > τ 在每个阈值下的混淆计数"""
    fg = np.sort(pred[gt])
    bg = np.sort(pred[~gt])
    tp = _count_above(fg, thresholds).astype(np.float64)
    fp = _count_above(bg, thresholds).astype(np.float64)
    return ConfusionCounts(tp, fp, fg.size - tp, bg.size - fp)


def adaptive_counts(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    """pred >= τ_adp 的混淆计数"""
    threshold = adaptive_threshold(pred)
    tp = float(np.count_nonzero(pred[gt] >= threshold))
    fp = float(np.count_nonzero(pred[~gt] >= threshold))
    n_fg = float(np.count_nonzero(gt))
    n_bg = float(gt.size) - n_fg
    return ConfusionCounts(np.float64(tp), np.float64(fp), np.float64(n_fg - tp), np.float64(n_bg - fp))


def f_from_pr(precision: np.ndarray, recall: np.ndarray, beta2: float = BETA2) -> np.ndarray:
    """F = (1+β²)PR / (β²P + R)，分母为 0 时 F = 0"""
    numerator = (1.0 + beta2) * precision * recall
    denominator = beta2 * precision + recall
    return np.where(denominator > 0, numerator / np.where(denominator > 0, denominator, 1.0), 0.0)


def e_from_counts(counts: ConfusionCounts) -> np.ndarray:
    """
    由二值图与真值的混淆计数计算 E-measure

    四种 (FM, GT) 组合各自的对齐值为常数，因此按计数加权即可得到空间均值。
    """
    tp, fp, fn, tn = (np.asarray(v, dtype=np.float64) for v in (counts.tp, counts.fp, counts.fn, counts.tn))
    n = tp + fp + fn + tn
    n_fg = tp + fn
    mean_fm = (tp + fp) / n
    mean_gt = n_fg / n

    def enhanced(fm_value: float, gt_value: float) -> np.ndarray:
        d_fm = fm_value - mean_fm
        d_gt = gt_value - mean_gt
        align = 2.0 * d_gt * d_fm / (d_gt ** 2 + d_fm ** 2 + _EPS)
        return (align + 1.0) ** 2 / 4.0

    general = (tp * enhanced(1.0, 1.0) + fp * enhanced(1.0, 0.0)
               + fn * enhanced(0.0, 1.0) + tn * enhanced(0.0, 0.0)) / n
    all_background = (fn + tn) / n   # mean(1 - FM)
    all_foreground = (tp + fp) / n   # mean(FM)
    return np.where(n_fg == 0, all_background, np.where(n_fg == n, all_foreground, general))


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    """平均绝对误差"""
    pred, gt = prepare_pair(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


@dataclass
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    degenerate: bool = False  # 真值没有前景像素


def pr_curve(pred: np.ndarray, gt: np.ndarray, num_thresholds: int = NUM_THRESHOLDS) -> PRCurve:
    """每个阈值下的 (precision, recall)"""
    pred, gt = prepare_pair(pred, gt)
    thresholds = threshold_grid(num_thresholds)
    counts = sweep_counts(pred, gt, thresholds)
    return PRCurve(thresholds, counts.precision(), counts.recall(), degenerate=not gt.any())


def f_curve(pred: np.ndarray, gt: np.ndarray, beta2: float = BETA2,
            num_thresholds: int = NUM_THRESHOLDS) -> np.ndarray:
    curve = pr_curve(pred, gt, num_thresholds)
    return f_from_pr(curve.precision, curve.recall, beta2)


def adaptive_f(pred: np.ndarray, gt: np.ndarray, beta2: float = BETA2) -> float:
    pred, gt = prepare_pair(pred, gt)
    counts = adaptive_counts(pred, gt)
    return float(f_from_pr(counts.precision(), counts.recall(), beta2))


def f_measures(pred: np.ndarray, gt: np.ndarray, beta2: float = BETA2,
               num_thresholds: int = NUM_THRESHOLDS) -> Tuple[float, float, float]:
    """(max_f, mean_f, adp_f)"""
    curve = f_curve(pred, gt, beta2, num_thresholds)
    return float(curve.max()), float(curve.mean()), adaptive_f(pred, gt, beta2)


def e_curve(pred: np.ndarray, gt: np.ndarray, num_thresholds: int = NUM_THRESHOLDS) -> np.ndarray:
    pred, gt = prepare_pair(pred, gt)
    return e_from_counts(sweep_counts(pred, gt, threshold_grid(num_thresholds)))


def adaptive_e(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = prepare_pair(pred, gt)
    return float(e_from_counts(adaptive_counts(pred, gt)))


def e_measures(pred: np.ndarray, gt: np.ndarray,
               num_thresholds: int = NUM_THRESHOLDS) -> Tuple[float, float, float]:
    """(max_e, mean_e, adp_e)"""
    curve = e_curve(pred, gt, num_thresholds)
    return float(curve.max()), float(curve.mean()), adaptive_e(pred, gt)


def _s_object(values: np.ndarray) -> float:
    """2x / (x² + 1 + σ + eps)，σ 为样本标准差"""
    if values.size == 0:
        return 0.0
    x = float(values.mean())
    sigma = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + _EPS)


def object_score(pred: np.ndarray, gt: np.ndarray) -> float:
    """前景与背景的目标感知相似度，按前景占比加权"""
    u = float(gt.mean())
    fg_score = _s_object(pred[gt])
    bg_score = _s_object(1.0 - pred[~gt])
    return u * fg_score + (1.0 - u) * bg_score


def centroid(gt: np.ndarray) -> Tuple[int, int]:
    """真值质心 (x, y)，取整后加 1，作为右/下区域的起始下标"""
    h, w = gt.shape
    if not gt.any():
        return int(np.round(w / 2)) + 1, int(np.round(h / 2)) + 1
    y, x = np.argwhere(gt).mean(axis=0).round()
    return int(x) + 1, int(y) + 1


def ssim_score(pred: np.ndarray, gt: np.ndarray) -> float:
    """区域内的结构相似度"""
    n = pred.size
    x = float(pred.mean())
    y = float(gt.mean())
    denominator = max(n - 1, 1)
    sigma_x = float(np.sum((pred - x) ** 2)) / denominator
    sigma_y = float(np.sum((gt - y) ** 2)) / denominator
    sigma_xy = float(np.sum((pred - x) * (gt - y))) / denominator

    alpha = 4.0 * x * y * sigma_xy
    beta = (x * x + y * y) * (sigma_x + sigma_y)
    if alpha != 0:
        return alpha / (beta + _EPS)
    if beta == 0:
        return 1.0
    return 0.0


def region_score(pred: np.ndarray, gt: np.ndarray) -> float:
    """按质心四分后各区域 SSIM 的面积加权和，空区域跳过"""
    h, w = gt.shape
    x, y = centroid(gt)
    gt_f = gt.astype(np.float64)
    area = float(h * w)
    score = 0.0
    for rows, cols in (((0, y), (0, x)), ((0, y), (x, w)), ((y, h), (0, x)), ((y, h), (x, w))):
        part_pred = pred[rows[0]:rows[1], cols[0]:cols[1]]
        if part_pred.size == 0:
            continue
        part_gt = gt_f[rows[0]:rows[1], cols[0]:cols[1]]
        score += part_pred.size / area * ssim_score(part_pred, part_gt)
    return score


def s_measure(pred: np.ndarray, gt: np.ndarray, alpha: float = ALPHA) -> float:
    """S = α·S_object + (1-α)·S_region"""
    pred, gt = prepare_pair(pred, gt)
    y = float(gt.mean())
    if y == 0:
        return 1.0 - float(pred.mean())
    if y == 1:
        return float(pred.mean())
    score = alpha * object_score(pred, gt) + (1.0 - alpha) * region_score(pred, gt)
    return max(0.0, score)


METRIC_KEYS = ('s_measure', 'max_f', 'mean_f', 'adp_f', 'max_e', 'mean_e', 'adp_e', 'mae')


@dataclass
class MetricReport:
    """一次数据集评估的结果"""
    s_measure: float
    max_f: float
    mean_f: float
    adp_f: float
    max_e: float
    mean_e: float
    adp_e: float
    mae: float
    pr_thresholds: np.ndarray
    pr_precision: np.ndarray
    pr_recall: np.ndarray
    num_images: int = 0
    degenerate: List[str] = field(default_factory=list)

    def scalars(self) -> Dict[str, float]:
        return {key: float(getattr(self, key)) for key in METRIC_KEYS}

    def pr_rows(self) -> List[Tuple[float, float, float]]:
        return [(float(t), float(p), float(r))
                for t, p, r in zip(self.pr_thresholds, self.pr_precision, self.pr_recall)]


class SODMetrics:
    """
    逐张累积的指标计算器

    阈值相关的曲线（F、E、PR）先按阈值在图像间平均，再取最大值/均值。
    """

    def __init__(self, num_thresholds: int = NUM_THRESHOLDS, beta2: float = BETA2, alpha: float = ALPHA):
        self.num_thresholds = num_thresholds
        self.beta2 = beta2
        self.alpha = alpha
        self.thresholds = threshold_grid(num_thresholds)
        self.reset()

    def reset(self) -> None:
        self.s_scores: List[float] = []
        self.mae_scores: List[float] = []
        self.f_curves: List[np.ndarray] = []
        self.e_curves: List[np.ndarray] = []
        self.adp_f_scores: List[float] = []
        self.adp_e_scores: List[float] = []
        self.precisions: List[np.ndarray] = []
        self.recalls: List[np.ndarray] = []
        self.degenerate: List[str] = []

    def step(self, pred: np.ndarray, gt: np.ndarray, name: Optional[str] = None) -> None:
        """加入一对预测/真值"""
        pred, gt = prepare_pair(pred, gt)
        if not gt.any() and name is not None:
            self.degenerate.append(name)

        counts = sweep_counts(pred, gt, self.thresholds)
        precision, recall = counts.precision(), counts.recall()
        self.precisions.append(precision)
        self.recalls.append(recall)
        self.f_curves.append(f_from_pr(precision, recall, self.beta2))
        self.e_curves.append(e_from_counts(counts))

        adp = adaptive_counts(pred, gt)
        self.adp_f_scores.append(float(f_from_pr(adp.precision(), adp.recall(), self.beta2)))
        self.adp_e_scores.append(float(e_from_counts(adp)))

        self.s_scores.append(s_measure(pred, gt, self.alpha))
        self.mae_scores.append(float(np.mean(np.abs(pred - gt))))

    def get_results(self) -> MetricReport:
        if not self.s_scores:
            raise ValueError("没有可评估的图像")
        f_curve_mean = np.mean(self.f_curves, axis=0)
        e_curve_mean = np.mean(self.e_curves, axis=0)
        return MetricReport(
            s_measure=float(np.mean(self.s_scores)),
            max_f=float(f_curve_mean.max()),
            mean_f=float(f_curve_mean.mean()),
            adp_f=float(np.mean(self.adp_f_scores)),
            max_e=float(e_curve_mean.max()),
            mean_e=float(e_curve_mean.mean()),
            adp_e=float(np.mean(self.adp_e_scores)),
            mae=float(np.mean(self.mae_scores)),
            pr_thresholds=self.thresholds.copy(),
            pr_precision=np.mean(self.precisions, axis=0),
            pr_recall=np.mean(self.recalls, axis=0),
            num_images=len(self.s_scores),
            degenerate=list(self.degenerate),
        )
