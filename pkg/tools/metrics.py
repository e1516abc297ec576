"""
Evaluation metrics for Refign

This module contains:
- Confusion-matrix accumulation and mean intersection over union
- Keypoint metrics for flows: PCK at a pixel threshold and average end-point error
- Sparsification curves and the area under the sparsification error curve
- Tabular report rows (metric, parameter, value)
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from config.config import AUSE_FRACTIONS, IGNORE_INDEX
from tools.fields import FlowField, LabelMap
from tools.uncertainty import GaussianFlow
from utils.helper import ContractViolation, EmptyInputError, require_same_shape

logger = logging.getLogger(__name__)


class ConfusionMatrix:
    """Counts with rows = ground truth and columns = prediction; IGNORE pixels skipped"""

    def __init__(self, n_class: int, counts: Optional[np.ndarray] = None):
        self.n_class = n_class
        if counts is None:
            counts = np.zeros((n_class, n_class), dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (n_class, n_class) or np.any(counts < 0):
            raise ContractViolation(f"confusion matrix must be a non-negative {n_class}x{n_class} array")
        self.counts = counts

    def add(self, pred: LabelMap, gt: LabelMap) -> "ConfusionMatrix":
        """Accumulate one prediction/ground-truth pair"""
        require_same_shape("prediction", pred.shape, "ground truth", gt.shape)
        p = pred.data.ravel()
        g = gt.data.ravel()
        keep = (g != IGNORE_INDEX) & (p != IGNORE_INDEX) & (g < self.n_class) & (p < self.n_class)
        index = self.n_class * g[keep] + p[keep]
        self.counts += np.bincount(index, minlength=self.n_class ** 2).reshape(self.n_class, self.n_class)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.n_class != self.n_class:
            raise ContractViolation("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.n_class, self.counts + other.counts)

    @classmethod
    def from_labels(cls, pairs: Sequence[Tuple[LabelMap, LabelMap]], n_class: int) -> "ConfusionMatrix":
        cm = cls(n_class)
        for pred, gt in pairs:
            cm.add(pred, gt)
        return cm


def miou(cm: ConfusionMatrix) -> Tuple[List[float], float]:
    """
    Per-class IoU and their mean

    Classes with tp + fp + fn = 0 are reported as NaN and left out of the mean.
    """
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    union = counts.sum(axis=0) + counts.sum(axis=1) - tp
    present = union > 0
    if not present.any():
        raise EmptyInputError("no class is present in ground truth or prediction")
    iou = np.full(cm.n_class, np.nan)
    iou[present] = tp[present] / union[present]
    return iou.tolist(), float(np.mean(iou[present]))


@dataclass(frozen=True)
class MatchSet:
    """Per-keypoint ground-truth and predicted displacements plus predicted variance"""

    gt: np.ndarray
    pred: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        gt = np.asarray(self.gt, dtype=np.float64).reshape(-1, 2)
        pred = np.asarray(self.pred, dtype=np.float64).reshape(-1, 2)
        variance = np.asarray(self.variance, dtype=np.float64).reshape(-1)
        if not (gt.shape == pred.shape and variance.shape[0] == gt.shape[0]):
            raise ContractViolation("match set arrays must describe the same keypoints")
        if not (np.all(np.isfinite(gt)) and np.all(np.isfinite(pred)) and np.all(np.isfinite(variance))):
            raise ContractViolation("match set values must be finite")
        object.__setattr__(self, "gt", gt)
        object.__setattr__(self, "pred", pred)
        object.__setattr__(self, "variance", variance)

    def __len__(self) -> int:
        return self.gt.shape[0]

    def errors(self) -> np.ndarray:
        diff = self.gt - self.pred
        return np.sqrt(diff[:, 0] ** 2 + diff[:, 1] ** 2)


def _require_nonempty(ms: MatchSet) -> None:
    if len(ms) == 0:
        raise EmptyInputError("match set is empty")


def pck(ms: MatchSet, t: float) -> float:
    """Percentage of keypoints with end-point error <= t"""
    if t <= 0:
        raise ContractViolation(f"threshold must be positive, got {t}")
    _require_nonempty(ms)
    return float(100.0 * np.mean(ms.errors() <= t))


def aepe(ms: MatchSet) -> float:
    """Average end-point error in pixels"""
    _require_nonempty(ms)
    return float(np.mean(ms.errors()))


def sparsification_curve(ms: MatchSet, fractions: Sequence[float] = AUSE_FRACTIONS,
                         oracle: bool = False) -> np.ndarray:
    """
    AEPE after removing the given fractions of keypoints

    Keypoints are removed in descending order of predicted variance, or of
    true error when oracle is set. Ties keep their input order.
    """
    _require_nonempty(ms)
    errors = ms.errors()
    key = errors if oracle else ms.variance
    order = np.argsort(-key, kind="stable")
    n = len(ms)
    curve = []
    for fraction in fractions:
        if not 0.0 <= fraction < 1.0:
            raise ContractViolation(f"removal fractions must lie in [0, 1), got {fraction}")
        removed = min(int(round(fraction * n)), n - 1)
        curve.append(float(np.mean(errors[order[removed:]])))
    return np.array(curve)


def ause(ms: MatchSet, fractions: Sequence[float] = AUSE_FRACTIONS) -> float:
    """
    Area between the uncertainty and oracle sparsification curves

    Both curves are divided by the full-set AEPE before the trapezoidal
    integration; a zero full-set AEPE gives 0.
    """
    full = aepe(ms)
    if full == 0.0:
        return 0.0
    by_uncertainty = sparsification_curve(ms, fractions) / full
    by_error = sparsification_curve(ms, fractions, oracle=True) / full
    return float(trapezoid(by_uncertainty - by_error, np.asarray(fractions, dtype=np.float64)))


def match_set_from_flows(gt_flow: FlowField, pred: GaussianFlow,
                         keypoints: Optional[np.ndarray] = None) -> MatchSet:
    """
    Build a MatchSet from dense flows

    Parameters:
    -----------
    gt_flow : FlowField
        Ground-truth displacement
    pred : GaussianFlow
        Predicted displacement and variance
    keypoints : np.ndarray, optional
        (n, 2) integer (row, col) positions; defaults to every valid pixel
    """
    require_same_shape("gt_flow", gt_flow.shape, "prediction", pred.shape)
    if keypoints is None:
        rows, cols = np.nonzero(pred.validity.data)
    else:
        keypoints = np.asarray(keypoints, dtype=np.int64).reshape(-1, 2)
        rows, cols = keypoints[:, 0], keypoints[:, 1]
    return MatchSet(gt_flow.data[rows, cols], pred.mean.data[rows, cols], pred.variance[rows, cols])


def report_rows(rows: Sequence[Tuple[str, str, float]]) -> pd.DataFrame:
    """Metric report as a (metric, parameter, value) table"""
    return pd.DataFrame(list(rows), columns=["metric", "parameter", "value"])
