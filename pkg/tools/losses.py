"""
Warp-consistency training objectives

This module implements the alignment losses:
- Huber penalty on residual norms
- Direct loss (predicted flow against the synthetic warp)
- Composite loss over the visibility mask
- Probabilistic (Gaussian negative log-likelihood) loss and its gradients
- The combined alignment objective reported as a LossReport

All reductions are pixel means computed with numpy's fixed summation order,
so repeated evaluations are bit-identical.
"""

import logging
from dataclasses import dataclass, field
from typing import Tuple, Union

import numpy as np

from config.config import LOSS_CONFIG
from tools.fields import FlowField, ScalarField, ValidityMask
from tools.uncertainty import GaussianFlow, compose_gaussian
from tools.grid import compose_flow, warp
from utils.helper import ContractViolation, require_same_shape

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossConfig:
    """Weights and thresholds of the alignment objective"""

    lambda_weight: float = LOSS_CONFIG["lambda_weight"]
    huber_delta: float = LOSS_CONFIG["huber_delta"]
    alpha1: float = LOSS_CONFIG["alpha1"]
    alpha2: float = LOSS_CONFIG["alpha2"]

    def __post_init__(self):
        for name in ("lambda_weight", "huber_delta", "alpha1", "alpha2"):
            if getattr(self, name) <= 0:
                raise ContractViolation(f"{name} must be positive")


@dataclass(frozen=True)
class LossReport:
    """total = direct_term + lambda * composite_term"""

    total: float
    direct_term: float
    composite_term: float
    visible_fraction: float


def huber(residual_norm: Union[float, np.ndarray], delta: float) -> Union[float, np.ndarray]:
    """
    Huber penalty: x^2/2 for x <= delta, delta * (x - delta/2) beyond

    Parameters:
    -----------
    residual_norm : float or np.ndarray
        Non-negative residual norm(s)
    delta : float
        Transition point in pixels
    """
    x = np.asarray(residual_norm, dtype=np.float64)
    if np.any(x < 0):
        raise ContractViolation("residual norm must be non-negative")
    out = np.where(x <= delta, 0.5 * x * x, delta * (x - 0.5 * delta))
    return float(out) if out.ndim == 0 else out


def _residual(pred: FlowField, w: FlowField) -> np.ndarray:
    require_same_shape("prediction", pred.shape, "warp", w.shape)
    return pred.data.astype(np.float64) - w.data.astype(np.float64)


def _norm(residual: np.ndarray) -> np.ndarray:
    return np.sqrt(residual[..., 0] ** 2 + residual[..., 1] ** 2)


def direct_loss(pred: FlowField, w: FlowField, cfg: LossConfig = LossConfig()) -> float:
    """Mean Huber penalty of ||pred - w|| over all pixels"""
    return float(np.mean(huber(_norm(_residual(pred, w)), cfg.huber_delta)))


def visibility_mask(f_ij: FlowField, warped_f_ji: FlowField, w: FlowField,
                    cfg: LossConfig = LossConfig()) -> ValidityMask:
    """
    Cauchy-Schwarz visibility test of the composite flow

    V = 1[ ||f_ij + warped_f_ji - w||^2 < alpha2 + alpha1 (||f_ij||^2 + ||warped_f_ji||^2 + ||w||^2) ]

    warped_f_ji must already be warped by f_ij. The inequality is strict.
    """
    require_same_shape("f_ij", f_ij.shape, "warped_f_ji", warped_f_ji.shape)
    require_same_shape("f_ij", f_ij.shape, "w", w.shape)
    a = f_ij.data.astype(np.float64)
    b = warped_f_ji.data.astype(np.float64)
    c = w.data.astype(np.float64)
    lhs = np.sum((a + b - c) ** 2, axis=2)
    rhs = cfg.alpha2 + cfg.alpha1 * (np.sum(a ** 2, axis=2) + np.sum(b ** 2, axis=2) + np.sum(c ** 2, axis=2))
    return ValidityMask(lhs < rhs)


def composite_loss(composite: FlowField, w: FlowField, v: ValidityMask,
                   cfg: LossConfig = LossConfig()) -> float:
    """Mean Huber penalty over visible pixels; 0 when nothing is visible"""
    require_same_shape("composite", composite.shape, "mask", v.shape)
    penalty = huber(_norm(_residual(composite, w)), cfg.huber_delta)
    visible = v.data
    if not visible.any():
        return 0.0
    return float(np.mean(penalty[visible]))


def nll_loss(g: GaussianFlow, w: FlowField, v: ValidityMask, cfg: LossConfig = LossConfig()) -> float:
    """
    Gaussian negative log-likelihood with a Huber data term

    Per visible pixel: huber(||mean - w||) / (2 var) + log var, averaged
    over visible pixels (mask first, then average). 0 when nothing is visible.
    """
    require_same_shape("mean", g.shape, "mask", v.shape)
    penalty = huber(_norm(_residual(g.mean, w)), cfg.huber_delta)
    log_var = g.log_variance.data.astype(np.float64)
    per_pixel = penalty * np.exp(-log_var) / 2.0 + log_var
    visible = v.data
    if not visible.any():
        return 0.0
    return float(np.mean(per_pixel[visible]))


def nll_gradients(g: GaussianFlow, w: FlowField, v: ValidityMask,
                  cfg: LossConfig = LossConfig()) -> Tuple[np.ndarray, np.ndarray]:
    """
    Analytic gradients of nll_loss

    Parameters:
    -----------
    g : GaussianFlow
        Prediction; gradients are taken w.r.t. its mean and log-variance
    w : FlowField
        Target flow
    v : ValidityMask
        Pixels that enter the mean

    Returns:
    --------
    Tuple[np.ndarray, np.ndarray]
        d_mean with shape (h, w, 2) and d_logvar with shape (h, w), float64
    """
    require_same_shape("mean", g.shape, "mask", v.shape)
    residual = _residual(g.mean, w)
    norm = _norm(residual)
    delta = cfg.huber_delta
    log_var = g.log_variance.data.astype(np.float64)
    inv_var = np.exp(-log_var)
    visible = v.data.astype(np.float64)
    count = visible.sum()
    if count == 0:
        return np.zeros(residual.shape), np.zeros(norm.shape)

    # d huber(||e||) / d e: e inside delta, delta * e / ||e|| beyond
    scale = np.where(norm <= delta, 1.0, delta / np.maximum(norm, delta))
    d_mean = residual * (scale * inv_var / 2.0 * visible / count)[..., None]
    d_logvar = (1.0 - huber(norm, delta) * inv_var / 2.0) * visible / count
    return d_mean, d_logvar


def alignment_loss(direct: GaussianFlow, first: GaussianFlow, second: GaussianFlow, w: FlowField,
                   cfg: LossConfig = LossConfig(), probabilistic: bool = True,
                   use_visibility: bool = True) -> LossReport:
    """
    Full warp-consistency objective

    Parameters:
    -----------
    direct : GaussianFlow
        Estimate of the flow from the augmented image back to the original
    first, second : GaussianFlow
        The two legs of the composite path (augmented -> other image -> original)
    w : FlowField
        Synthetic warp supervising both terms
    probabilistic : bool
        Use the negative log-likelihood instead of the plain Huber terms
    use_visibility : bool
        False treats every pixel as visible (first training stage)

    Returns:
    --------
    LossReport
    """
    if probabilistic:
        composite = compose_gaussian(first, second)
        composite_mean = composite.mean
    else:
        composite_mean, _ = compose_flow(first.mean, second.mean)

    if use_visibility:
        warped_second, _ = warp(second.mean, first.mean)
        v = visibility_mask(first.mean, warped_second, w, cfg)
    else:
        v = ValidityMask.all_valid(*w.shape)

    if probabilistic:
        direct_term = nll_loss(direct, w, ValidityMask.all_valid(*w.shape), cfg)
        composite_term = nll_loss(composite, w, v, cfg)
    else:
        direct_term = direct_loss(direct.mean, w, cfg)
        composite_term = composite_loss(composite_mean, w, v, cfg)

    total = direct_term + cfg.lambda_weight * composite_term
    logger.debug(f"Alignment loss: direct={direct_term:.6f} composite={composite_term:.6f} total={total:.6f}")
    return LossReport(total=total, direct_term=direct_term, composite_term=composite_term,
                      visible_fraction=v.fraction())
