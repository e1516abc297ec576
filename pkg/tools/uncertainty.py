"""
Probabilistic flow tools for Refign

This module contains:
- GaussianFlow: flow mean with a shared per-pixel log-variance
- Variance propagation through flow composition
- Warp confidence maps (probability of the true flow lying within radius r)
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from config.config import LOG_VARIANCE_RANGE
from tools.fields import ConfidenceMap, FlowField, ScalarField, ValidityMask
from tools.grid import compose_flow, warp, warp_mask
from utils.helper import ContractViolation, require_same_shape

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GaussianFlow:
    """
    Isotropic Gaussian over the flow at each pixel

    log_variance is clamped to LOG_VARIANCE_RANGE on construction; the
    validity defaults to all pixels valid.
    """

    mean: FlowField
    log_variance: ScalarField
    validity: Optional[ValidityMask] = field(default=None)

    def __post_init__(self):
        require_same_shape("mean", self.mean.shape, "log_variance", self.log_variance.shape)
        lo, hi = LOG_VARIANCE_RANGE
        clamped = np.clip(self.log_variance.data, lo, hi)
        if not np.array_equal(clamped, self.log_variance.data):
            object.__setattr__(self, "log_variance", ScalarField(clamped))
        if self.validity is None:
            object.__setattr__(self, "validity", ValidityMask.all_valid(*self.mean.shape))
        require_same_shape("mean", self.mean.shape, "validity", self.validity.shape)

    @property
    def shape(self):
        return self.mean.shape

    @property
    def variance(self) -> np.ndarray:
        """Per-pixel variance in pixels^2, float64"""
        return np.exp(self.log_variance.data.astype(np.float64))

    @classmethod
    def from_variance(cls, mean: FlowField, variance: np.ndarray,
                      validity: Optional[ValidityMask] = None) -> "GaussianFlow":
        lo, hi = LOG_VARIANCE_RANGE
        with np.errstate(divide="ignore"):
            log_var = np.log(np.asarray(variance, dtype=np.float64))
        return cls(mean, ScalarField(np.clip(log_var, lo, hi)), validity)


def compose_gaussian(g_ab: GaussianFlow, g_bc: GaussianFlow) -> GaussianFlow:
    """
    Compose two Gaussian flows

    The mean follows compose_flow; variances add after warping the second
    leg's variance by the first leg's mean:
        var = var(g_ab) + warp(var(g_bc), mean(g_ab))

    Parameters:
    -----------
    g_ab : GaussianFlow
        First leg
    g_bc : GaussianFlow
        Second leg

    Returns:
    --------
    GaussianFlow
        Valid where both inputs are valid and the warp stays in bounds
    """
    require_same_shape("g_ab", g_ab.shape, "g_bc", g_bc.shape)
    mean, warp_valid = compose_flow(g_ab.mean, g_bc.mean)
    warped_var, _ = warp(g_bc.variance, g_ab.mean)
    variance = g_ab.variance + warped_var
    validity = g_ab.validity & warp_valid & warp_mask(g_bc.validity, g_ab.mean)
    return GaussianFlow.from_variance(mean, variance, validity)


def confidence_map(g: GaussianFlow, r: float = 1.0) -> ConfidenceMap:
    """
    Probability that the true flow lies within radius r of the mean

    P = 1 - exp(-r^2 / (2 * variance)), forced to 0 on invalid pixels.
    Evaluated in float64. P is strictly decreasing in the variance until it
    rounds to 1.0, which for r = 1 happens below a log-variance of about
    -4.3; smaller variances all give P = 1.

    Parameters:
    -----------
    g : GaussianFlow
        Predicted flow distribution
    r : float
        Radius in pixels, > 0

    Returns:
    --------
    ConfidenceMap
        Values in [0, 1], float64
    """
    if r <= 0:
        raise ContractViolation(f"radius must be positive, got {r}")
    p = -np.expm1(-(r * r) / (2.0 * g.variance))
    p[~g.validity.data] = 0.0
    return ConfidenceMap(p)


def confidence_from_cycle(g_tr: GaussianFlow, g_rt: GaussianFlow, r: float = 1.0) -> ConfidenceMap:
    """
    Confidence from the target->reference->target cycle

    Uses the composed variance, which is never smaller than the direct one,
    so this path is the more conservative of the two.
    """
    cycle = compose_gaussian(g_tr, g_rt)
    direct_valid = GaussianFlow(g_tr.mean, cycle.log_variance, cycle.validity & g_tr.validity)
    return confidence_map(direct_valid, r)
