"""
Toy flow refiner

Fits a per-pixel Gaussian flow (mean and log-variance) to a set of observed
flow fields by gradient descent on the mean negative log-likelihood. This is
the desk-scale stand-in for training a probabilistic matching network: each
pixel is a free parameter, so the fit learns heteroscedastic uncertainty
directly from the spread of the observations.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from tools.fields import FlowField, ScalarField, ValidityMask
from tools.losses import LossConfig, nll_gradients, nll_loss
from tools.uncertainty import GaussianFlow
from utils.helper import ContractViolation, require_same_shape

logger = logging.getLogger(__name__)


def _mean_objective(g: GaussianFlow, observations: Sequence[FlowField], visible: ValidityMask,
                    cfg: LossConfig) -> Tuple[float, np.ndarray, np.ndarray]:
    loss = 0.0
    d_mean = np.zeros(g.mean.data.shape)
    d_logvar = np.zeros(g.log_variance.data.shape)
    for obs in observations:
        loss += nll_loss(g, obs, visible, cfg)
        dm, dl = nll_gradients(g, obs, visible, cfg)
        d_mean += dm
        d_logvar += dl
    k = len(observations)
    return loss / k, d_mean / k, d_logvar / k


def fit_gaussian_flow(observations: Sequence[FlowField], cfg: LossConfig = LossConfig(),
                      steps: int = 200, lr: float = 0.5,
                      init: Optional[GaussianFlow] = None) -> Tuple[GaussianFlow, List[float]]:
    """
    Fit a GaussianFlow to observed flows

    Parameters:
    -----------
    observations : Sequence[FlowField]
        Noisy observations of the same flow
    cfg : LossConfig
        Huber delta of the likelihood
    steps : int
        Gradient-descent iterations
    lr : float
        Per-pixel step size; mean steps are preconditioned by 2 * variance
    init : GaussianFlow, optional
        Starting point; defaults to the observation average with unit variance

    Returns:
    --------
    Tuple[GaussianFlow, List[float]]
        Fitted flow and the objective before each step plus the final value
    """
    if not observations:
        raise ContractViolation("at least one observation is required")
    if steps < 0 or lr <= 0:
        raise ContractViolation("steps must be >= 0 and lr > 0")
    shape = observations[0].shape
    for obs in observations:
        require_same_shape("observation", obs.shape, "first observation", shape)

    if init is None:
        mean = np.mean([obs.data.astype(np.float64) for obs in observations], axis=0)
        log_var = np.zeros(shape)
    else:
        require_same_shape("init", init.shape, "observation", shape)
        mean = init.mean.data.astype(np.float64)
        log_var = init.log_variance.data.astype(np.float64)

    visible = ValidityMask.all_valid(*shape)
    pixels = float(np.prod(shape))
    history: List[float] = []
    g = GaussianFlow(FlowField(mean), ScalarField(log_var))
    for step in range(steps):
        loss, d_mean, d_logvar = _mean_objective(g, observations, visible, cfg)
        history.append(loss)
        # undo the pixel-mean reduction so each pixel takes its own step
        variance = g.variance
        mean = g.mean.data.astype(np.float64) - lr * pixels * d_mean * (2.0 * variance)[..., None]
        log_var = g.log_variance.data.astype(np.float64) - lr * pixels * d_logvar
        g = GaussianFlow(FlowField(mean), ScalarField(log_var))
    history.append(_mean_objective(g, observations, visible, cfg)[0])
    logger.debug(f"Fitted Gaussian flow in {steps} steps: {history[0]:.4f} -> {history[-1]:.4f}")
    return g, history
