"""
Alignment providers for the self-training loop

Each provider warps the teacher's reference prediction onto the target grid
and returns the warp confidence:
- OracleAlignment: ground-truth homography flow with injected heteroscedastic noise
- FittedFlowAlignment: a GaussianFlow fitted to noisy flow observations
- StoredFlowAlignment: replays GaussianFlows supplied by the caller
- IdentityAlignment: no alignment at all (zero flow)

test_time_refine applies one refinement pass to predictions of a trained model.
"""

import logging
from dataclasses import dataclass
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np

from config.config import ALIGNMENT_CONFIG, LOG_VARIANCE_RANGE
from tools.fields import ConfidenceMap, FlowField, LabelMap, ProbMap, ScalarField, ValidityMask
from tools.flow_fitting import fit_gaussian_flow
from tools.grid import homography_to_flow, invert_homography, warp
from tools.losses import LossConfig
from tools.refine import ClassTaxonomy, RefineConfig, pseudo_label, refine, trust_score
from tools.scenes import SceneTriplet
from tools.uncertainty import GaussianFlow, confidence_from_cycle, confidence_map
from utils.helper import AlignmentError, ContractViolation, DegenerateHomographyError

logger = logging.getLogger(__name__)

ALIGNMENT_MODES = ("oracle", "fitted", "identity")
CONFIDENCE_SOURCES = ("direct", "cycle")


@dataclass(frozen=True)
class AlignmentConfig:
    """Provider choice, injected flow noise and confidence settings"""

    mode: str = ALIGNMENT_CONFIG["mode"]
    flow_noise: float = ALIGNMENT_CONFIG["flow_noise"]
    noise_spread: float = ALIGNMENT_CONFIG["noise_spread"]
    radius: float = ALIGNMENT_CONFIG["radius"]
    confidence_from: str = ALIGNMENT_CONFIG["confidence_from"]
    fit_observations: int = ALIGNMENT_CONFIG["fit_observations"]
    fit_steps: int = ALIGNMENT_CONFIG["fit_steps"]
    fit_learning_rate: float = ALIGNMENT_CONFIG["fit_learning_rate"]

    def __post_init__(self):
        if self.mode not in ALIGNMENT_MODES:
            raise ContractViolation(f"unknown alignment mode '{self.mode}', expected one of {ALIGNMENT_MODES}")
        if self.confidence_from not in CONFIDENCE_SOURCES:
            raise ContractViolation(f"confidence_from must be one of {CONFIDENCE_SOURCES}")
        if self.flow_noise < 0 or self.noise_spread < 1.0:
            raise ContractViolation("flow_noise must be >= 0 and noise_spread >= 1")
        if self.radius <= 0:
            raise ContractViolation("radius must be positive")
        if self.fit_observations < 1 or self.fit_steps < 0 or self.fit_learning_rate <= 0:
            raise ContractViolation("invalid flow fitting settings")


class AlignmentResult(NamedTuple):
    aligned: ProbMap
    confidence: ConfidenceMap
    validity: ValidityMask
    flow: GaussianFlow


def apply_alignment(q_r: ProbMap, g_tr: GaussianFlow, radius: float = 1.0,
                    g_rt: Optional[GaussianFlow] = None) -> AlignmentResult:
    """
    Warp a reference prediction with a target->reference GaussianFlow

    Pixels invalid in either the flow or the warp hold an all-zero
    probability vector and zero confidence. Passing g_rt switches the
    confidence to the cycle variance.
    """
    aligned, in_bounds = warp(q_r, g_tr.mean)
    validity = in_bounds & g_tr.validity
    data = aligned.data.copy()
    data[~validity.data] = 0.0
    g = GaussianFlow(g_tr.mean, g_tr.log_variance, validity)
    confidence = confidence_map(g, radius) if g_rt is None else confidence_from_cycle(g, g_rt, radius)
    return AlignmentResult(ProbMap(data), confidence, validity, g)


def _noise_std(rng: np.random.Generator, shape, noise: float, spread: float) -> np.ndarray:
    if noise == 0.0:
        return np.zeros(shape)
    return np.exp(rng.uniform(np.log(noise / spread), np.log(noise * spread), size=shape))


def _noisy_flow(flow: FlowField, std: np.ndarray, rng: np.random.Generator) -> FlowField:
    noise = rng.normal(size=flow.data.shape) * std[..., None]
    return FlowField(flow.data.astype(np.float64) + noise)


def _gaussian_with_std(mean: FlowField, std: np.ndarray) -> GaussianFlow:
    lo, _ = LOG_VARIANCE_RANGE
    return GaussianFlow.from_variance(mean, np.maximum(std ** 2, np.exp(lo)))


def ground_truth_flows(triplet: SceneTriplet):
    """(target->reference, reference->target) flows from the true homography"""
    h, w = triplet.shape
    try:
        ref_to_target = triplet.true_ref_to_target_homography
        return (homography_to_flow(invert_homography(ref_to_target), h, w),
                homography_to_flow(ref_to_target, h, w))
    except DegenerateHomographyError as e:
        raise AlignmentError(f"triplet {triplet.seed}: {e}")


class AlignmentProvider:
    """Callable align(q_r, triplet, rng) -> AlignmentResult"""

    def __init__(self, cfg: AlignmentConfig = AlignmentConfig()):
        self.cfg = cfg

    def flows(self, triplet: SceneTriplet, rng: np.random.Generator):
        """(g_tr, g_rt or None) for a triplet"""
        raise NotImplementedError

    def __call__(self, q_r: ProbMap, triplet: SceneTriplet, rng: np.random.Generator) -> AlignmentResult:
        g_tr, g_rt = self.flows(triplet, rng)
        result = apply_alignment(q_r, g_tr, self.cfg.radius, g_rt if self.cfg.confidence_from == "cycle" else None)
        if not result.validity.data.any():
            raise AlignmentError(f"triplet {triplet.seed}: warp leaves no valid pixel")
        return result


class OracleAlignment(AlignmentProvider):
    """
    Ground-truth flow plus heteroscedastic Gaussian noise

    Per-pixel noise std is drawn log-uniformly in
    [flow_noise / spread, flow_noise * spread] and the log-variance is set
    to log(std^2), so the confidence map is calibrated.
    """

    def flows(self, triplet, rng):
        gt_tr, gt_rt = ground_truth_flows(triplet)
        std = _noise_std(rng, triplet.shape, self.cfg.flow_noise, self.cfg.noise_spread)
        g_tr = _gaussian_with_std(_noisy_flow(gt_tr, std, rng), std)
        g_rt = None
        if self.cfg.confidence_from == "cycle":
            back_std = _noise_std(rng, triplet.shape, self.cfg.flow_noise, self.cfg.noise_spread)
            g_rt = _gaussian_with_std(_noisy_flow(gt_rt, back_std, rng), back_std)
        return g_tr, g_rt


class FittedFlowAlignment(AlignmentProvider):
    """
    GaussianFlow fitted with the probabilistic loss to noisy observations

    Observations are drawn from a generator seeded by (base_seed, triplet
    seed), so the fit is independent of the training loop's random stream.
    Fits are cached per triplet seed.
    """

    def __init__(self, cfg: AlignmentConfig = AlignmentConfig(), loss_cfg: LossConfig = LossConfig(),
                 base_seed: int = 0):
        super().__init__(cfg)
        self.loss_cfg = loss_cfg
        self.base_seed = base_seed
        self._cache: Dict[Tuple[int, str], GaussianFlow] = {}

    def _fit(self, truth: FlowField, rng: np.random.Generator) -> GaussianFlow:
        std = _noise_std(rng, truth.shape, self.cfg.flow_noise, self.cfg.noise_spread)
        observations = [_noisy_flow(truth, std, rng) for _ in range(self.cfg.fit_observations)]
        fitted, history = fit_gaussian_flow(observations, self.loss_cfg, self.cfg.fit_steps,
                                            self.cfg.fit_learning_rate)
        logger.debug(f"Flow fit objective {history[0]:.4f} -> {history[-1]:.4f}")
        return fitted

    def flows(self, triplet, rng):
        if (triplet.seed, "tr") not in self._cache:
            fit_rng = np.random.default_rng([self.base_seed, triplet.seed])
            gt_tr, gt_rt = ground_truth_flows(triplet)
            self._cache[(triplet.seed, "tr")] = self._fit(gt_tr, fit_rng)
            if self.cfg.confidence_from == "cycle":
                self._cache[(triplet.seed, "rt")] = self._fit(gt_rt, fit_rng)
        return self._cache[(triplet.seed, "tr")], self._cache.get((triplet.seed, "rt"))


class StoredFlowAlignment(AlignmentProvider):
    """Replays target->reference GaussianFlows keyed by triplet seed"""

    def __init__(self, flows: Dict[int, GaussianFlow], cfg: AlignmentConfig = AlignmentConfig()):
        super().__init__(cfg)
        self._flows = dict(flows)

    def flows(self, triplet, rng):
        if triplet.seed not in self._flows:
            raise AlignmentError(f"no stored flow for triplet {triplet.seed}")
        return self._flows[triplet.seed], None


class IdentityAlignment(AlignmentProvider):
    """Zero flow with the smallest variance: the reference is used as is"""

    def flows(self, triplet, rng):
        h, w = triplet.shape
        lo, _ = LOG_VARIANCE_RANGE
        return GaussianFlow(FlowField.zeros(h, w), ScalarField.full(h, w, lo)), None


def build_alignment(cfg: AlignmentConfig = AlignmentConfig(), loss_cfg: LossConfig = LossConfig(),
                    base_seed: int = 0) -> AlignmentProvider:
    if cfg.mode == "oracle":
        return OracleAlignment(cfg)
    if cfg.mode == "fitted":
        return FittedFlowAlignment(cfg, loss_cfg, base_seed)
    return IdentityAlignment(cfg)


class RefinementOutput(NamedTuple):
    refined: np.ndarray
    labels: LabelMap
    trust: float
    alignment: AlignmentResult


def test_time_refine(q_t: ProbMap, q_r: ProbMap, g_tr: GaussianFlow, tax: ClassTaxonomy,
                     cfg: RefineConfig = RefineConfig(), radius: float = 1.0,
                     threshold: Optional[float] = None) -> RefinementOutput:
    """
    One refinement pass for an already trained model

    Parameters:
    -----------
    q_t, q_r : ProbMap
        Model predictions for the target and the reference image
    g_tr : GaussianFlow
        Target->reference flow with its uncertainty
    tax : ClassTaxonomy
        Class roles
    cfg : RefineConfig
        Refinement switches
    radius : float
        Confidence radius in pixels
    threshold : float, optional
        Pseudo-label confidence threshold

    Returns:
    --------
    RefinementOutput
        Refined scores, pseudo-labels, trust score and the alignment
    """
    aligned = apply_alignment(q_r, g_tr, radius)
    result = refine(q_t, aligned.aligned, aligned.confidence, tax, cfg)
    trust = trust_score(q_t, cfg.gamma)
    return RefinementOutput(result.refined, pseudo_label(result.refined, threshold), trust, aligned)
