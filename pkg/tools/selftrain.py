"""
Self-training with adaptive pseudo-label refinement

This module runs the mean-teacher adaptation loop on a pool of scene triplets:
- Every iteration: EMA teacher update, supervised loss on the source image
- Target branch: teacher predicts target and reference, the reference
  prediction is aligned and fused into the target pseudo-labels
- Reference branch: teacher pseudo-labels the reference image directly
- The student takes one gradient step on the summed loss

Teacher outputs and alignment results enter the student update as constants.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config.config import TRAIN_CONFIG
from tools.alignment import AlignmentProvider, AlignmentResult
from tools.fields import LabelMap, ProbMap
from tools.metrics import ConfusionMatrix, miou
from tools.refine import ClassTaxonomy, RefineConfig, diversity_index, pseudo_label, refine, trust_score
from tools.scenes import SceneTriplet
from tools.toy_model import (
    ToyModelParams,
    cross_entropy_gradients,
    ema_update,
    extract_features,
    feature_dim,
    forward,
)
from utils.helper import AlignmentError, ContractViolation, EmptyInputError

logger = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "iteration",
    "branch",
    "loss_source",
    "loss_adapt",
    "loss_total",
    "trust",
    "diversity",
    "align_failed",
    "target_miou",
]


@dataclass(frozen=True)
class TrainConfig:
    """
    Self-training settings

    bypass_refine skips alignment and refinement entirely: target
    pseudo-labels come straight from the teacher's target prediction.
    """

    iterations: int = TRAIN_CONFIG["iterations"]
    learning_rate: float = TRAIN_CONFIG["learning_rate"]
    ema_momentum: float = TRAIN_CONFIG["ema_momentum"]
    rng_seed: int = TRAIN_CONFIG["rng_seed"]
    refine: RefineConfig = field(default_factory=RefineConfig)
    reference_adaptation: bool = TRAIN_CONFIG["reference_adaptation"]
    pseudo_threshold: Optional[float] = TRAIN_CONFIG["pseudo_threshold"]
    eval_interval: int = TRAIN_CONFIG["eval_interval"]
    bypass_refine: bool = False
    record_history: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ContractViolation(f"iterations must be >= 1, got {self.iterations}")
        if self.learning_rate <= 0:
            raise ContractViolation(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.ema_momentum <= 1.0:
            raise ContractViolation(f"ema_momentum must lie in [0, 1], got {self.ema_momentum}")
        if self.eval_interval < 1:
            raise ContractViolation("eval_interval must be >= 1")
        if self.pseudo_threshold is not None and not 0.0 <= self.pseudo_threshold <= 1.0:
            raise ContractViolation("pseudo_threshold must lie in [0, 1]")


class IterationState(NamedTuple):
    """Student used for the teacher update of an iteration, and the teacher after it"""

    student: ToyModelParams
    teacher: ToyModelParams


@dataclass
class TrainingResult:
    student: ToyModelParams
    teacher: ToyModelParams
    metrics: pd.DataFrame
    history: Optional[List[IterationState]] = None

    def branch_counts(self) -> Dict[str, int]:
        return self.metrics["branch"].value_counts().to_dict()


class _FeatureCache:
    """extract_features per (triplet seed, image role), computed once"""

    def __init__(self):
        self._cache: Dict[Tuple[int, str], np.ndarray] = {}

    def get(self, triplet: SceneTriplet, role: str) -> np.ndarray:
        key = (triplet.seed, role)
        if key not in self._cache:
            self._cache[key] = extract_features(getattr(triplet, role))
        return self._cache[key]


def adaptation_gradients(student: ToyModelParams, features: np.ndarray,
                         pseudo: LabelMap) -> Tuple[float, ToyModelParams]:
    """
    Student loss and gradients against fixed pseudo-labels

    pseudo is a constant: nothing upstream of it (teacher, alignment,
    refinement) receives a gradient.
    """
    return cross_entropy_gradients(student, features, pseudo)


def target_pseudo_labels(q_t: ProbMap, q_r: ProbMap, triplet: SceneTriplet, align: AlignmentProvider,
                         rng: np.random.Generator, tax: ClassTaxonomy,
                         cfg: TrainConfig) -> Tuple[LabelMap, bool]:
    """
    Refined target pseudo-labels and whether alignment failed

    An alignment failure falls back to alpha = 0 (the teacher's own target
    prediction).
    """
    if cfg.bypass_refine:
        return pseudo_label(q_t, cfg.pseudo_threshold), False
    try:
        aligned: AlignmentResult = align(q_r, triplet, rng)
    except AlignmentError as e:
        logger.warning(f"Alignment failed, skipping refinement for this sample: {e}")
        return pseudo_label(q_t, cfg.pseudo_threshold), True
    result = refine(q_t, aligned.aligned, aligned.confidence, tax, cfg.refine)
    return pseudo_label(result.refined, cfg.pseudo_threshold), False


def evaluate_target(params: ToyModelParams, pool: Sequence[SceneTriplet],
                    features: Optional[_FeatureCache] = None) -> Tuple[ConfusionMatrix, float]:
    """
    Target-domain confusion matrix and prediction diversity

    Parameters:
    -----------
    params : ToyModelParams
        Model to evaluate
    pool : Sequence[SceneTriplet]
        Triplets whose hidden target labels serve as ground truth

    Returns:
    --------
    Tuple[ConfusionMatrix, float]
        Accumulated confusion matrix and the diversity index of all predictions
    """
    if not pool:
        raise EmptyInputError("evaluation pool is empty")
    features = features or _FeatureCache()
    cm = ConfusionMatrix(params.classes)
    predictions = []
    for triplet in pool:
        pred = pseudo_label(forward(params, triplet.target, features.get(triplet, "target")))
        cm.add(pred, triplet.target_labels)
        predictions.append(pred.data)
    diversity = diversity_index(LabelMap(np.concatenate(predictions, axis=0), params.classes))
    return cm, diversity


def _safe_diversity(labels: LabelMap) -> float:
    try:
        return diversity_index(labels)
    except EmptyInputError:
        return float("nan")


def refign_train(pool: Sequence[SceneTriplet], cfg: TrainConfig, align: AlignmentProvider,
                 tax: Optional[ClassTaxonomy] = None,
                 init: Optional[ToyModelParams] = None) -> TrainingResult:
    """
    Mean-teacher self-training with reference-guided pseudo-label refinement

    Parameters:
    -----------
    pool : Sequence[SceneTriplet]
        Data stream; each iteration draws one triplet uniformly
    cfg : TrainConfig
        Loop settings, including the refinement switches
    align : AlignmentProvider
        Produces the aligned reference prediction and its confidence
    tax : ClassTaxonomy, optional
        Class roles; defaults to the built-in taxonomy
    init : ToyModelParams, optional
        Initial student; defaults to all-zero weights

    Returns:
    --------
    TrainingResult
        Final student and teacher, the per-iteration metrics log and
        optionally the parameter history
    """
    if not pool:
        raise EmptyInputError("training pool is empty")
    tax = tax or ClassTaxonomy.default()
    channels = pool[0].target.channels
    student = init or ToyModelParams.zeros(feature_dim(channels), tax.class_count)
    if student.classes != tax.class_count:
        raise ContractViolation(f"model has {student.classes} classes, taxonomy {tax.class_count}")

    # loop and alignment draw from separate streams so bypassing refinement
    # leaves the triplet and branch sequence unchanged
    loop_seed, align_seed = np.random.SeedSequence(cfg.rng_seed).spawn(2)
    loop_rng = np.random.default_rng(loop_seed)
    align_rng = np.random.default_rng(align_seed)

    features = _FeatureCache()
    teacher = student
    rows = []
    history: Optional[List[IterationState]] = [] if cfg.record_history else None
    logger.info(f"Starting self-training: {cfg.iterations} iterations over {len(pool)} triplets")

    for i in range(cfg.iterations):
        teacher = student if i == 0 else ema_update(teacher, student, cfg.ema_momentum)
        if history is not None:
            history.append(IterationState(student, teacher))

        triplet = pool[int(loop_rng.integers(len(pool)))]
        coin = loop_rng.random()

        loss_source, grads = cross_entropy_gradients(student, features.get(triplet, "source"),
                                                     triplet.source_labels)

        trust = float("nan")
        align_failed = False
        if coin < 0.5 or not cfg.reference_adaptation:
            branch = "target"
            q_t = forward(teacher, triplet.target, features.get(triplet, "target"))
            q_r = forward(teacher, triplet.reference, features.get(triplet, "reference"))
            pseudo, align_failed = target_pseudo_labels(q_t, q_r, triplet, align, align_rng, tax, cfg)
            trust = trust_score(q_t, cfg.refine.gamma)
            adapt_features = features.get(triplet, "target")
        else:
            branch = "reference"
            q_r = forward(teacher, triplet.reference, features.get(triplet, "reference"))
            pseudo = pseudo_label(q_r, cfg.pseudo_threshold)
            adapt_features = features.get(triplet, "reference")

        loss_adapt, adapt_grads = adaptation_gradients(student, adapt_features, pseudo)
        student = student.axpy(-cfg.learning_rate, grads + adapt_grads)

        target_miou = float("nan")
        if (i + 1) % cfg.eval_interval == 0 or i == cfg.iterations - 1:
            cm, _ = evaluate_target(student, pool, features)
            target_miou = miou(cm)[1]
            logger.info(f"Iteration {i + 1}/{cfg.iterations}: target mIoU {target_miou:.4f}")

        rows.append({
            "iteration": i,
            "branch": branch,
            "loss_source": loss_source,
            "loss_adapt": loss_adapt,
            "loss_total": loss_source + loss_adapt,
            "trust": trust,
            "diversity": _safe_diversity(pseudo),
            "align_failed": int(align_failed),
            "target_miou": target_miou,
        })
        logger.debug(f"Iteration {i}: branch={branch} loss={loss_source + loss_adapt:.5f} trust={trust:.4f}")

    metrics = pd.DataFrame(rows, columns=METRIC_COLUMNS)
    return TrainingResult(student=student, teacher=teacher, metrics=metrics, history=history)


def replay_teacher(history: Sequence[IterationState], m: float) -> List[ToyModelParams]:
    """Teacher sequence rebuilt from the recorded students by the EMA recursion"""
    teachers: List[ToyModelParams] = []
    for i, state in enumerate(history):
        teachers.append(state.student if i == 0 else ema_update(teachers[-1], state.student, m))
    return teachers


def write_metrics_csv(metrics: pd.DataFrame, path) -> None:
    metrics.to_csv(path, index=False, lineterminator="\n")
