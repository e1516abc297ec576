"""
Pseudo-label refinement for Refign

This module fuses target predictions with aligned reference predictions:
- Trust score from the mean normalized entropy of the target prediction
- Large-static-class mask restricting aggressive mixing
- Adaptive element-wise mixing weights and the convex fusion itself
- Pseudo-label extraction and the prediction diversity index

Refined maps are not renormalized: argmax consumes the raw scores.
"""

import logging
from dataclasses import dataclass, field
from typing import FrozenSet, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.special import xlogy

from config.config import DEFAULT_TAXONOMY, IGNORE_INDEX, REFINE_CONFIG
from tools.fields import LabelMap, ProbMap, ScalarField
from utils.helper import (
    ContractViolation,
    DegenerateTaxonomyError,
    EmptyInputError,
    require_same_shape,
)

logger = logging.getLogger(__name__)

Scores = Union[ProbMap, np.ndarray]


@dataclass(frozen=True)
class ClassTaxonomy:
    """Partition of the classes into large static, small static and dynamic"""

    class_count: int
    large_static: FrozenSet[int]
    small_static: FrozenSet[int] = frozenset()
    dynamic: FrozenSet[int] = frozenset()

    def __post_init__(self):
        sets = [frozenset(self.large_static), frozenset(self.small_static), frozenset(self.dynamic)]
        object.__setattr__(self, "large_static", sets[0])
        object.__setattr__(self, "small_static", sets[1])
        object.__setattr__(self, "dynamic", sets[2])
        union = sets[0] | sets[1] | sets[2]
        if sum(len(s) for s in sets) != len(union) or union != set(range(self.class_count)):
            raise DegenerateTaxonomyError(
                f"class roles must partition [0, {self.class_count}), got {sorted(sets[0])}, "
                f"{sorted(sets[1])}, {sorted(sets[2])}"
            )

    @classmethod
    def default(cls) -> "ClassTaxonomy":
        return cls(DEFAULT_TAXONOMY["class_count"], frozenset(DEFAULT_TAXONOMY["large_static"]),
                   frozenset(DEFAULT_TAXONOMY["small_static"]), frozenset(DEFAULT_TAXONOMY["dynamic"]))

    def large_static_channels(self) -> np.ndarray:
        channels = np.zeros(self.class_count, dtype=bool)
        channels[sorted(self.large_static)] = True
        return channels


@dataclass(frozen=True)
class RefineConfig:
    """
    Switches of the adaptive refinement

    fixed_alpha replaces the whole mixing weight (naive averaging baseline)
    everywhere the aligned reference is non-empty; empty reference pixels
    keep alpha = 0. fixed_confidence replaces only the warp confidence map.
    """

    gamma: float = REFINE_CONFIG["gamma"]
    enable_mask_m: bool = REFINE_CONFIG["enable_mask_m"]
    enable_trust: bool = REFINE_CONFIG["enable_trust"]
    fixed_alpha: Optional[float] = REFINE_CONFIG["fixed_alpha"]
    fixed_confidence: Optional[float] = REFINE_CONFIG["fixed_confidence"]

    def __post_init__(self):
        if self.gamma <= 0:
            raise ContractViolation(f"gamma must be positive, got {self.gamma}")
        for name in ("fixed_alpha", "fixed_confidence"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ContractViolation(f"{name} must lie in [0, 1], got {value}")


class RefineResult(NamedTuple):
    refined: np.ndarray
    alpha: np.ndarray


def _scores(q: Scores) -> np.ndarray:
    data = q.data if isinstance(q, ProbMap) else np.asarray(q)
    if data.ndim != 3:
        raise ContractViolation(f"expected (h, w, c) scores, got shape {data.shape}")
    return data


def normalized_entropy(q: Scores) -> np.ndarray:
    """Per-pixel entropy divided by ln c (natural log, 0 ln 0 = 0)"""
    data = _scores(q).astype(np.float64)
    c = data.shape[2]
    if c < 2:
        raise DegenerateTaxonomyError("entropy normalization needs at least two classes")
    return -xlogy(data, data).sum(axis=2) / np.log(c)


def trust_score(q_t: ProbMap, gamma: float = REFINE_CONFIG["gamma"],
                ignore: Optional[np.ndarray] = None) -> float:
    """
    Trust score s = (mean normalized entropy)^gamma

    Parameters:
    -----------
    q_t : ProbMap
        Target prediction
    gamma : float
        Exponent, > 0
    ignore : np.ndarray, optional
        Boolean (h, w) array of pixels excluded from the mean

    Returns:
    --------
    float
        Score in [0, 1]; 1 for maximal uncertainty
    """
    if gamma <= 0:
        raise ContractViolation(f"gamma must be positive, got {gamma}")
    entropy = normalized_entropy(q_t)
    keep = np.ones(entropy.shape, dtype=bool) if ignore is None else ~np.asarray(ignore, dtype=bool)
    if not keep.any():
        raise EmptyInputError("every pixel is ignored")
    mean_entropy = float(np.clip(np.mean(entropy[keep]), 0.0, 1.0))
    return mean_entropy ** gamma


def static_mask(z_t: LabelMap, z_r: LabelMap, tax: ClassTaxonomy) -> np.ndarray:
    """
    Large-static mixing mask M with shape (h, w, c)

    m[i, j, k] = 1 iff k, z_t[i, j] and z_r[i, j] are all large static
    classes. IGNORE pixels give 0 in every channel.
    """
    require_same_shape("z_t", z_t.shape, "z_r", z_r.shape)
    large = np.array(sorted(tax.large_static), dtype=np.int64)
    pixel_ok = np.isin(z_t.data, large) & np.isin(z_r.data, large)
    return pixel_ok[..., None] & tax.large_static_channels()[None, None, :]


def convex_fusion(q_t: np.ndarray, q_a: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """(1 - alpha) * q_t + alpha * q_a, element-wise"""
    return (1.0 - alpha) * q_t + alpha * q_a


def pseudo_label(q: Scores, threshold: Optional[float] = None) -> LabelMap:
    """
    Argmax pseudo-labels; the lowest class index wins ties

    Pixels whose maximum score is below threshold become IGNORE.
    """
    data = _scores(q)
    if not np.all(np.isfinite(data)):
        raise ContractViolation("scores must be finite")
    labels = np.argmax(data, axis=2)
    if threshold is not None:
        labels = np.where(data.max(axis=2) < threshold, IGNORE_INDEX, labels)
    return LabelMap(labels, data.shape[2])


def refine(q_t: ProbMap, q_r_aligned: ProbMap, p_r: ScalarField,
           tax: ClassTaxonomy, cfg: RefineConfig = RefineConfig()) -> RefineResult:
    """
    Adaptive pseudo-label refinement

    alpha = s(q_t) * max(P_R, M), refined = (1 - alpha) q_t + alpha q_a.
    Pixels where the aligned reference is empty (warped out of bounds) get
    alpha = 0 in every mode.

    Parameters:
    -----------
    q_t : ProbMap
        Target prediction
    q_r_aligned : ProbMap
        Reference prediction warped onto the target grid
    p_r : ScalarField
        Warp confidence in [0, 1], zero on invalid warp regions
    tax : ClassTaxonomy
        Class roles; the large static set drives the mask M
    cfg : RefineConfig
        Component switches

    Returns:
    --------
    RefineResult
        Refined scores and the mixing weights, both (h, w, c) float32
    """
    require_same_shape("q_t", q_t.shape, "q_r_aligned", q_r_aligned.shape)
    require_same_shape("q_t", q_t.shape, "p_r", p_r.shape)
    if q_t.classes != q_r_aligned.classes or q_t.classes != tax.class_count:
        raise ContractViolation(
            f"class count mismatch: q_t {q_t.classes}, q_r {q_r_aligned.classes}, taxonomy {tax.class_count}"
        )
    confidence = p_r.data.astype(np.float64)
    if np.any(confidence < 0.0) or np.any(confidence > 1.0):
        raise ContractViolation("confidence map must lie in [0, 1]")

    h, w = q_t.shape
    c = q_t.classes
    no_reference = q_r_aligned.empty_pixels()

    if cfg.fixed_alpha is not None:
        alpha = np.full((h, w, c), cfg.fixed_alpha, dtype=np.float64)
    else:
        if cfg.fixed_confidence is not None:
            confidence = np.full((h, w), cfg.fixed_confidence, dtype=np.float64)
        weight = np.repeat(confidence[..., None], c, axis=2)
        if cfg.enable_mask_m:
            z_t = pseudo_label(q_t)
            z_r = LabelMap(np.where(no_reference, IGNORE_INDEX, pseudo_label(q_r_aligned).data), c)
            weight = np.maximum(weight, static_mask(z_t, z_r, tax).astype(np.float64))
        s = trust_score(q_t, cfg.gamma) if cfg.enable_trust else 1.0
        alpha = s * weight

    alpha[no_reference] = 0.0
    refined = convex_fusion(q_t.data.astype(np.float64), q_r_aligned.data.astype(np.float64), alpha)
    return RefineResult(refined.astype(np.float32), alpha.astype(np.float32))


def diversity_index(labels: LabelMap, c: Optional[int] = None) -> float:
    """
    Normalized entropy of the predicted class histogram

    Parameters:
    -----------
    labels : LabelMap
        Predictions; IGNORE pixels are excluded
    c : int, optional
        Class count, defaults to labels.classes

    Returns:
    --------
    float
        0 for a single class, 1 for a perfectly balanced histogram
    """
    c = labels.classes if c is None else c
    if c < 2:
        raise DegenerateTaxonomyError("diversity needs at least two classes")
    kept = labels.data[~labels.ignored()]
    if kept.size == 0:
        raise EmptyInputError("no labelled pixels to build a histogram from")
    freq = np.bincount(kept, minlength=c).astype(np.float64) / kept.size
    return float(-xlogy(freq, freq).sum() / np.log(c))


def taxonomy_from_lists(class_count: int, large: Sequence[int], small: Sequence[int],
                        dynamic: Sequence[int]) -> ClassTaxonomy:
    return ClassTaxonomy(class_count, frozenset(large), frozenset(small), frozenset(dynamic))
