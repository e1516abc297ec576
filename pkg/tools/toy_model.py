"""
Linear-softmax segmenter used by the self-training loop

Per-pixel features are the image channels, the normalized (x, y) position
and the 3x3 local mean of the channel average. The model is a linear map to
class logits followed by a softmax, so cross-entropy gradients are closed form.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import uniform_filter

from config.config import IGNORE_INDEX
from tools.fields import ImageField, LabelMap, ProbMap
from utils.helper import ContractViolation, require_same_shape

logger = logging.getLogger(__name__)

EXTRA_FEATURES = 3


def feature_dim(channels: int) -> int:
    return channels + EXTRA_FEATURES


def extract_features(image: ImageField) -> np.ndarray:
    """
    Per-pixel feature matrix

    Parameters:
    -----------
    image : ImageField
        Input image with any number of channels

    Returns:
    --------
    np.ndarray
        (h * w, channels + 3) float64, rows in row-major pixel order
    """
    data = image.data.astype(np.float64)
    h, w = image.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    x_norm = xs / (w - 1) if w > 1 else np.zeros_like(xs)
    y_norm = ys / (h - 1) if h > 1 else np.zeros_like(ys)
    local_mean = uniform_filter(data.mean(axis=2), size=3, mode="nearest")
    stacked = np.concatenate([data, x_norm[..., None], y_norm[..., None], local_mean[..., None]], axis=2)
    return stacked.reshape(h * w, -1)


@dataclass(frozen=True)
class ToyModelParams:
    """Weight (feature_dim, c) and bias (c,), float64"""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        weight = np.array(self.weight, dtype=np.float64)
        bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if weight.ndim != 2 or weight.shape[1] != bias.shape[0]:
            raise ContractViolation(f"weight {weight.shape} and bias {bias.shape} disagree")
        if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
            raise ContractViolation("model parameters must be finite")
        weight.flags.writeable = False
        bias.flags.writeable = False
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    @property
    def feature_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def classes(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def zeros(cls, feature_dim: int, classes: int) -> "ToyModelParams":
        return cls(np.zeros((feature_dim, classes)), np.zeros(classes))

    @classmethod
    def random(cls, feature_dim: int, classes: int, rng: np.random.Generator,
               scale: float = 0.01) -> "ToyModelParams":
        return cls(rng.normal(0.0, scale, size=(feature_dim, classes)), np.zeros(classes))

    def axpy(self, a: float, other: "ToyModelParams") -> "ToyModelParams":
        """self + a * other"""
        return ToyModelParams(self.weight + a * other.weight, self.bias + a * other.bias)

    def __add__(self, other: "ToyModelParams") -> "ToyModelParams":
        return ToyModelParams(self.weight + other.weight, self.bias + other.bias)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.weight ** 2) + np.sum(self.bias ** 2)))

    def equals(self, other: "ToyModelParams") -> bool:
        return np.array_equal(self.weight, other.weight) and np.array_equal(self.bias, other.bias)


def logits(params: ToyModelParams, features: np.ndarray) -> np.ndarray:
    if features.shape[1] != params.feature_dim:
        raise ContractViolation(f"features have {features.shape[1]} columns, model expects {params.feature_dim}")
    return features @ params.weight + params.bias


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(params: ToyModelParams, image: ImageField, features: Optional[np.ndarray] = None) -> ProbMap:
    """
    Per-pixel class probabilities

    Parameters:
    -----------
    params : ToyModelParams
        Model weights
    image : ImageField
        Input image; its channel count must match the model
    features : np.ndarray, optional
        Precomputed extract_features(image)

    Returns:
    --------
    ProbMap
    """
    if features is None:
        features = extract_features(image)
    h, w = image.shape
    return ProbMap(softmax(logits(params, features)).reshape(h, w, params.classes))


def cross_entropy_logit_gradients(z: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Pixel-mean cross-entropy and its gradient w.r.t. the logits

    labels equal to IGNORE_INDEX are excluded from the mean. With no
    labelled pixel the loss is 0 and the gradient is zero.
    """
    keep = labels != IGNORE_INDEX
    n = int(keep.sum())
    if n == 0:
        return 0.0, np.zeros_like(z)
    shifted = z - z.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.nonzero(keep)[0]
    loss = -float(np.sum(log_p[rows, labels[rows]])) / n
    grad = np.exp(log_p)
    grad[rows, labels[rows]] -= 1.0
    grad[~keep] = 0.0
    return loss, grad / n


def cross_entropy_gradients(params: ToyModelParams, features: np.ndarray,
                            labels: LabelMap) -> Tuple[float, ToyModelParams]:
    """Loss and parameter gradients of the pixel-mean cross-entropy"""
    flat = labels.data.reshape(-1)
    if flat.shape[0] != features.shape[0]:
        raise ContractViolation(f"{flat.shape[0]} labels for {features.shape[0]} feature rows")
    loss, d_logits = cross_entropy_logit_gradients(logits(params, features), flat)
    return loss, ToyModelParams(features.T @ d_logits, d_logits.sum(axis=0))


def supervised_step(params: ToyModelParams, image: ImageField, labels: LabelMap, lr: float,
                    features: Optional[np.ndarray] = None) -> ToyModelParams:
    """
    One gradient-descent step on the cross-entropy

    An all-IGNORE label map leaves the parameters unchanged.
    """
    if lr < 0:
        raise ContractViolation(f"learning rate must be >= 0, got {lr}")
    require_same_shape("image", image.shape, "labels", labels.shape)
    if features is None:
        features = extract_features(image)
    _, grads = cross_entropy_gradients(params, features, labels)
    return params.axpy(-lr, grads)


def ema_update(teacher: ToyModelParams, student: ToyModelParams, m: float) -> ToyModelParams:
    """teacher <- m * teacher + (1 - m) * student, elementwise"""
    if not 0.0 <= m <= 1.0:
        raise ContractViolation(f"EMA momentum must lie in [0, 1], got {m}")
    if teacher.weight.shape != student.weight.shape:
        raise ContractViolation(f"teacher {teacher.weight.shape} and student {student.weight.shape} disagree")
    return ToyModelParams(m * teacher.weight + (1.0 - m) * student.weight,
                          m * teacher.bias + (1.0 - m) * student.bias)
