"""
Dense field containers for Refign

This module holds the immutable grid types every other tool passes around:
- FlowField, ScalarField, ConfidenceMap, ImageField, ValidityMask (per-pixel grids)
- ProbMap and LabelMap (segmentation outputs)
- Homography (3x3 projective transform)

All containers wrap numpy arrays that are made read-only on construction.
Pixel (0, 0) is the centre of the top-left pixel; flows are (u, v) = (dx, dy).
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from config.config import IGNORE_INDEX
from utils.helper import ContractViolation, DegenerateHomographyError

logger = logging.getLogger(__name__)

PROB_SUM_TOLERANCE = 1e-5


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


def _require_finite(name: str, data: np.ndarray) -> None:
    if not np.all(np.isfinite(data)):
        raise ContractViolation(f"{name} contains non-finite values")


@dataclass(frozen=True)
class FlowField:
    """Per-pixel (u, v) displacement in pixels, shape (h, w, 2), float32"""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[2] != 2:
            raise ContractViolation(f"flow must have shape (h, w, 2), got {data.shape}")
        _require_finite("flow", data)
        object.__setattr__(self, "data", _frozen(data, np.float32))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape[:2]

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        return cls(np.zeros((height, width, 2), dtype=np.float32))

    @classmethod
    def constant(cls, height: int, width: int, u: float, v: float) -> "FlowField":
        data = np.empty((height, width, 2), dtype=np.float32)
        data[..., 0] = u
        data[..., 1] = v
        return cls(data)

    def norm(self) -> np.ndarray:
        d = self.data.astype(np.float64)
        return np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2)


@dataclass(frozen=True)
class ScalarField:
    """Per-pixel scalar, shape (h, w), float32"""

    data: np.ndarray

    _dtype = np.float32

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ContractViolation(f"scalar field must have shape (h, w), got {data.shape}")
        _require_finite("scalar field", data)
        object.__setattr__(self, "data", _frozen(data, self._dtype))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    @classmethod
    def full(cls, height: int, width: int, value: float) -> "ScalarField":
        return cls(np.full((height, width), value, dtype=np.float32))


@dataclass(frozen=True)
class ConfidenceMap(ScalarField):
    """
    Warp confidence in [0, 1], shape (h, w), float64

    1 - exp(-x) rounds to exactly 1.0 once exp(-x) falls below half the
    float64 spacing under 1, i.e. for x above about 37.
    """

    _dtype = np.float64

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.data < 0.0) or np.any(self.data > 1.0):
            raise ContractViolation("confidence must lie in [0, 1]")


@dataclass(frozen=True)
class ImageField:
    """Per-pixel channels, shape (h, w, channels), float32"""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[..., None]
        if data.ndim != 3 or data.shape[2] < 1:
            raise ContractViolation(f"image must have shape (h, w, channels), got {data.shape}")
        object.__setattr__(self, "data", _frozen(data, np.float32))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape[:2]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class ValidityMask:
    """Per-pixel boolean; False where a sample point fell outside the source grid"""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ContractViolation(f"mask must have shape (h, w), got {data.shape}")
        object.__setattr__(self, "data", _frozen(data, bool))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    @classmethod
    def all_valid(cls, height: int, width: int) -> "ValidityMask":
        return cls(np.ones((height, width), dtype=bool))

    def __and__(self, other: "ValidityMask") -> "ValidityMask":
        return ValidityMask(self.data & other.data)

    def fraction(self) -> float:
        return float(self.data.mean()) if self.data.size else 0.0


@dataclass(frozen=True)
class ProbMap:
    """
    Per-pixel class probabilities, shape (h, w, c), float32

    Every pixel is either a probability vector (entries in [0, 1], sum 1
    within 1e-5) or all zeros, the fill value warping leaves where no
    source pixel exists.
    """

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[2] < 1:
            raise ContractViolation(f"probability map must have shape (h, w, c), got {data.shape}")
        _require_finite("probability map", data)
        data = _frozen(data, np.float32)
        if np.any(data < 0.0) or np.any(data > 1.0 + PROB_SUM_TOLERANCE):
            raise ContractViolation("probability entries must lie in [0, 1]")
        sums = data.astype(np.float64).sum(axis=2)
        empty = np.all(data == 0.0, axis=2)
        if np.any(~empty & (np.abs(sums - 1.0) > PROB_SUM_TOLERANCE)):
            raise ContractViolation("probability vectors must sum to 1")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape[:2]

    @property
    def classes(self) -> int:
        return self.data.shape[2]

    def empty_pixels(self) -> np.ndarray:
        return np.all(self.data == 0.0, axis=2)

    @classmethod
    def uniform(cls, height: int, width: int, classes: int) -> "ProbMap":
        return cls(np.full((height, width, classes), 1.0 / classes, dtype=np.float32))

    @classmethod
    def one_hot(cls, labels: np.ndarray, classes: int) -> "ProbMap":
        labels = np.asarray(labels)
        return cls(np.eye(classes, dtype=np.float32)[labels])


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class index in [0, c) or IGNORE_INDEX"""

    data: np.ndarray
    classes: int

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ContractViolation(f"label map must have shape (h, w), got {data.shape}")
        if self.classes < 1 or self.classes >= IGNORE_INDEX:
            raise ContractViolation(f"class count must be in [1, {IGNORE_INDEX}), got {self.classes}")
        data = _frozen(data, np.int64)
        bad = (data != IGNORE_INDEX) & ((data < 0) | (data >= self.classes))
        if np.any(bad):
            raise ContractViolation(f"label indices must be < {self.classes} or IGNORE")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    def ignored(self) -> np.ndarray:
        return self.data == IGNORE_INDEX


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform on pixel coordinates, bottom-right entry 1"""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ContractViolation(f"homography must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)) or abs(m[2, 2]) < 1e-12:
            raise DegenerateHomographyError("homography cannot be normalized")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-12:
            raise DegenerateHomographyError("homography is not invertible")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]))
