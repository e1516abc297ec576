# Helper functions for the Refign toolkit
# Exceptions shared by every tools module, plus a few small numeric helpers

import logging
from typing import List, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class RefignError(Exception):
    """Base class for every error raised by the toolkit"""


class ContractViolation(RefignError, ValueError):
    """Inputs break a documented precondition (shape, range, dimensions)"""


class DegenerateHomographyError(RefignError):
    """Homography is singular or projects a pixel to infinity"""


class DegenerateTaxonomyError(RefignError):
    """Class taxonomy cannot support the requested operation"""


class EmptyInputError(RefignError):
    """Metric or statistic requested over an empty set"""


class AlignmentError(RefignError):
    """Alignment provider could not produce a warp for a sample"""


class ContainerFormatError(RefignError):
    """Tensor container bytes are malformed"""


class ConfigError(RefignError):
    """Run configuration failed validation"""

    def __init__(self, message: str, errors: Sequence[str] = ()):
        super().__init__(message)
        self.errors: List[str] = list(errors)


def require_same_shape(name_a: str, a: Sequence[int], name_b: str, b: Sequence[int]) -> None:
    """
    Raise ContractViolation unless two (height, width) pairs agree

    Parameters:
    -----------
    name_a, name_b : str
        Argument names used in the error message
    a, b : Sequence[int]
        Spatial shapes to compare
    """
    if tuple(a) != tuple(b):
        raise ContractViolation(f"dimension mismatch: {name_a} is {tuple(a)}, {name_b} is {tuple(b)}")


def parse_index_list(text: str) -> List[int]:
    """Parse '0,1, 2' into [0, 1, 2]; the empty string gives []"""
    text = text.strip()
    if not text:
        return []
    return [int(part) for part in text.split(",") if part.strip()]


def parse_float_list(text: str) -> List[float]:
    """Parse '1,0.5,0.25' into floats"""
    return [float(part) for part in text.split(",") if part.strip()]


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Largest elementwise |a - b| / max(|a|, |b|, floor)"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale)) if a.size else 0.0