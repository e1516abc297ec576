"""
Grid operations for Refign

This module implements the dense geometric primitives:
- Backward bilinear warping of any field by a flow (the warp operator)
- Flow chaining (composite flows)
- Homography projection, inversion, sampling and conversion to flow

Warping convention: output(x) samples the source at x + flow(x). Sample
points outside [0, w-1] x [0, h-1] are marked invalid and filled with 0.
"""

import logging
from typing import Tuple, TypeVar, Union

import numpy as np

from tools.fields import FlowField, Homography, ImageField, ProbMap, ScalarField, ValidityMask
from utils.helper import ContractViolation, DegenerateHomographyError, require_same_shape

logger = logging.getLogger(__name__)

DENOMINATOR_EPSILON = 1e-8
MASK_WEIGHT_EPSILON = 1e-9

Field = TypeVar("Field", ImageField, ScalarField, FlowField, ProbMap, np.ndarray)


def _sample_bilinear(values: np.ndarray, flow: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Bilinear backward sampling of a (h, w, k) float64 array

    Returns the sampled array (zero where invalid) and the validity array.
    """
    h, w = values.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    sx = xs + flow[..., 0].astype(np.float64)
    sy = ys + flow[..., 1].astype(np.float64)
    valid = (sx >= 0.0) & (sx <= w - 1) & (sy >= 0.0) & (sy <= h - 1)

    sx = np.where(valid, sx, 0.0)
    sy = np.where(valid, sy, 0.0)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)

    top = values[y0, x0] * (1.0 - fx) + values[y0, x1] * fx
    bottom = values[y1, x0] * (1.0 - fx) + values[y1, x1] * fx
    out = top * (1.0 - fy) + bottom * fy
    out[~valid] = 0.0
    return out, valid


def warp(field: Field, flow: FlowField) -> Tuple[Field, ValidityMask]:
    """
    Warp a field by a flow (backward bilinear sampling)

    Parameters:
    -----------
    field : ImageField | ScalarField | FlowField | ProbMap | np.ndarray
        Field to resample; raw arrays may be (h, w) or (h, w, k)
    flow : FlowField
        Displacement telling each output pixel where to sample

    Returns:
    --------
    Tuple[field of the same kind, ValidityMask]
        Channels are sampled independently; invalid pixels hold 0
    """
    if isinstance(field, (ImageField, FlowField, ProbMap)):
        values = field.data
    elif isinstance(field, ScalarField):
        values = field.data[..., None]
    elif isinstance(field, np.ndarray):
        values = field if field.ndim == 3 else field[..., None]
    else:
        raise ContractViolation(f"cannot warp object of type {type(field).__name__}")

    require_same_shape("field", values.shape[:2], "flow", flow.shape)
    out, valid = _sample_bilinear(values.astype(np.float64), flow.data)
    mask = ValidityMask(valid)

    if isinstance(field, ImageField):
        return ImageField(out), mask
    if isinstance(field, FlowField):
        return FlowField(out), mask
    if isinstance(field, ProbMap):
        return ProbMap(out), mask
    if isinstance(field, ScalarField):
        return ScalarField(out[..., 0]), mask
    return (out if field.ndim == 3 else out[..., 0]), mask


def warp_mask(mask: ValidityMask, flow: FlowField) -> ValidityMask:
    """A warped pixel stays valid only if all weighted bilinear neighbours were valid"""
    sampled, in_bounds = warp(mask.data.astype(np.float64), flow)
    return ValidityMask(in_bounds.data & (sampled >= 1.0 - MASK_WEIGHT_EPSILON))


def compose_flow(f_ab: FlowField, f_bc: FlowField) -> Tuple[FlowField, ValidityMask]:
    """
    Chain two flows: result = f_ab + warp(f_bc, f_ab)

    Parameters:
    -----------
    f_ab : FlowField
        First leg
    f_bc : FlowField
        Second leg, defined on the grid f_ab points into

    Returns:
    --------
    Tuple[FlowField, ValidityMask]
        Composite flow and the validity of the warp
    """
    require_same_shape("f_ab", f_ab.shape, "f_bc", f_bc.shape)
    warped, valid = warp(f_bc.data.astype(np.float64), f_ab)
    return FlowField(f_ab.data.astype(np.float64) + warped), valid


def project_points(h: Homography, points: np.ndarray) -> np.ndarray:
    """
    Apply a homography to an (n, 2) array of (x, y) pixel coordinates

    Raises DegenerateHomographyError if any point maps to infinity.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    homog = np.concatenate([pts, np.ones((pts.shape[0], 1))], axis=1) @ h.matrix.T
    denom = homog[:, 2]
    if np.any(np.abs(denom) < DENOMINATOR_EPSILON):
        raise DegenerateHomographyError("projective denominator vanishes inside the grid")
    return homog[:, :2] / denom[:, None]


def invert_homography(h: Homography) -> Homography:
    return Homography(np.linalg.inv(h.matrix))


def homography_to_flow(h: Homography, height: int, width: int) -> FlowField:
    """
    Convert a homography to the dense flow project(h, x) - x

    Parameters:
    -----------
    h : Homography
        Transform on pixel coordinates
    height, width : int
        Grid size

    Returns:
    --------
    FlowField
        Displacement in pixels
    """
    ys, xs = np.mgrid[0:height, 0:width]
    grid = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    projected = project_points(h, grid)
    return FlowField((projected - grid).reshape(height, width, 2))


def _is_convex(corners: np.ndarray) -> bool:
    edges = np.roll(corners, -1, axis=0) - corners
    nxt = np.roll(edges, -1, axis=0)
    cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
    return bool(np.all(cross > 0) or np.all(cross < 0))


def homography_from_corners(src: np.ndarray, dst: np.ndarray) -> Homography:
    """Exact 4-point homography mapping src corners onto dst corners"""
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -x * u, -y * u]
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -x * v, -y * v]
        b[2 * i] = u
        b[2 * i + 1] = v
    try:
        params = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as e:
        raise DegenerateHomographyError(f"corner correspondences are degenerate: {e}")
    return Homography(np.append(params, 1.0).reshape(3, 3))


def image_corners(height: int, width: int) -> np.ndarray:
    return np.array([[0.0, 0.0], [width - 1.0, 0.0], [width - 1.0, height - 1.0], [0.0, height - 1.0]])


def sample_homography(rng_seed: int, strength: float, height: int, width: int) -> Homography:
    """
    Sample a random homography by perturbing the four image corners

    Parameters:
    -----------
    rng_seed : int
        Seed; equal seeds give equal matrices
    strength : float
        Scale factor in (0, 0.5]; corner offsets stay within strength * min(h, w)
    height, width : int
        Image size (at least 2 x 2)

    Returns:
    --------
    Homography
    """
    if not 0.0 < strength <= 0.5:
        raise ContractViolation(f"strength must lie in (0, 0.5], got {strength}")
    if height < 2 or width < 2:
        raise ContractViolation("homography sampling needs at least a 2x2 grid")

    rng = np.random.default_rng(rng_seed)
    max_offset = 0.5 * strength * min(height, width)
    src = image_corners(height, width)
    while True:
        dst = src + rng.uniform(-max_offset, max_offset, size=(4, 2))
        if _is_convex(dst):
            break
        logger.debug("Rejected non-convex corner draw, resampling")
    return homography_from_corners(src, dst)
