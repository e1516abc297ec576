"""
RFTN tensor container

Byte layout (little-endian throughout):
    magic "RFTN" | version u8 | dtype u8 | ndim u8 | ndim x u64 dims |
    zero padding to a 16-byte boundary | row-major payload

dtype codes: 0 = float32, 1 = uint16, 2 = uint8 boolean.

This module also maps the pipeline's field types onto containers:
- GaussianFlow: float32 (h, w, 4) holding u, v, log-variance, validity
- ProbMap: float32 (h, w, c)
- LabelMap: uint16 (h, w), IGNORE stored as 255
- ImageField: float32 (h, w, channels)
- ValidityMask: boolean (h, w)
- ToyModelParams: float32 (feature_dim + 1, c) with the bias as last row
"""

import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from config.config import CONTAINER_CONFIG
from tools.fields import FlowField, ImageField, LabelMap, ProbMap, ScalarField, ValidityMask
from tools.toy_model import ToyModelParams
from tools.uncertainty import GaussianFlow
from utils.helper import ContainerFormatError

logger = logging.getLogger(__name__)

MAGIC = CONTAINER_CONFIG["magic"]
VERSION = CONTAINER_CONFIG["version"]
ALIGNMENT = CONTAINER_CONFIG["alignment"]
PARAM_WORDS = 2

DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<u2"), 2: np.dtype("u1")}
_PREFIX = struct.Struct("<4sBBB")

PathLike = Union[str, Path]


def _dtype_code(array: np.ndarray) -> int:
    if array.dtype == np.bool_:
        return 2
    if array.dtype == np.float32:
        return 0
    if array.dtype == np.uint16:
        return 1
    raise ContainerFormatError(f"unsupported dtype {array.dtype}; expected float32, uint16 or bool")


def _header_size(ndim: int) -> int:
    raw = _PREFIX.size + 8 * ndim
    return -(-raw // ALIGNMENT) * ALIGNMENT


def encode_tensor(array: np.ndarray) -> bytes:
    """
    Serialize an array to container bytes

    Parameters:
    -----------
    array : np.ndarray
        float32, uint16 or bool array of up to 255 dimensions

    Returns:
    --------
    bytes
    """
    array = np.asarray(array)
    code = _dtype_code(array)
    if array.ndim > 255:
        raise ContainerFormatError(f"too many dimensions: {array.ndim}")
    header = _PREFIX.pack(MAGIC, VERSION, code, array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    header += b"\x00" * (_header_size(array.ndim) - len(header))
    payload = np.ascontiguousarray(array.astype(DTYPE_CODES[code], copy=False)).tobytes()
    return header + payload


def decode_tensor(data: bytes) -> np.ndarray:
    """
    Parse container bytes back into an array

    Raises ContainerFormatError on a bad magic, unknown version or dtype,
    nonzero padding, or a payload whose length disagrees with the dims.
    """
    if len(data) < _PREFIX.size:
        raise ContainerFormatError(f"container truncated: {len(data)} bytes")
    magic, version, code, ndim = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise ContainerFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ContainerFormatError(f"unsupported container version {version}")
    if code not in DTYPE_CODES:
        raise ContainerFormatError(f"unknown dtype code {code}")
    header_size = _header_size(ndim)
    if len(data) < header_size:
        raise ContainerFormatError("container truncated inside the header")
    dims = struct.unpack_from(f"<{ndim}Q", data, _PREFIX.size)
    padding = data[_PREFIX.size + 8 * ndim:header_size]
    if any(padding):
        raise ContainerFormatError("header padding must be zero")

    dtype = DTYPE_CODES[code]
    expected = int(np.prod(dims, dtype=np.uint64)) * dtype.itemsize
    payload = data[header_size:]
    if len(payload) != expected:
        raise ContainerFormatError(f"payload has {len(payload)} bytes, dims {dims} need {expected}")
    array = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    if code == 2:
        if np.any(array > 1):
            raise ContainerFormatError("boolean payload holds values other than 0 and 1")
        return array.astype(bool)
    return array


def write_tensor(path: PathLike, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(array))
    logger.debug(f"Wrote container {path} with shape {np.shape(array)}")


def read_tensor(path: PathLike) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def _require_shape(array: np.ndarray, ndim: int, what: str, last: int = None) -> None:
    if array.ndim != ndim or (last is not None and array.shape[-1] != last):
        raise ContainerFormatError(f"{what} container has shape {array.shape}")


def gaussian_flow_to_array(g: GaussianFlow) -> np.ndarray:
    return np.concatenate([
        g.mean.data,
        g.log_variance.data[..., None],
        g.validity.data[..., None].astype(np.float32),
    ], axis=2).astype(np.float32)


def array_to_gaussian_flow(array: np.ndarray) -> GaussianFlow:
    _require_shape(array, 3, "GaussianFlow", 4)
    if array.dtype != np.float32:
        raise ContainerFormatError("GaussianFlow containers must be float32")
    return GaussianFlow(FlowField(array[..., :2]), ScalarField(array[..., 2]), ValidityMask(array[..., 3] > 0.5))


def label_map_to_array(labels: LabelMap) -> np.ndarray:
    return labels.data.astype(np.uint16)


def array_to_label_map(array: np.ndarray, classes: int) -> LabelMap:
    _require_shape(array, 2, "LabelMap")
    return LabelMap(array.astype(np.int64), classes)


def params_to_array(params: ToyModelParams) -> np.ndarray:
    """
    Model parameters as a lossless float32 payload

    Rows are the weight rows followed by the bias row. Each float64 value is
    split into its two little-endian 32-bit words, reinterpreted bit for bit
    as float32, so the array has shape (d + 1, c, 2).
    """
    stacked = np.ascontiguousarray(np.vstack([params.weight, params.bias[None, :]]), dtype="<f8")
    return stacked.view("<f4").reshape(*stacked.shape, PARAM_WORDS)


def array_to_params(array: np.ndarray) -> ToyModelParams:
    _require_shape(array, 3, "model parameter", PARAM_WORDS)
    if array.dtype != np.float32:
        raise ContainerFormatError("model parameter containers must be float32")
    if array.shape[0] < 2:
        raise ContainerFormatError("model parameter container needs at least one weight row")
    values = np.ascontiguousarray(array, dtype="<f4").view("<f8")[..., 0]
    return ToyModelParams(values[:-1], values[-1])


def write_gaussian_flow(path: PathLike, g: GaussianFlow) -> None:
    write_tensor(path, gaussian_flow_to_array(g))


def read_gaussian_flow(path: PathLike) -> GaussianFlow:
    return array_to_gaussian_flow(read_tensor(path))


def write_prob_map(path: PathLike, q: ProbMap) -> None:
    write_tensor(path, q.data)


def read_prob_map(path: PathLike) -> ProbMap:
    array = read_tensor(path)
    _require_shape(array, 3, "ProbMap")
    return ProbMap(array)


def write_label_map(path: PathLike, labels: LabelMap) -> None:
    write_tensor(path, label_map_to_array(labels))


def read_label_map(path: PathLike, classes: int) -> LabelMap:
    return array_to_label_map(read_tensor(path), classes)


def write_image(path: PathLike, image: ImageField) -> None:
    write_tensor(path, image.data)


def read_image(path: PathLike) -> ImageField:
    array = read_tensor(path)
    if array.ndim not in (2, 3):
        raise ContainerFormatError(f"image container has shape {array.shape}")
    return ImageField(array)
