"""
Dense tensor primitives used by the decoder.

Tensors are numpy float32 arrays (row-major, dims = ndarray.shape). Every
function here is pure: inputs are never modified and outputs are fresh arrays.
"""
import logging
from typing import Union

import numpy as np

from .errors import ConfigError, DomainError, ShapeError

logger = logging.getLogger(__name__)

DTYPE = np.float32

ArrayLike = Union[np.ndarray, list, tuple]


def as_tensor(x: ArrayLike) -> np.ndarray:
    """Return x as a float32 ndarray (no copy when it already is one)."""
    return np.asarray(x, dtype=DTYPE)


def matmul(a: ArrayLike, b: ArrayLike) -> np.ndarray:
    """
    c[..., i, j] = sum_t a[..., i, t] * b[..., t, j], float32 in and out.

    Leading batch axes broadcast like numpy.matmul. Raises ShapeError naming
    both shapes when the inner dims differ.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    return np.matmul(a, b)


def softmax(x: ArrayLike, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along axis (max-subtracted, float64 accumulation)."""
    x = np.asarray(x)
    if x.size == 0 or x.shape[axis] == 0:
        raise DomainError("softmax of an empty vector is undefined")
    wide = x.astype(np.float64)
    shifted = wide - wide.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return (exp / exp.sum(axis=axis, keepdims=True)).astype(DTYPE)


def log_softmax(x: ArrayLike, axis: int = -1) -> np.ndarray:
    """log(softmax(x)) in float64, computed as x - logsumexp(x)."""
    x = np.asarray(x)
    if x.size == 0 or x.shape[axis] == 0:
        raise DomainError("log_softmax of an empty vector is undefined")
    wide = x.astype(np.float64)
    peak = wide.max(axis=axis, keepdims=True)
    return wide - peak - np.log(np.exp(wide - peak).sum(axis=axis, keepdims=True))


def rms_norm(x: ArrayLike, weight: ArrayLike, eps: float) -> np.ndarray:
    """out = weight * x / sqrt(mean(x**2) + eps) over the last axis."""
    x = as_tensor(x)
    weight = as_tensor(weight)
    if x.shape[-1] != weight.shape[-1]:
        raise ShapeError(f"rms_norm weight {weight.shape} does not match input {x.shape}")
    if eps < 0:
        raise DomainError(f"rms_norm eps must be >= 0, got {eps}")
    mean_sq = np.mean(np.square(x), axis=-1, keepdims=True)
    denom = np.sqrt(mean_sq + DTYPE(eps))
    # zero rows with eps = 0 would divide 0/0
    safe = np.where(denom > 0, denom, DTYPE(1.0))
    return (weight * (x / safe)).astype(DTYPE)


def rope_frequencies(d_head: int, theta_base: float) -> np.ndarray:
    """Per-pair angular frequency theta_base ** (-2i / d_head), float64."""
    if d_head % 2 != 0:
        raise ConfigError(f"rotary embedding needs an even head dim, got {d_head}")
    return theta_base ** (-np.arange(0, d_head, 2, dtype=np.float64) / d_head)


def rotate_pairs(x: ArrayLike, angles: ArrayLike) -> np.ndarray:
    """
    Rotate interleaved pairs (x[2i], x[2i+1]) by angles[..., i].

    angles must broadcast against x.shape[:-1] + (d/2,).
    """
    x = as_tensor(x)
    angles = np.asarray(angles, dtype=np.float64)
    even = x[..., 0::2].astype(np.float64)
    odd = x[..., 1::2].astype(np.float64)
    cos = np.cos(angles)
    sin = np.sin(angles)
    out = np.empty(x.shape, dtype=DTYPE)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def rope_apply(x: ArrayLike, position, theta_base: float) -> np.ndarray:
    """
    Rotary position embedding with interleaved consecutive pairs.

    position is a non-negative int for a single vector, or an int array whose
    shape matches the leading axes of x (e.g. x of shape (seq, heads, d_head)
    with position of shape (seq,)).
    """
    x = as_tensor(x)
    freqs = rope_frequencies(x.shape[-1], theta_base)
    pos = np.asarray(position, dtype=np.float64)
    if np.any(pos < 0):
        raise DomainError("rope positions must be non-negative")
    angles = pos[..., None] * freqs
    missing = x.ndim - 1 - pos.ndim
    if missing < 0:
        raise ShapeError(f"positions {pos.shape} have more axes than input {x.shape}")
    angles = angles.reshape(pos.shape + (1,) * missing + freqs.shape)
    return rotate_pairs(x, angles)


def silu(x: ArrayLike) -> np.ndarray:
    """x * sigmoid(x), written with tanh so large negative inputs do not overflow."""
    x = as_tensor(x)
    return (x * (DTYPE(0.5) * (DTYPE(1.0) + np.tanh(x * DTYPE(0.5))))).astype(DTYPE)
