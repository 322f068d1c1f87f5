"""Dense probability-vector primitives.

Everything operates on float64 numpy arrays. Functions that act on a single
vector also accept a 2-D array and then work row-wise along the last axis.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateVector, InvalidInput

PROB_ATOL = 1e-6


def as_float_array(x, name="input") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.size == 0:
        raise InvalidInput(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} has non-finite entries")
    return arr


def softmax_with_temperature(logits, temperature: float = 1.0) -> np.ndarray:
    """exp(z / T) / sum(exp(z / T)) along the last axis, max-shifted."""
    z = as_float_array(logits, "logits")
    if not temperature > 0:
        raise InvalidInput(f"temperature must be positive, got {temperature}")
    z = z / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cosine_similarity(a, b) -> np.ndarray | float:
    """Cosine of the angle between ``a`` and ``b``, clamped to [-1, 1].

    Broadcasts over leading axes, so ``cosine_similarity(x, B)`` with ``x`` of
    shape (d,) and ``B`` of shape (M, d) returns M values.
    """
    a = as_float_array(a, "a")
    b = as_float_array(b, "b")
    if a.shape[-1] != b.shape[-1]:
        raise InvalidInput(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    if np.any(na == 0) or np.any(nb == 0):
        raise DegenerateVector("cosine similarity of a zero-norm vector")
    cos = np.sum(a * b, axis=-1) / (na * nb)
    cos = np.clip(cos, -1.0, 1.0)
    return float(cos) if np.ndim(cos) == 0 else cos


def l1_renormalize(v) -> np.ndarray:
    """Divide a non-negative vector (or each row) by its sum."""
    v = as_float_array(v, "v")
    if np.any(v < 0):
        raise InvalidInput("l1_renormalize expects non-negative entries")
    s = v.sum(axis=-1, keepdims=True)
    if np.any(s <= 0):
        raise DegenerateVector("cannot renormalize an all-zero vector")
    return v / s


def l2_distance(a, b) -> np.ndarray | float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInput(f"shape mismatch: {a.shape} vs {b.shape}")
    d = np.sqrt(np.sum((a - b) ** 2, axis=-1))
    return float(d) if np.ndim(d) == 0 else d


def is_prob_vec(v, atol: float = PROB_ATOL) -> bool:
    """True when every row is non-negative and sums to one within ``atol``."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or not np.all(np.isfinite(v)):
        return False
    return bool(np.all(v >= 0) and np.all(np.abs(v.sum(axis=-1) - 1.0) <= atol))


def one_hot(index, size: int) -> np.ndarray:
    index = np.asarray(index)
    out = np.zeros(index.shape + (size,), dtype=np.float64)
    np.put_along_axis(out, index[..., None], 1.0, axis=-1)
    return out
