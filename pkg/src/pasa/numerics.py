"""Small dense-matrix helpers shared by every other module.

Matrices are plain ``numpy.ndarray`` objects of dtype float64, 2-D, C-ordered.
The helpers validate their inputs and raise ``ValueError`` on bad shapes or
non-finite entries.
"""

from __future__ import annotations

import math

import numpy as np


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a finite, C-contiguous float64 2-D array."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def stable_row_softmax(logits) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction."""
    x = as_matrix(logits, "logits")
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def frobenius_norm(m) -> float:
    m = as_matrix(m)
    return float(math.sqrt(float(np.sum(m * m))))


def mean_abs_diff(a, b) -> float:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def fsum_rows(terms: np.ndarray) -> np.ndarray:
    """Exactly rounded sum along axis 0 of a 2-D or 3-D array.

    ``terms[n, ...]`` are the summands; the result has shape ``terms.shape[1:]``.
    Uses ``math.fsum`` per output element, so it is slow but trustworthy.
    """
    t = np.asarray(terms, dtype=np.float64)
    flat = t.reshape(t.shape[0], -1)
    out = np.array([math.fsum(flat[:, c]) for c in range(flat.shape[1])])
    return out.reshape(t.shape[1:])
