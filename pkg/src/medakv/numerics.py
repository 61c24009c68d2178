"""Dense-matrix and statistics helpers used throughout the engine.

Matrices are plain 2-D ``float64`` numpy arrays.  The few operations that sit
in inner loops dispatch to :mod:`medakv._kernels`.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import ContractError, ShapeError

NORMALIZATION_TOL = 1e-6


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise ContractError("matrix product overflowed")
    return out


def softmax_rows(a, scale: float = 1.0) -> np.ndarray:
    """Row-wise softmax of ``scale * a``, computed after subtracting row maxima."""
    a = as_matrix(a)
    if a.size == 0:
        raise ShapeError("softmax of an empty matrix")
    if not scale > 0:
        raise ContractError(f"scale must be positive, got {scale}")
    return _kernels.softmax_rows(a * scale)


def row_entropy(p) -> float:
    """Shannon entropy in nats of one probability row, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size == 0:
        raise ShapeError("entropy of an empty row")
    if np.any(p < 0) or abs(p.sum() - 1.0) > NORMALIZATION_TOL:
        raise ContractError("row is not a probability distribution")
    return float(_kernels.entropy_rows(p[None, :])[0])


def mean_row_entropy(a) -> float:
    a = as_matrix(a)
    if a.size == 0:
        raise ShapeError("entropy of an empty matrix")
    if np.any(a < 0) or np.any(np.abs(a.sum(axis=1) - 1.0) > NORMALIZATION_TOL):
        raise ContractError("rows are not probability distributions")
    return float(_kernels.entropy_rows(a).mean())


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between ``u`` and ``v``; 0 when either has zero norm."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ShapeError(f"length mismatch {u.shape} vs {v.shape}")
    return float(_kernels.cosine_matrix(u[None, :], v[None, :])[0, 0])


def cosine_matrix(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"row width mismatch {a.shape[1]} vs {b.shape[1]}")
    return _kernels.cosine_matrix(a, b)


def random_matrix(rows: int, cols: int, rng: np.random.Generator, low: float = -0.1, high: float = 0.1) -> np.ndarray:
    return rng.uniform(low, high, size=(rows, cols))
