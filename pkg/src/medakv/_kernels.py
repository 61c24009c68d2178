"""Hot numeric kernels.

Every kernel exists twice: a numba ``@njit`` version and a plain numpy
version with identical semantics.  The numba path is used when numba imports
and ``MEDAKV_DISABLE_NUMBA`` is unset (or ``0``); otherwise the numpy path is
used.  Both implementations stay importable as ``numba_impl`` / ``numpy_impl``
so tests and the benchmark can compare them directly.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

_DISABLED = os.environ.get("MEDAKV_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    HAS_NUMBA = False


# --------------------------------------------------------------------------
# numpy reference path
# --------------------------------------------------------------------------

def _np_softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _np_entropy_rows(p):
    out = np.zeros(p.shape[0])
    mask = p > 0.0
    terms = np.zeros_like(p)
    terms[mask] = p[mask] * np.log(p[mask])
    out[:] = -terms.sum(axis=1)
    return out


def _np_column_sums(a):
    return a.sum(axis=0)


def _np_cosine_matrix(a, b):
    na = np.sqrt((a * a).sum(axis=1))
    nb = np.sqrt((b * b).sum(axis=1))
    dots = a @ b.T
    denom = np.outer(na, nb)
    out = np.zeros_like(dots)
    ok = denom > 0.0
    out[ok] = dots[ok] / denom[ok]
    return np.clip(out, -1.0, 1.0)


def _np_argmax_rows(s):
    # np.argmax returns the first maximal index, i.e. lowest-index tie-break.
    return np.argmax(s, axis=1).astype(np.int64)


def _np_merge_groups(rows, conserved, less, target):
    sums = rows[conserved].copy()
    counts = np.ones(conserved.shape[0])
    if less.shape[0]:
        np.add.at(sums, target, rows[less])
        np.add.at(counts, target, 1.0)
    return sums / counts[:, None]


numpy_impl = SimpleNamespace(
    softmax_rows=_np_softmax_rows,
    entropy_rows=_np_entropy_rows,
    column_sums=_np_column_sums,
    cosine_matrix=_np_cosine_matrix,
    argmax_rows=_np_argmax_rows,
    merge_groups=_np_merge_groups,
)


# --------------------------------------------------------------------------
# numba path
# --------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _nb_softmax_rows(x):
        n, m = x.shape
        out = np.empty((n, m))
        for i in range(n):
            mx = x[i, 0]
            for j in range(1, m):
                if x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(m):
                v = np.exp(x[i, j] - mx)
                out[i, j] = v
                s += v
            for j in range(m):
                out[i, j] /= s
        return out

    @njit(cache=True)
    def _nb_entropy_rows(p):
        n, m = p.shape
        out = np.zeros(n)
        for i in range(n):
            h = 0.0
            for j in range(m):
                v = p[i, j]
                if v > 0.0:
                    h -= v * np.log(v)
            out[i] = h
        return out

    @njit(cache=True)
    def _nb_column_sums(a):
        n, m = a.shape
        out = np.zeros(m)
        for i in range(n):
            for j in range(m):
                out[j] += a[i, j]
        return out

    @njit(cache=True)
    def _nb_cosine_matrix(a, b):
        na_, d = a.shape
        nb_ = b.shape[0]
        norm_a = np.zeros(na_)
        norm_b = np.zeros(nb_)
        for i in range(na_):
            s = 0.0
            for k in range(d):
                s += a[i, k] * a[i, k]
            norm_a[i] = np.sqrt(s)
        for j in range(nb_):
            s = 0.0
            for k in range(d):
                s += b[j, k] * b[j, k]
            norm_b[j] = np.sqrt(s)
        out = np.zeros((na_, nb_))
        for i in range(na_):
            if norm_a[i] == 0.0:
                continue
            for j in range(nb_):
                if norm_b[j] == 0.0:
                    continue
                s = 0.0
                for k in range(d):
                    s += a[i, k] * b[j, k]
                v = s / (norm_a[i] * norm_b[j])
                if v > 1.0:
                    v = 1.0
                elif v < -1.0:
                    v = -1.0
                out[i, j] = v
        return out

    @njit(cache=True)
    def _nb_argmax_rows(s):
        n, m = s.shape
        out = np.zeros(n, dtype=np.int64)
        for i in range(n):
            best = 0
            for j in range(1, m):
                if s[i, j] > s[i, best]:
                    best = j
            out[i] = best
        return out

    @njit(cache=True)
    def _nb_merge_groups(rows, conserved, less, target):
        nc = conserved.shape[0]
        d = rows.shape[1]
        sums = np.empty((nc, d))
        counts = np.ones(nc)
        for c in range(nc):
            for k in range(d):
                sums[c, k] = rows[conserved[c], k]
        for t in range(less.shape[0]):
            c = target[t]
            counts[c] += 1.0
            for k in range(d):
                sums[c, k] += rows[less[t], k]
        for c in range(nc):
            for k in range(d):
                sums[c, k] /= counts[c]
        return sums

    numba_impl = SimpleNamespace(
        softmax_rows=_nb_softmax_rows,
        entropy_rows=_nb_entropy_rows,
        column_sums=_nb_column_sums,
        cosine_matrix=_nb_cosine_matrix,
        argmax_rows=_nb_argmax_rows,
        merge_groups=_nb_merge_groups,
    )
else:  # pragma: no cover
    numba_impl = None


USE_NUMBA = HAS_NUMBA and not _DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"
_active = numba_impl if USE_NUMBA else numpy_impl


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def softmax_rows(x):
    return _active.softmax_rows(_f64(x))


def entropy_rows(p):
    return _active.entropy_rows(_f64(p))


def column_sums(a):
    return _active.column_sums(_f64(a))


def cosine_matrix(a, b):
    return _active.cosine_matrix(_f64(a), _f64(b))


def argmax_rows(s):
    return _active.argmax_rows(_f64(s))


def merge_groups(rows, conserved, less, target):
    return _active.merge_groups(_f64(rows), _i64(conserved), _i64(less), _i64(target))


def warmup() -> None:
    """Trigger JIT compilation of every kernel on tiny inputs."""
    a = np.ones((2, 2))
    softmax_rows(a)
    entropy_rows(a / 2.0)
    column_sums(a)
    cosine_matrix(a, a)
    argmax_rows(a)
    merge_groups(a, np.array([0]), np.array([1]), np.array([0]))
