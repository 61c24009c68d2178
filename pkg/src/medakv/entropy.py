"""Cross-modal attention entropy per layer.

For a layer, text queries attend over vision keys (``a_tv``) and vision
queries attend over text keys (``a_vt``).  Scores are softmaxed per head,
averaged over heads, and the layer's cross-modal entropy is the sum of the
mean row entropies of both directions (nats).  Higher means more diffuse.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ContractError, ShapeError
from .kvcache import partition_by_modality
from .numerics import NORMALIZATION_TOL


@dataclass
class CrossModalAttention:
    a_tv: np.ndarray
    a_vt: np.ndarray
    layer_index: int = 0
    degenerate: bool = False
    # Head-averaged full self-attention; only used when a modality is absent.
    fallback: np.ndarray | None = None


def _check_rows(a: np.ndarray, name: str) -> None:
    if a.size == 0:
        return
    if np.any(a < 0) or np.any(np.abs(a.sum(axis=1) - 1.0) > NORMALIZATION_TOL):
        raise ContractError(f"{name} rows are not probability distributions")


def _head_averaged_softmax(q: np.ndarray, k: np.ndarray, scale: float, mask: np.ndarray | None = None) -> np.ndarray:
    """Softmax per head then average over heads; rows renormalised to sum to 1."""
    scores = np.einsum("hid,hjd->hij", q, k) * scale
    if mask is not None:
        scores[:, ~mask] = -np.inf
    probs = np.stack([_kernels.softmax_rows(s) for s in scores]).mean(axis=0)
    return probs / probs.sum(axis=1, keepdims=True)


def cross_modal_attention(q, k, modality, scale: float, layer_index: int = 0,
                          causal: bool = False) -> CrossModalAttention:
    """Build both cross-modal attention directions from per-head ``q``/``k``.

    ``q`` and ``k`` are ``(H, n, head_dim)`` (a 2-D array is treated as one
    head).  With ``causal=True`` a query only sees keys at earlier-or-equal
    positions; queries left with no visible key are dropped.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.ndim == 2:
        q, k = q[None], k[None]
    if q.shape != k.shape:
        raise ShapeError(f"q {q.shape} and k {k.shape} differ")
    text, vision = partition_by_modality(modality)
    if text.size != q.shape[1] - vision.size:
        raise ShapeError("modality tags do not match token count")
    if text.size == 0 or vision.size == 0:
        n = q.shape[1]
        causal_mask = np.tril(np.ones((n, n), dtype=bool))
        full = _head_averaged_softmax(q, k, scale, causal_mask)
        empty = np.zeros((0, 0))
        return CrossModalAttention(empty, empty, layer_index, True, full)

    def direction(rows, cols):
        mask = None
        if causal:
            mask = cols[None, :] <= rows[:, None]
            keep = mask.any(axis=1)
            rows, mask = rows[keep], mask[keep]
            if rows.size == 0:
                return np.zeros((0, cols.size))
        return _head_averaged_softmax(q[:, rows], k[:, cols], scale, mask)

    return CrossModalAttention(direction(text, vision), direction(vision, text), layer_index)


def direction_entropies(a: CrossModalAttention) -> tuple[float, float]:
    """Mean row entropy of ``a_tv`` and of ``a_vt`` (each >= 0)."""
    if a.degenerate:
        _check_rows(a.fallback, "self-attention")
        e = float(_kernels.entropy_rows(a.fallback).mean())
        return e, 0.0
    _check_rows(a.a_tv, "a_tv")
    _check_rows(a.a_vt, "a_vt")
    e_tv = float(_kernels.entropy_rows(a.a_tv).mean()) if a.a_tv.size else 0.0
    e_vt = float(_kernels.entropy_rows(a.a_vt).mean()) if a.a_vt.size else 0.0
    return e_tv, e_vt


def layer_entropy(a: CrossModalAttention) -> float:
    e_tv, e_vt = direction_entropies(a)
    e_cm = e_tv + e_vt
    assert e_cm >= 0.0
    return e_cm


@dataclass
class EntropyProfile:
    """Per-layer cross-modal entropies.

    ``e_tv``/``e_vt`` hold the positive mean row entropies of each direction,
    so ``e_cm == e_tv + e_vt``.  For degenerate layers ``e_tv`` carries the
    self-attention fallback entropy and ``e_vt`` is 0.
    """

    e_cm: np.ndarray
    e_tv: np.ndarray
    e_vt: np.ndarray
    n_text: int
    n_vision: int
    degenerate: np.ndarray = field(default=None)

    def __post_init__(self):
        self.e_cm = np.asarray(self.e_cm, dtype=np.float64)
        self.e_tv = np.asarray(self.e_tv, dtype=np.float64)
        self.e_vt = np.asarray(self.e_vt, dtype=np.float64)
        if self.degenerate is None:
            self.degenerate = np.zeros(self.e_cm.shape, dtype=bool)

    @classmethod
    def from_values(cls, e_cm) -> "EntropyProfile":
        e_cm = np.asarray(e_cm, dtype=np.float64)
        return cls(e_cm, e_cm.copy(), np.zeros_like(e_cm), 0, 0)

    @property
    def num_layers(self) -> int:
        return self.e_cm.shape[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer_index", "n_text", "n_vision", "e_tv", "e_vt", "e_cm"])
        for l in range(self.num_layers):
            w.writerow([l, self.n_text, self.n_vision, repr(float(self.e_tv[l])),
                        repr(float(self.e_vt[l])), repr(float(self.e_cm[l]))])
        return buf.getvalue()


def profile(queries, keys, modality, scale: float, causal: bool = False) -> EntropyProfile:
    """Entropy profile from per-layer ``(H, n, head_dim)`` queries and keys."""
    if len(queries) < 1 or len(queries) != len(keys):
        raise ContractError("need matching queries and keys for at least one layer")
    text, vision = partition_by_modality(modality)
    e_tv, e_vt, degenerate = [], [], []
    for l, (q, k) in enumerate(zip(queries, keys)):
        cma = cross_modal_attention(q, k, modality, scale, l, causal)
        a, b = direction_entropies(cma)
        e_tv.append(a)
        e_vt.append(b)
        degenerate.append(cma.degenerate)
    e_tv, e_vt = np.array(e_tv), np.array(e_vt)
    return EntropyProfile(e_tv + e_vt, e_tv, e_vt, int(text.size), int(vision.size), np.array(degenerate))
