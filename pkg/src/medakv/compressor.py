"""Per-layer KV pair selection and nearest-neighbour average merging."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .allocator import CompressionConfig
from .errors import ContractError, ShapeError
from .kvcache import LayerKVCache, Modality


@dataclass
class SelectionResult:
    conserved: np.ndarray
    less_important: np.ndarray
    scores: np.ndarray
    recent: np.ndarray
    important: np.ndarray


@dataclass
class MergeAssignment:
    # target[i] is a position in the conserved list, not a token index
    target: np.ndarray
    group_sizes: np.ndarray


@dataclass
class LayerReport:
    layer_index: int
    original_tokens: int
    retained: int
    evicted: int
    merged: int
    budget: int
    recent: int
    important: int


def cumulative_scores(attn) -> np.ndarray:
    """Column sums of the (head-averaged) prompt attention."""
    a = np.asarray(attn, dtype=np.float64)
    if a.ndim == 3:
        a = a.mean(axis=0)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"attention must be square, got {a.shape}")
    return _kernels.column_sums(a)


def boost_text(scores, text_indices) -> np.ndarray:
    """Add the pre-boost maximum score to every text token's score."""
    s = np.array(scores, dtype=np.float64)
    idx = np.asarray(text_indices, dtype=np.int64)
    if idx.size:
        s[idx] += s.max()
    return s


def select_conserved(scores, recent: int, important: int) -> SelectionResult:
    """Keep the last ``recent`` tokens plus the ``important`` best-scored earlier ones.

    Ties go to the lower index.  If the budget covers the whole prompt, every
    token is conserved.
    """
    s = np.asarray(scores, dtype=np.float64)
    n = s.shape[0]
    if recent < 0 or important < 0:
        raise ContractError("window sizes must be non-negative")
    if recent + important >= n:
        every = np.arange(n)
        return SelectionResult(every, np.zeros(0, dtype=np.int64), s, every[n - min(recent, n):], every[:0])
    head = n - recent
    order = np.argsort(-s[:head], kind="stable")
    top = np.sort(order[:important])
    window = np.arange(head, n)
    conserved = np.concatenate([top, window])
    keep = np.zeros(n, dtype=bool)
    keep[conserved] = True
    return SelectionResult(conserved, np.flatnonzero(~keep), s, window, top)


def similarity_matrix(k_less, k_conserved) -> np.ndarray:
    """Cosine similarity between every less-important and conserved key."""
    a = np.asarray(k_less, dtype=np.float64)
    b = np.asarray(k_conserved, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"key widths differ: {a.shape} vs {b.shape}")
    if a.shape[0] == 0:
        return np.zeros((0, b.shape[0]))
    return _kernels.cosine_matrix(a, b)


def assign_nearest(sim) -> MergeAssignment:
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[1] == 0:
        raise ContractError("need at least one conserved token to merge into")
    if sim.shape[0] == 0:
        target = np.zeros(0, dtype=np.int64)
    else:
        target = _kernels.argmax_rows(sim)
    return MergeAssignment(target, np.bincount(target, minlength=sim.shape[1]))


def merge_average(cache: LayerKVCache, sel: SelectionResult, asg: MergeAssignment) -> LayerKVCache:
    """Replace each conserved K/V row with the mean of itself and its group."""
    if asg.target.shape[0] != sel.less_important.shape[0]:
        raise ContractError("assignment does not match selection")
    keys = np.stack([
        _kernels.merge_groups(cache.keys[h], sel.conserved, sel.less_important, asg.target)
        for h in range(cache.num_heads)
    ])
    values = np.stack([
        _kernels.merge_groups(cache.values[h], sel.conserved, sel.less_important, asg.target)
        for h in range(cache.num_heads)
    ])
    counts = cache.merged_count[sel.conserved].copy()
    np.add.at(counts, asg.target, cache.merged_count[sel.less_important])
    return LayerKVCache(keys, values, cache.positions[sel.conserved], cache.modality[sel.conserved],
                        counts, cache.layer_index)


def select_for_layer(cache: LayerKVCache, attn, recent: int, important: int,
                     text_boost: bool = True) -> SelectionResult:
    scores = cumulative_scores(attn)
    if scores.shape[0] != cache.num_tokens:
        raise ShapeError("attention size does not match cache length")
    if text_boost:
        scores = boost_text(scores, np.flatnonzero(cache.modality == Modality.TEXT))
    return select_conserved(scores, recent, important)


def compress_layer(cache: LayerKVCache, attn, plan_entry, cfg: CompressionConfig) -> tuple[LayerKVCache, LayerReport]:
    """Select, then merge (or evict) the rest, leaving ``budget`` tokens.

    ``plan_entry`` is ``(budget, recent, important)`` as returned by
    :meth:`AllocationPlan.entry`.
    """
    budget, recent, important = plan_entry
    if recent + important != budget:
        raise ContractError("plan entry recent + important != budget")
    n = cache.num_tokens
    if budget >= n:
        out = cache.copy()
        return out, LayerReport(cache.layer_index, n, n, 0, 0, budget, recent, important)
    sel = select_for_layer(cache, attn, recent, important, cfg.text_boost_enabled)
    less = sel.less_important.size
    if cfg.merge_enabled and less:
        avg_keys = cache.keys.mean(axis=0)
        sim = similarity_matrix(avg_keys[sel.less_important], avg_keys[sel.conserved])
        out = merge_average(cache, sel, assign_nearest(sim))
        merged, evicted = less, 0
    else:
        out = cache.take(sel.conserved)
        merged, evicted = 0, less
    return out, LayerReport(cache.layer_index, n, out.num_tokens, evicted, merged, budget, recent, important)


def compress_caches(caches, attention, plan, cfg: CompressionConfig):
    """Compress every layer; returns ``(caches, reports)``."""
    out, reports = [], []
    for l, cache in enumerate(caches):
        c, r = compress_layer(cache, attention[l], plan.entry(l), cfg)
        out.append(c)
        reports.append(r)
    return out, reports
