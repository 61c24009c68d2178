"""Layer-wise KV budget allocation.

All strategies produce per-layer fractions ``alpha`` whose sum is
``num_layers * rho``; integer budgets are apportioned with the largest
remainder method and each budget is split into a recent window and an
important-token part (3:1 by default).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, ContractError

PYRAMID_EPS = 1e-3
_EPS = 1e-9


class Strategy(str, Enum):
    MEDA = "meda"
    UNIFORM = "uniform"
    PYRAMID = "pyramid"


@dataclass(frozen=True)
class CompressionConfig:
    rho: float = 0.1
    recent_ratio: float = 0.75
    strategy: Strategy = Strategy.MEDA
    merge_enabled: bool = True
    text_boost_enabled: bool = True
    # Restrict cross-modal attention to earlier positions (ablation only).
    causal_cross_attention: bool = False

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if not 0.0 < self.rho <= 1.0:
            raise ConfigError(f"rho must be in (0, 1], got {self.rho}")
        if not 0.0 < self.recent_ratio < 1.0:
            raise ConfigError(f"recent_ratio must be in (0, 1), got {self.recent_ratio}")


@dataclass
class AllocationPlan:
    alpha: np.ndarray
    budget: np.ndarray
    recent: np.ndarray
    important: np.ndarray
    full_len: np.ndarray

    @property
    def num_layers(self) -> int:
        return self.alpha.shape[0]

    def entry(self, layer: int) -> tuple[int, int, int]:
        """``(budget, recent, important)`` for one layer."""
        return int(self.budget[layer]), int(self.recent[layer]), int(self.important[layer])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "alpha", "budget", "recent", "important"])
        for l in range(self.num_layers):
            w.writerow([l, repr(float(self.alpha[l])), *self.entry(l)])
        return buf.getvalue()


def clamp_redistribute(weights, total: float) -> np.ndarray:
    """Scale ``weights`` to sum to ``total`` with every entry capped at 1.

    Excess above 1 is handed to the uncapped entries in proportion to their
    weights, repeating until nothing exceeds the cap.  Each pass caps at least
    one new entry, so this ends after at most ``len(weights)`` passes.
    """
    w = np.asarray(weights, dtype=np.float64)
    n = w.shape[0]
    if total > n + _EPS:
        raise ContractError(f"cannot distribute {total} over {n} entries capped at 1")
    alpha = w * (total / w.sum())
    capped = np.zeros(n, dtype=bool)
    while True:
        over = (alpha > 1.0) & ~capped
        if not over.any():
            break
        capped |= over
        alpha[capped] = 1.0
        free = ~capped
        remaining = total - capped.sum()
        if not free.any():
            break
        alpha[free] = w[free] * (remaining / w[free].sum())
    return np.minimum(alpha, 1.0)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + _EPS))


def _apportion(alpha: np.ndarray, full_len: np.ndarray) -> np.ndarray:
    """Integer budgets summing to round(sum(alpha * full_len)), largest remainder first."""
    exact = alpha * full_len
    target = _round_half_up(float(exact.sum()))
    base = np.floor(exact + _EPS).astype(np.int64)
    base = np.minimum(base, full_len)
    short = target - int(base.sum())
    if short > 0:
        rem = exact - base
        rem[base >= full_len] = -np.inf
        # stable sort on -rem: ties go to the lowest layer index
        for l in np.argsort(-rem, kind="stable")[:short]:
            base[l] += 1
    elif short < 0:
        rem = exact - base
        for l in np.argsort(rem, kind="stable")[:-short]:
            base[l] -= 1
    # never leave a layer empty; the largest layer pays
    for l in np.flatnonzero(base < 1):
        donor = int(np.argmax(base))
        if base[donor] > 1:
            base[donor] -= 1
        base[l] = 1
    return base


def _split(budget: np.ndarray, recent_ratio: float) -> tuple[np.ndarray, np.ndarray]:
    recent = np.array([_round_half_up(recent_ratio * s) for s in budget], dtype=np.int64)
    recent = np.clip(recent, np.where(budget >= 2, 1, 0), budget)
    return recent, budget - recent


def _finish(alpha: np.ndarray, cfg: CompressionConfig, full_len) -> AllocationPlan:
    full_len = np.broadcast_to(np.asarray(full_len, dtype=np.int64), alpha.shape).copy()
    if (full_len <= 0).any():
        raise ContractError("full_len must be positive")
    budget = _apportion(alpha, full_len)
    recent, important = _split(budget, cfg.recent_ratio)
    return AllocationPlan(alpha, budget, recent, important, full_len)


def meda_alpha(e_cm, rho: float) -> np.ndarray:
    e = np.asarray(e_cm, dtype=np.float64)
    if e.ndim != 1 or e.size == 0:
        raise ContractError("entropy profile must cover at least one layer")
    w = np.exp(e - e.max())
    return clamp_redistribute(w / w.sum(), e.size * rho)


def allocate_meda(profile, cfg: CompressionConfig, full_len) -> AllocationPlan:
    """Entropy-softmax allocation: more diffuse layers get larger budgets."""
    e_cm = getattr(profile, "e_cm", profile)
    return _finish(meda_alpha(e_cm, cfg.rho), cfg, full_len)


def allocate_uniform(cfg: CompressionConfig, full_len, num_layers: int | None = None) -> AllocationPlan:
    full_len = np.atleast_1d(np.asarray(full_len, dtype=np.int64))
    n = num_layers if num_layers is not None else full_len.size
    if n < 1:
        raise ContractError("need at least one layer")
    return _finish(np.full(n, cfg.rho), cfg, full_len)


def pyramid_alpha(num_layers: int, rho: float) -> np.ndarray:
    if num_layers < 1:
        raise ContractError("need at least one layer")
    start = min(1.0, 1.5 * rho)
    end = max(PYRAMID_EPS, 0.5 * rho)
    return clamp_redistribute(np.linspace(start, end, num_layers), num_layers * rho)


def allocate_pyramid(cfg: CompressionConfig, full_len, num_layers: int | None = None) -> AllocationPlan:
    """Linearly shrinking budgets from the first to the last layer."""
    full_len = np.atleast_1d(np.asarray(full_len, dtype=np.int64))
    n = num_layers if num_layers is not None else full_len.size
    return _finish(pyramid_alpha(n, cfg.rho), cfg, full_len)


def allocate(profile, cfg: CompressionConfig, full_len) -> AllocationPlan:
    """Dispatch on ``cfg.strategy``."""
    n = getattr(profile, "num_layers", None) or len(profile)
    if cfg.strategy is Strategy.MEDA:
        return allocate_meda(profile, cfg, full_len)
    if cfg.strategy is Strategy.UNIFORM:
        return allocate_uniform(cfg, full_len, n)
    return allocate_pyramid(cfg, full_len, n)
