"""Modality-tagged per-layer KV caches and KV memory accounting."""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum
from typing import NamedTuple

import numpy as np

from .errors import ContractError, ShapeError

GIB = 1024**3


class Modality(IntEnum):
    TEXT = 0
    VISION = 1

    @property
    def tag(self) -> str:
        return "T" if self is Modality.TEXT else "V"

    @classmethod
    def parse(cls, tags) -> np.ndarray:
        """Accept a "TVVT" string, a sequence of Modality/ints, or an array."""
        if isinstance(tags, str):
            lookup = {"T": cls.TEXT, "V": cls.VISION}
            try:
                return np.array([lookup[c] for c in tags.upper()], dtype=np.int8)
            except KeyError as exc:
                raise ContractError(f"unknown modality tag {exc.args[0]!r}") from None
        arr = np.asarray(tags, dtype=np.int8)
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ContractError("modality tags must be 0 (text) or 1 (vision)")
        return arr


def modality_string(tags) -> str:
    return "".join("T" if t == Modality.TEXT else "V" for t in np.asarray(tags))


class CachedToken(NamedTuple):
    original_position: int
    modality: Modality
    merged_count: int


@dataclass
class LayerKVCache:
    """Keys/values for one layer, shaped ``(heads, tokens, head_dim)``.

    Token metadata is stored column-wise in ``positions``, ``modality`` and
    ``merged_count``; :attr:`meta` gives the row-wise view.
    """

    keys: np.ndarray
    values: np.ndarray
    positions: np.ndarray
    modality: np.ndarray
    merged_count: np.ndarray
    layer_index: int = 0

    def __post_init__(self):
        self.keys = np.asarray(self.keys, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.int64)
        self.modality = Modality.parse(self.modality)
        self.merged_count = np.asarray(self.merged_count, dtype=np.int64)
        if self.keys.ndim != 3 or self.keys.shape != self.values.shape:
            raise ShapeError(f"keys {self.keys.shape} and values {self.values.shape} must match (H, n, d)")
        n = self.keys.shape[1]
        for name in ("positions", "modality", "merged_count"):
            if getattr(self, name).shape != (n,):
                raise ShapeError(f"{name} must have length {n}")
        if n and self.merged_count.min() < 1:
            raise ContractError("merged_count must be >= 1")

    @classmethod
    def from_prompt(cls, keys, values, modality, layer_index: int = 0) -> "LayerKVCache":
        n = np.asarray(keys).shape[1]
        return cls(keys, values, np.arange(n), modality, np.ones(n, dtype=np.int64), layer_index)

    @property
    def num_heads(self) -> int:
        return self.keys.shape[0]

    @property
    def num_tokens(self) -> int:
        return self.keys.shape[1]

    @property
    def head_dim(self) -> int:
        return self.keys.shape[2]

    @property
    def meta(self) -> list[CachedToken]:
        return [
            CachedToken(int(p), Modality(int(m)), int(c))
            for p, m, c in zip(self.positions, self.modality, self.merged_count)
        ]

    def copy(self) -> "LayerKVCache":
        return LayerKVCache(
            self.keys.copy(), self.values.copy(), self.positions.copy(),
            self.modality.copy(), self.merged_count.copy(), self.layer_index,
        )

    def take(self, idx) -> "LayerKVCache":
        idx = np.asarray(idx, dtype=np.int64)
        return LayerKVCache(
            self.keys[:, idx], self.values[:, idx], self.positions[idx],
            self.modality[idx], self.merged_count[idx], self.layer_index,
        )

    def append(self, k, v, position: int, modality: Modality) -> None:
        """Append one token; ``k`` and ``v`` are ``(heads, head_dim)``."""
        k = np.asarray(k, dtype=np.float64).reshape(self.num_heads, 1, self.head_dim)
        v = np.asarray(v, dtype=np.float64).reshape(self.num_heads, 1, self.head_dim)
        self.keys = np.concatenate([self.keys, k], axis=1)
        self.values = np.concatenate([self.values, v], axis=1)
        self.positions = np.append(self.positions, position)
        self.modality = np.append(self.modality, np.int8(modality))
        self.merged_count = np.append(self.merged_count, 1)


def partition_by_modality(cache_or_tags) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(text_indices, vision_indices)`` in original order."""
    tags = cache_or_tags.modality if isinstance(cache_or_tags, LayerKVCache) else Modality.parse(cache_or_tags)
    idx = np.arange(tags.shape[0])
    return idx[tags == Modality.TEXT], idx[tags == Modality.VISION]


@dataclass(frozen=True)
class MemoryModel:
    """Per-token KV storage cost; defaults describe a 32-layer, 32-head fp16 model."""

    bytes_per_element: int = 2
    num_layers: int = 32
    num_heads: int = 32
    head_dim: int = 128
    kv_factor: int = 2

    def __post_init__(self):
        for name in ("bytes_per_element", "num_layers", "num_heads", "head_dim", "kv_factor"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")

    @property
    def bytes_per_token_layer(self) -> int:
        return self.bytes_per_element * self.num_heads * self.head_dim * self.kv_factor

    def engine(self) -> "MemoryModel":
        """Same shape with the engine's float64 storage."""
        return replace(self, bytes_per_element=8)


def estimate_memory(total_tokens: int, m: MemoryModel = MemoryModel()) -> float:
    """GiB held by ``total_tokens`` tokens cached in every layer."""
    if total_tokens < 0:
        raise ContractError("token count must be non-negative")
    return total_tokens * m.bytes_per_token_layer * m.num_layers / GIB


def estimate_memory_per_layer(budgets, decoded: int = 0, m: MemoryModel = MemoryModel()) -> float:
    """GiB for per-layer prompt budgets plus ``decoded`` uncompressed tokens per layer.

    ``budgets`` is either an :class:`~medakv.allocator.AllocationPlan` or a
    sequence of per-layer token counts.
    """
    budgets = np.asarray(getattr(budgets, "budget", budgets), dtype=np.int64)
    if budgets.shape != (m.num_layers,):
        raise ShapeError(f"expected {m.num_layers} layer budgets, got {budgets.shape}")
    if decoded < 0 or (budgets < 0).any():
        raise ContractError("token counts must be non-negative")
    return int((budgets + decoded).sum()) * m.bytes_per_token_layer / GIB


def tokens_for_memory(gib: float, m: MemoryModel = MemoryModel()) -> int:
    """Smallest uniform token count whose estimate reaches ``gib`` (rounded up)."""
    return int(np.ceil(gib * GIB / (m.bytes_per_token_layer * m.num_layers)))
