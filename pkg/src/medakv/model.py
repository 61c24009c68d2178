"""Seeded toy multimodal decoder.

Each layer is multi-head self-attention plus a residual connection (no MLP,
no normalisation).  Prompt encoding fills one :class:`LayerKVCache` per layer
and records the causal attention; decoding appends one token per step and
attends over whatever the caches hold, compressed or not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, ContractError, ShapeError
from .kvcache import LayerKVCache, Modality
from .numerics import random_matrix


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 2
    num_heads: int = 2
    model_dim: int = 8
    seed: int = 7
    # Literal reading of the decode formula: scale logits by sqrt(model_dim).
    scale_by_model_dim: bool = False
    weight_range: float = 0.1

    def __post_init__(self):
        if self.num_layers < 1 or self.num_heads < 1 or self.model_dim < 1:
            raise ConfigError("num_layers, num_heads and model_dim must be >= 1")
        if self.model_dim % self.num_heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    @property
    def attention_scale(self) -> float:
        return 1.0 / math.sqrt(self.model_dim if self.scale_by_model_dim else self.head_dim)


@dataclass
class PromptSequence:
    embeddings: np.ndarray
    modality: np.ndarray
    positions: np.ndarray = None

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.modality = Modality.parse(self.modality)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] < 1:
            raise ShapeError("prompt needs at least one embedding row")
        if self.modality.shape != (self.embeddings.shape[0],):
            raise ShapeError("one modality tag per prompt token required")
        if self.positions is None:
            self.positions = np.arange(len(self))
        self.positions = np.asarray(self.positions, dtype=np.int64)

    def __len__(self) -> int:
        return self.embeddings.shape[0]


@dataclass(frozen=True)
class LayerWeights:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray


def layer_weights(cfg: ModelConfig, layer: int) -> LayerWeights:
    """Weights for one layer, reproducible from ``(cfg.seed, layer)`` alone."""
    rng = np.random.default_rng([cfg.seed, layer])
    d, r = cfg.model_dim, cfg.weight_range
    return LayerWeights(*(random_matrix(d, d, rng, -r, r) for _ in range(3)))


def build_weights(cfg: ModelConfig) -> list[LayerWeights]:
    return [layer_weights(cfg, l) for l in range(cfg.num_layers)]


def split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    """``(n, D)`` -> ``(H, n, D/H)``."""
    n, d = x.shape
    return x.reshape(n, num_heads, d // num_heads).transpose(1, 0, 2)


def merge_heads(x: np.ndarray) -> np.ndarray:
    """``(H, n, d)`` -> ``(n, H*d)``."""
    h, n, d = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * d)


def project_qkv(x, w: LayerWeights, num_heads: int):
    """Per-head Q, K, V for rows of ``x``; each is ``(H, n, head_dim)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != w.w_k.shape[0]:
        raise ShapeError(f"embedding width {x.shape[1]} != model dim {w.w_k.shape[0]}")
    return tuple(split_heads(x @ m, num_heads) for m in (w.w_q, w.w_k, w.w_v))


def causal_attention(q: np.ndarray, k: np.ndarray, scale: float) -> np.ndarray:
    """Per-head causal softmax attention, ``(H, n, n)``."""
    h, n, _ = q.shape
    scores = np.einsum("hid,hjd->hij", q, k) * scale
    mask = np.triu(np.ones((n, n), dtype=bool), k=1)
    scores[:, mask] = -np.inf
    return np.stack([_kernels.softmax_rows(s) for s in scores])


@dataclass
class EncodedPrompt:
    """Everything prompt encoding produces.

    ``attention[l]`` is the per-head causal attention ``(H, n, n)`` of layer
    ``l``; ``queries[l]`` the per-head prompt queries; ``hidden`` the final
    layer's output rows.
    """

    caches: list[LayerKVCache]
    attention: list[np.ndarray]
    queries: list[np.ndarray]
    hidden: np.ndarray
    modality: np.ndarray
    weights: list[LayerWeights] = field(repr=False, default=None)

    @property
    def last_hidden(self) -> np.ndarray:
        return self.hidden[-1]

    def head_averaged_attention(self, layer: int) -> np.ndarray:
        return self.attention[layer].mean(axis=0)


def prompt_encode(prompt: PromptSequence, cfg: ModelConfig, weights: list[LayerWeights] | None = None) -> EncodedPrompt:
    weights = weights if weights is not None else build_weights(cfg)
    if prompt.embeddings.shape[1] != cfg.model_dim:
        raise ShapeError(f"embedding width {prompt.embeddings.shape[1]} != model dim {cfg.model_dim}")
    x = prompt.embeddings
    caches, attns, queries = [], [], []
    for layer, w in enumerate(weights):
        q, k, v = project_qkv(x, w, cfg.num_heads)
        a = causal_attention(q, k, cfg.attention_scale)
        caches.append(LayerKVCache(k, v, prompt.positions.copy(), prompt.modality.copy(),
                                   np.ones(len(prompt), dtype=np.int64), layer))
        attns.append(a)
        queries.append(q)
        x = x + merge_heads(a @ v)
    return EncodedPrompt(caches, attns, queries, x, prompt.modality.copy(), weights)


def attend(q: np.ndarray, keys: np.ndarray, values: np.ndarray, scale: float) -> np.ndarray:
    """Single-query attention per head: ``q`` is ``(H, d)``, returns ``(H*d,)``."""
    scores = np.einsum("hd,hnd->hn", q, keys) * scale
    probs = _kernels.softmax_rows(scores)
    return np.einsum("hn,hnd->hd", probs, values).reshape(-1)


def decode_step(x, caches: list[LayerKVCache], cfg: ModelConfig, weights: list[LayerWeights],
                position: int | None = None) -> tuple[np.ndarray, list[LayerKVCache]]:
    """Run one new token through every layer, appending its K/V to each cache.

    Caches are mutated in place and also returned.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != cfg.model_dim:
        raise ShapeError(f"token width {x.shape[0]} != model dim {cfg.model_dim}")
    if not caches or any(c.num_tokens == 0 for c in caches):
        raise ContractError("decode requires non-empty caches")
    if position is None:
        position = int(caches[0].positions.max()) + 1
    h = x
    for cache, w in zip(caches, weights):
        q, k, v = project_qkv(h, w, cfg.num_heads)
        cache.append(k[:, 0], v[:, 0], position, Modality.TEXT)
        h = h + attend(q[:, 0], cache.keys, cache.values, cfg.attention_scale)
    return h, caches


def decode_n(x0, steps: int, caches: list[LayerKVCache], cfg: ModelConfig,
             weights: list[LayerWeights]) -> np.ndarray:
    """Greedy decode: each step's output embedding is the next step's input.

    Returns the ``(steps, D)`` stack of outputs.
    """
    if steps < 1:
        raise ContractError("steps must be >= 1")
    outs = []
    x = np.asarray(x0, dtype=np.float64)
    position = max(int(c.positions.max()) for c in caches) + 1
    for t in range(steps):
        x, caches = decode_step(x, caches, cfg, weights, position + t)
        outs.append(x)
    return np.stack(outs)
