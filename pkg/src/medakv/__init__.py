"""Entropy-guided layer-wise KV cache compression for multimodal prompts."""

from ._kernels import BACKEND
from .allocator import AllocationPlan, CompressionConfig, Strategy, allocate, allocate_meda, allocate_pyramid, allocate_uniform
from .compressor import compress_caches, compress_layer
from .entropy import EntropyProfile, profile
from .kvcache import LayerKVCache, MemoryModel, Modality, estimate_memory, estimate_memory_per_layer
from .model import ModelConfig, PromptSequence, decode_n, decode_step, prompt_encode

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AllocationPlan", "CompressionConfig", "EntropyProfile", "LayerKVCache", "MemoryModel",
    "Modality", "ModelConfig", "PromptSequence", "Strategy", "allocate", "allocate_meda",
    "allocate_pyramid", "allocate_uniform", "compress_caches", "compress_layer", "decode_n",
    "decode_step", "estimate_memory", "estimate_memory_per_layer", "profile", "prompt_encode",
]
