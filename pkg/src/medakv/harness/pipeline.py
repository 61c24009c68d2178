"""End-to-end runs: encode, profile, allocate, compress, decode, score."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..allocator import AllocationPlan, CompressionConfig, Strategy, allocate
from ..compressor import LayerReport, compress_caches
from ..entropy import EntropyProfile, profile
from ..kvcache import LayerKVCache, MemoryModel, estimate_memory, estimate_memory_per_layer
from ..model import EncodedPrompt, ModelConfig, build_weights, decode_n, prompt_encode
from .workload import Workload, generate_workload

DEFAULT_STEPS = 8


@dataclass
class LayerRow:
    layer: int
    e_cm: float
    alpha: float
    budget: int
    recent: int
    important: int
    retained: int
    merged: int
    evicted: int
    memory_gib: float
    needles_retained: int


@dataclass
class RunReport:
    strategy: str
    rho: float
    merge_enabled: bool
    text_boost_enabled: bool
    layers: list[LayerRow]
    total_memory_gib: float
    full_memory_gib: float
    fidelity: float | None
    fidelity_per_step: list[float] = field(default_factory=list)
    needle_retention: float | None = None
    degenerate_layers: list[int] = field(default_factory=list)
    decode_ms_per_token: float | None = None

    @property
    def memory_ratio(self) -> float:
        return self.total_memory_gib / self.full_memory_gib

    def to_dict(self, include_timing: bool = False) -> dict:
        d = asdict(self)
        d["memory_ratio"] = self.memory_ratio
        if not include_timing:
            d.pop("decode_ms_per_token")
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)

    def layers_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = list(LayerRow.__dataclass_fields__)
        w.writerow(names)
        for row in self.layers:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(row, n) for n in names)])
        return buf.getvalue()


def toy_memory_model(cfg: ModelConfig) -> MemoryModel:
    return MemoryModel(bytes_per_element=2, num_layers=cfg.num_layers, num_heads=cfg.num_heads, head_dim=cfg.head_dim)


def output_fidelity(reference: np.ndarray, candidate: np.ndarray) -> np.ndarray:
    """Per-step cosine similarity between two ``(steps, D)`` output stacks."""
    num = (reference * candidate).sum(axis=1)
    den = np.linalg.norm(reference, axis=1) * np.linalg.norm(candidate, axis=1)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def profile_encoded(enc: EncodedPrompt, cfg: ModelConfig, comp: CompressionConfig) -> EntropyProfile:
    keys = [c.keys for c in enc.caches]
    return profile(enc.queries, keys, enc.modality, cfg.attention_scale, comp.causal_cross_attention)


def plan_for(prof: EntropyProfile, comp: CompressionConfig, full_len: int) -> AllocationPlan:
    return allocate(prof, comp, np.full(prof.num_layers, full_len))


def _copy_caches(caches: list[LayerKVCache]) -> list[LayerKVCache]:
    return [c.copy() for c in caches]


def _layer_rows(prof, plan, reports: list[LayerReport], kept_positions, decoded: int, mem: MemoryModel, needles) -> list[LayerRow]:
    rows = []
    needles = np.asarray(needles, dtype=np.int64)
    for l, rep in enumerate(reports):
        kept = int(np.isin(needles, kept_positions[l]).sum()) if needles.size else 0
        rows.append(LayerRow(
            layer=l, e_cm=float(prof.e_cm[l]), alpha=float(plan.alpha[l]),
            budget=int(plan.budget[l]), recent=int(plan.recent[l]), important=int(plan.important[l]),
            retained=rep.retained, merged=rep.merged, evicted=rep.evicted,
            memory_gib=(rep.retained + decoded) * mem.bytes_per_token_layer / (1024**3),
            needles_retained=kept,
        ))
    return rows


def run_encoded(enc: EncodedPrompt, model_cfg: ModelConfig, comp: CompressionConfig,
                steps: int = DEFAULT_STEPS, needles=(), reference: np.ndarray | None = None) -> RunReport:
    """Compress an already-encoded prompt and compare decoding against the full cache.

    ``reference`` lets callers reuse full-cache outputs across strategies.
    """
    weights = enc.weights if enc.weights is not None else build_weights(model_cfg)
    n = enc.caches[0].num_tokens
    prof = profile_encoded(enc, model_cfg, comp)
    plan = plan_for(prof, comp, n)
    attn = [a.mean(axis=0) for a in enc.attention]
    compressed, reports = compress_caches(enc.caches, attn, plan, comp)
    retained = [c.positions.copy() for c in compressed]

    if reference is None:
        reference = decode_n(enc.last_hidden, steps, _copy_caches(enc.caches), model_cfg, weights)
    t0 = time.perf_counter()
    outputs = decode_n(enc.last_hidden, steps, compressed, model_cfg, weights)
    elapsed = time.perf_counter() - t0
    fid = output_fidelity(reference, outputs)

    mem = toy_memory_model(model_cfg)
    rows = _layer_rows(prof, plan, reports, retained, steps, mem, needles)
    needle_rate = None
    if len(needles):
        needle_rate = sum(r.needles_retained for r in rows) / (len(needles) * len(rows))
    return RunReport(
        strategy=comp.strategy.value, rho=comp.rho, merge_enabled=comp.merge_enabled,
        text_boost_enabled=comp.text_boost_enabled, layers=rows,
        total_memory_gib=estimate_memory_per_layer([r.retained for r in reports], steps, mem),
        full_memory_gib=estimate_memory(n + steps, mem),
        fidelity=float(fid.mean()), fidelity_per_step=[float(f) for f in fid],
        needle_retention=needle_rate,
        degenerate_layers=[int(l) for l in np.flatnonzero(prof.degenerate)],
        decode_ms_per_token=1000.0 * elapsed / steps,
    )


def run_pipeline(workload: Workload, comp: CompressionConfig, model_cfg: ModelConfig,
                 steps: int = DEFAULT_STEPS) -> RunReport:
    enc = prompt_encode(workload.prompt, model_cfg)
    return run_encoded(enc, model_cfg, comp, steps, workload.needles)


COMPARE_COLUMNS = ["workload_seed", "strategy", "rho", "merge", "text_boost", "fidelity",
                   "needle_retention", "memory_gib", "latency_ms_per_token"]


def compare_strategies(workloads: list[Workload], rhos, model_cfg: ModelConfig,
                       variants: list[CompressionConfig] | None = None, steps: int = DEFAULT_STEPS,
                       include_timing: bool = False) -> list[dict]:
    """Sweep every compression variant over every workload and ratio.

    ``variants`` are templates whose ``rho`` is overridden by each entry of
    ``rhos``; by default MEDA, uniform and pyramid with merging and text boost.
    """
    if not workloads or not len(rhos):
        raise ValueError("need at least one workload and one rho")
    if variants is None:
        variants = [CompressionConfig(strategy=s) for s in Strategy]
    rows = []
    for wl in workloads:
        enc = prompt_encode(wl.prompt, model_cfg)
        weights = enc.weights
        reference = decode_n(enc.last_hidden, steps, _copy_caches(enc.caches), model_cfg, weights)
        for variant in variants:
            for rho in rhos:
                comp = replace(variant, rho=float(rho))
                rep = run_encoded(enc, model_cfg, comp, steps, wl.needles, reference)
                rows.append({
                    "workload_seed": wl.seed, "strategy": comp.strategy.value, "rho": comp.rho,
                    "merge": comp.merge_enabled, "text_boost": comp.text_boost_enabled,
                    "fidelity": rep.fidelity, "needle_retention": rep.needle_retention,
                    "memory_gib": rep.total_memory_gib,
                    "latency_ms_per_token": rep.decode_ms_per_token if include_timing else None,
                })
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_COLUMNS)
    for r in rows:
        out = []
        for c in COMPARE_COLUMNS:
            v = r[c]
            out.append("" if v is None else repr(v) if isinstance(v, float) else v)
        w.writerow(out)
    return buf.getvalue()


def needle_suite(seeds, model_cfg: ModelConfig, prompt_len: int = 256, needles: int = 3, **kw) -> list[Workload]:
    return [generate_workload(s, prompt_len, model_cfg, needles=needles, **kw) for s in seeds]
