"""Trace files: per-layer Q/K/V (and optional attention) dumps.

Two encodings share one schema:

binary
    ``MEDATRC\\0`` magic, little-endian u32 version, u32 header length, the
    header as UTF-8 JSON, then the float32 little-endian payload.

text (JSON lines)
    line 1 is the header object; each following line is one layer record
    ``{"layer": l, "q": [...], "k": [...], "v": [...], "attention": [...]}``
    with flat float lists in C order.

Header fields: ``format``, ``version``, ``num_layers``, ``num_heads``,
``model_dim``, ``head_dim``, ``prompt_len``, ``modality`` (a "TV..." string),
``has_queries``, ``has_attention``, ``payload_bytes`` (binary only) and an
optional ``layers`` list of ``{"positions": [...], "merged_count": [...]}``
for caches whose layers no longer hold the full prompt.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import TraceShapeError, TraceTruncatedError, TraceVersionError
from ..kvcache import LayerKVCache, Modality, modality_string

MAGIC = b"MEDATRC\0"
VERSION = 1
FORMAT = "medakv-trace"
_DTYPE = np.dtype("<f4")


@dataclass
class TraceLayer:
    keys: np.ndarray
    values: np.ndarray
    queries: np.ndarray | None = None
    attention: np.ndarray | None = None
    positions: np.ndarray | None = None
    merged_count: np.ndarray | None = None


@dataclass
class Trace:
    num_heads: int
    model_dim: int
    modality: np.ndarray
    layers: list[TraceLayer] = field(default_factory=list)

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    @property
    def prompt_len(self) -> int:
        return int(self.modality.shape[0])

    @property
    def has_queries(self) -> bool:
        return all(l.queries is not None for l in self.layers)

    @property
    def has_attention(self) -> bool:
        return all(l.attention is not None for l in self.layers)

    @property
    def is_full(self) -> bool:
        return all(l.positions is None for l in self.layers)

    def caches(self) -> list[LayerKVCache]:
        out = []
        for i, l in enumerate(self.layers):
            n = l.keys.shape[1]
            pos = l.positions if l.positions is not None else np.arange(n)
            cnt = l.merged_count if l.merged_count is not None else np.ones(n, dtype=np.int64)
            out.append(LayerKVCache(l.keys, l.values, pos, self.modality[pos], cnt, i))
        return out

    @classmethod
    def from_encoded(cls, enc, cfg, include_attention: bool = True) -> "Trace":
        layers = [
            TraceLayer(c.keys, c.values, q, a.mean(axis=0) if include_attention else None)
            for c, q, a in zip(enc.caches, enc.queries, enc.attention)
        ]
        return cls(cfg.num_heads, cfg.model_dim, np.asarray(enc.modality, dtype=np.int8), layers)

    @classmethod
    def from_caches(cls, caches: list[LayerKVCache], modality, model_dim: int) -> "Trace":
        layers = [TraceLayer(c.keys, c.values, positions=c.positions.copy(), merged_count=c.merged_count.copy())
                  for c in caches]
        return cls(caches[0].num_heads, model_dim, Modality.parse(modality), layers)


def _tokens(trace: Trace, layer: TraceLayer) -> int:
    return trace.prompt_len if layer.positions is None else int(layer.positions.shape[0])


def _header(trace: Trace) -> dict:
    h = {
        "format": FORMAT,
        "version": VERSION,
        "num_layers": trace.num_layers,
        "num_heads": trace.num_heads,
        "model_dim": trace.model_dim,
        "head_dim": trace.head_dim,
        "prompt_len": trace.prompt_len,
        "modality": modality_string(trace.modality),
        "has_queries": trace.has_queries,
        "has_attention": trace.has_attention,
    }
    if not trace.is_full:
        h["layers"] = [
            {"positions": [int(p) for p in l.positions], "merged_count": [int(c) for c in l.merged_count]}
            for l in trace.layers
        ]
    return h


def _arrays(trace: Trace, layer: TraceLayer, header: dict) -> list[np.ndarray]:
    out = []
    if header["has_queries"]:
        out.append(layer.queries)
    out += [layer.keys, layer.values]
    if header["has_attention"]:
        out.append(layer.attention)
    return out


def _expected_shapes(h: dict, tokens: int) -> list[tuple[int, ...]]:
    hh, hd, n = h["num_heads"], h["head_dim"], h["prompt_len"]
    shapes = []
    if h["has_queries"]:
        shapes.append((hh, n, hd))
    shapes += [(hh, tokens, hd), (hh, tokens, hd)]
    if h["has_attention"]:
        shapes.append((n, n))
    return shapes


def _layer_tokens(h: dict) -> list[int]:
    if "layers" in h:
        if len(h["layers"]) != h["num_layers"]:
            raise TraceShapeError("per-layer metadata count does not match num_layers")
        return [len(l["positions"]) for l in h["layers"]]
    return [h["prompt_len"]] * h["num_layers"]


def _validate_header(h: dict) -> None:
    if h.get("format") != FORMAT:
        raise TraceShapeError(f"not a {FORMAT} header")
    if h.get("version") != VERSION:
        raise TraceVersionError(f"unsupported trace version {h.get('version')!r} (expected {VERSION})")
    try:
        ints = [int(h[k]) for k in ("num_layers", "num_heads", "model_dim", "head_dim", "prompt_len")]
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceShapeError(f"bad header field: {exc}") from None
    if min(ints) < 1 or h["num_heads"] * h["head_dim"] != h["model_dim"]:
        raise TraceShapeError("inconsistent header dimensions")
    if len(h.get("modality", "")) != h["prompt_len"]:
        raise TraceShapeError("modality string length differs from prompt_len")
    if "layers" in h:
        for l in h["layers"]:
            if len(l["positions"]) != len(l["merged_count"]) or any(
                not 0 <= p < h["prompt_len"] for p in l["positions"]
            ):
                raise TraceShapeError("bad per-layer token metadata")


def _build(h: dict, per_layer: list[list[np.ndarray]]) -> Trace:
    modality = Modality.parse(h["modality"])
    layers = []
    for i, arrays in enumerate(per_layer):
        it = iter(arrays)
        q = next(it) if h["has_queries"] else None
        k, v = next(it), next(it)
        a = next(it) if h["has_attention"] else None
        pos = cnt = None
        if "layers" in h:
            pos = np.asarray(h["layers"][i]["positions"], dtype=np.int64)
            cnt = np.asarray(h["layers"][i]["merged_count"], dtype=np.int64)
        layers.append(TraceLayer(k, v, q, a, pos, cnt))
    return Trace(int(h["num_heads"]), int(h["model_dim"]), modality, layers)


def to_bytes(trace: Trace) -> bytes:
    h = _header(trace)
    payload = b"".join(
        np.ascontiguousarray(a, dtype=_DTYPE).tobytes()
        for layer in trace.layers for a in _arrays(trace, layer, h)
    )
    h["payload_bytes"] = len(payload)
    hb = json.dumps(h, sort_keys=True).encode()
    return MAGIC + struct.pack("<II", VERSION, len(hb)) + hb + payload


def from_bytes(data: bytes) -> Trace:
    fixed = len(MAGIC) + 8
    if len(data) < fixed:
        raise TraceTruncatedError(f"file too short for a trace header ({len(data)} bytes)")
    if data[: len(MAGIC)] != MAGIC:
        raise TraceShapeError("bad magic bytes")
    version, hlen = struct.unpack("<II", data[len(MAGIC):fixed])
    if version != VERSION:
        raise TraceVersionError(f"unsupported trace version {version} (expected {VERSION})")
    if len(data) < fixed + hlen:
        raise TraceTruncatedError("file ends inside the header")
    try:
        h = json.loads(data[fixed: fixed + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TraceShapeError(f"unreadable header: {exc}") from None
    _validate_header(h)
    payload = data[fixed + hlen:]
    declared = int(h.get("payload_bytes", -1))
    if len(payload) < declared:
        raise TraceTruncatedError(f"payload has {len(payload)} of {declared} bytes")
    shapes = [_expected_shapes(h, t) for t in _layer_tokens(h)]
    expected = sum(int(np.prod(s)) for layer in shapes for s in layer) * _DTYPE.itemsize
    if expected != declared or len(payload) != declared:
        raise TraceShapeError(f"header shapes imply {expected} payload bytes, file declares {declared}")
    per_layer, off = [], 0
    for layer in shapes:
        arrays = []
        for s in layer:
            count = int(np.prod(s))
            arrays.append(np.frombuffer(payload, _DTYPE, count, off).reshape(s).astype(np.float64))
            off += count * _DTYPE.itemsize
        per_layer.append(arrays)
    return _build(h, per_layer)


def _float_list(a: np.ndarray) -> list[float]:
    # float32 -> float64 is exact, and repr of a float64 round-trips
    return np.asarray(a, dtype=_DTYPE).astype(np.float64).ravel().tolist()


def to_text(trace: Trace) -> str:
    h = _header(trace)
    lines = [json.dumps(h, sort_keys=True)]
    names = (["q"] if h["has_queries"] else []) + ["k", "v"] + (["attention"] if h["has_attention"] else [])
    for i, layer in enumerate(trace.layers):
        rec = {"layer": i}
        rec.update({n: _float_list(a) for n, a in zip(names, _arrays(trace, layer, h))})
        lines.append(json.dumps(rec))
    return "\n".join(lines) + "\n"


def from_text(text: str) -> Trace:
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines:
        raise TraceTruncatedError("empty trace file")
    try:
        h = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise TraceShapeError(f"unreadable header: {exc}") from None
    _validate_header(h)
    tokens = _layer_tokens(h)
    if len(lines) - 1 < h["num_layers"]:
        raise TraceTruncatedError(f"found {len(lines) - 1} of {h['num_layers']} layer records")
    if len(lines) - 1 > h["num_layers"]:
        raise TraceShapeError("more layer records than num_layers")
    names = (["q"] if h["has_queries"] else []) + ["k", "v"] + (["attention"] if h["has_attention"] else [])
    per_layer = []
    for i, (line, t) in enumerate(zip(lines[1:], tokens)):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            raise TraceTruncatedError(f"layer record {i} is cut off") from None
        arrays = []
        for name, shape in zip(names, _expected_shapes(h, t)):
            flat = rec.get(name)
            if flat is None or len(flat) != int(np.prod(shape)):
                raise TraceShapeError(f"layer {i} field {name!r} does not match shape {shape}")
            arrays.append(np.asarray(flat, dtype=_DTYPE).astype(np.float64).reshape(shape))
        per_layer.append(arrays)
    return _build(h, per_layer)


def is_text_path(path) -> bool:
    return Path(path).suffix.lower() in (".jsonl", ".json", ".txt")


def save(trace: Trace, path, text: bool | None = None) -> None:
    path = Path(path)
    text = is_text_path(path) if text is None else text
    if text:
        path.write_text(to_text(trace))
    else:
        path.write_bytes(to_bytes(trace))


def load(path, text: bool | None = None) -> Trace:
    """Load a trace; the encoding is sniffed from the magic bytes unless given."""
    data = Path(path).read_bytes()
    if text is None:
        text = not data.startswith(MAGIC[:4]) and bool(data.strip())
        if not data:
            raise TraceTruncatedError("empty trace file")
    if text:
        try:
            return from_text(data.decode("utf-8"))
        except UnicodeDecodeError:
            raise TraceShapeError("text trace is not valid UTF-8") from None
    return from_bytes(data)
