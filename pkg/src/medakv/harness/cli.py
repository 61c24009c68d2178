"""Command line entry point: ``medakv {profile,allocate,compress,run,compare}``.

Every verb accepts ``--config FILE`` (JSON or YAML) whose keys mirror the long
flag names with underscores; flags given on the command line win.
Exit codes: 0 success, 2 usage, 10 file I/O failure, otherwise the
``exit_code`` of the raised :class:`~medakv.errors.MedaError` subclass.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..allocator import CompressionConfig, Strategy, allocate
from ..compressor import compress_caches
from ..entropy import profile
from ..errors import ConfigError, MedaError
from ..model import ModelConfig, causal_attention, prompt_encode
from . import trace as tracefile
from .pipeline import compare_strategies, profile_encoded, rows_to_csv, run_pipeline
from .workload import generate_workload

EXIT_IO = 10

DEFAULTS = {
    "rho": 0.1,
    "strategy": "meda",
    "no_merge": False,
    "no_text_boost": False,
    "recent_ratio": 0.75,
    "seed": 7,
    "layers": 2,
    "heads": 2,
    "dim": 8,
    "prompt_len": 16,
    "layout": None,
    "needles": 0,
    "needle_strength": None,
    "steps": 8,
    "scale_by_model_dim": False,
    "rhos": "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8",
    "seeds": "0",
    "timing": False,
    "text": False,
}


def _add_common(p: argparse.ArgumentParser) -> None:
    # defaults are None so config-file values are only overridden by explicit flags
    p.add_argument("--config", type=Path, help="JSON or YAML file with default option values")
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default=None)
    p.add_argument("--no-merge", action="store_true", default=None)
    p.add_argument("--no-text-boost", action="store_true", default=None)
    p.add_argument("--recent-ratio", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--prompt-len", type=int, default=None)
    p.add_argument("--layout", default=None, help='token layout such as "T4,V200,T20"')
    p.add_argument("--needles", type=int, default=None)
    p.add_argument("--needle-strength", type=float, default=None)
    p.add_argument("--scale-by-model-dim", action="store_true", default=None)
    p.add_argument("--trace", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="medakv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub_profile = sub.add_parser("profile", help="per-layer cross-modal entropy CSV")
    sub_alloc = sub.add_parser("allocate", help="per-layer budget plan CSV")
    sub_comp = sub.add_parser("compress", help="compress a trace into a compressed trace")
    sub_run = sub.add_parser("run", help="end-to-end run on a synthetic workload (JSON report)")
    sub_cmp = sub.add_parser("compare", help="strategy sweep over ratios and seeds (CSV)")
    for p in (sub_profile, sub_alloc, sub_comp, sub_run, sub_cmp):
        _add_common(p)
    sub_comp.add_argument("--text", action="store_true", default=None, help="write the JSON-lines encoding")
    for p in (sub_run, sub_cmp):
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--timing", action="store_true", default=None, help="include wall-clock latency")
    sub_cmp.add_argument("--rhos", default=None, help="comma-separated compression ratios")
    sub_cmp.add_argument("--seeds", default=None, help="comma-separated workload seeds")
    return parser


def _load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text)
    except Exception as exc:  # yaml and json raise unrelated types
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    data = {k.replace("-", "_"): v for k, v in data.items()}
    unknown = set(data) - set(DEFAULTS) - {"trace", "out"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return data


def resolve_options(args: argparse.Namespace) -> dict:
    opts = dict(DEFAULTS)
    opts.update(_load_config(args.config))
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "command"):
            opts[k] = v
    return opts


def _model_cfg(o: dict) -> ModelConfig:
    return ModelConfig(num_layers=int(o["layers"]), num_heads=int(o["heads"]), model_dim=int(o["dim"]),
                       seed=int(o["seed"]), scale_by_model_dim=bool(o["scale_by_model_dim"]))


def _comp_cfg(o: dict) -> CompressionConfig:
    try:
        strategy = Strategy(o["strategy"])
    except ValueError:
        raise ConfigError(f"unknown strategy {o['strategy']!r}") from None
    return CompressionConfig(rho=float(o["rho"]), recent_ratio=float(o["recent_ratio"]), strategy=strategy,
                             merge_enabled=not o["no_merge"], text_boost_enabled=not o["no_text_boost"])


def _workload(o: dict, cfg: ModelConfig, seed: int | None = None):
    kw = {}
    if o["needle_strength"] is not None:
        kw["needle_strength"] = float(o["needle_strength"])
    return generate_workload(int(o["seed"] if seed is None else seed), int(o["prompt_len"]), cfg,
                             layout=o["layout"], needles=int(o["needles"]), **kw)


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def _profile_source(o: dict):
    """Entropy profile plus prompt length, from a trace or a synthetic workload."""
    if o.get("trace"):
        tr = tracefile.load(o["trace"])
        if not (tr.has_queries and tr.is_full):
            raise ConfigError("profiling needs an uncompressed trace with queries")
        scale = 1.0 / np.sqrt(tr.model_dim if o["scale_by_model_dim"] else tr.head_dim)
        prof = profile([l.queries for l in tr.layers], [l.keys for l in tr.layers], tr.modality, scale)
        return prof, tr.prompt_len
    cfg = _model_cfg(o)
    enc = prompt_encode(_workload(o, cfg).prompt, cfg)
    return profile_encoded(enc, cfg, _comp_cfg(o)), len(enc.modality)


def cmd_profile(o: dict) -> None:
    prof, _ = _profile_source(o)
    _emit(prof.to_csv(), o.get("out"))


def cmd_allocate(o: dict) -> None:
    prof, n = _profile_source(o)
    plan = allocate(prof, _comp_cfg(o), np.full(prof.num_layers, n))
    _emit(plan.to_csv(), o.get("out"))


def cmd_compress(o: dict) -> None:
    if not o.get("trace") or not o.get("out"):
        raise ConfigError("compress needs --trace and --out")
    tr = tracefile.load(o["trace"])
    if not (tr.has_queries and tr.is_full):
        raise ConfigError("compression needs an uncompressed trace with queries")
    comp = _comp_cfg(o)
    scale = 1.0 / np.sqrt(tr.model_dim if o["scale_by_model_dim"] else tr.head_dim)
    prof = profile([l.queries for l in tr.layers], [l.keys for l in tr.layers], tr.modality, scale)
    plan = allocate(prof, comp, np.full(tr.num_layers, tr.prompt_len))
    attention = []
    for l in tr.layers:
        if l.attention is not None:
            attention.append(l.attention)
        else:
            attention.append(causal_attention(l.queries, l.keys, scale).mean(axis=0))
    caches, _ = compress_caches(tr.caches(), attention, plan, comp)
    out = tracefile.Trace.from_caches(caches, tr.modality, tr.model_dim)
    tracefile.save(out, o["out"], text=bool(o["text"]) or None)


def cmd_run(o: dict) -> None:
    cfg = _model_cfg(o)
    rep = run_pipeline(_workload(o, cfg), _comp_cfg(o), cfg, int(o["steps"]))
    _emit(rep.to_json(include_timing=bool(o["timing"])) + "\n", o.get("out"))


def _csv_numbers(text, cast):
    if isinstance(text, (list, tuple)):
        return [cast(x) for x in text]
    try:
        return [cast(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad number list {text!r}") from None


def cmd_compare(o: dict) -> None:
    rhos = _csv_numbers(o["rhos"], float)
    seeds = _csv_numbers(o["seeds"], int)
    base = _comp_cfg(o)
    variants = [replace(base, strategy=s) for s in Strategy]
    rows = []
    for s in seeds:
        cfg = replace(_model_cfg(o), seed=s)
        rows += compare_strategies([_workload(o, cfg, s)], rhos, cfg, variants, int(o["steps"]), bool(o["timing"]))
    _emit(rows_to_csv(rows), o.get("out"))


COMMANDS = {
    "profile": cmd_profile,
    "allocate": cmd_allocate,
    "compress": cmd_compress,
    "run": cmd_run,
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        opts = resolve_options(args)
        COMMANDS[args.command](opts)
    except MedaError as exc:
        print(f"medakv: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"medakv: error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
