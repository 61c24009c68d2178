"""Time the numba kernels against their numpy fallbacks, plus one end-to-end run.

    python benchmarks/bench_kernels.py [--repeat 20] [--tokens 1024]

Kernel rows call ``numba_impl``/``numpy_impl`` directly so both run in one
process.  The pipeline row spawns a fresh interpreter per backend with
MEDAKV_DISABLE_NUMBA set accordingly.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from medakv import _kernels

PIPELINE = """
import time
from medakv import _kernels
from medakv.allocator import CompressionConfig
from medakv.harness.pipeline import run_pipeline
from medakv.harness.workload import generate_workload
from medakv.model import ModelConfig
_kernels.warmup()
cfg = ModelConfig(num_layers=8, num_heads=4, model_dim=64, seed=0)
wl = generate_workload(0, {tokens}, cfg, needles=3)
run_pipeline(wl, CompressionConfig(rho=0.1), cfg, steps=2)
t0 = time.perf_counter()
for _ in range({repeat}):
    run_pipeline(wl, CompressionConfig(rho=0.1), cfg, steps=8)
print((time.perf_counter() - t0) / {repeat})
"""


def inputs(n: int, rng: np.random.Generator) -> dict:
    logits = rng.normal(size=(n, n))
    probs = _kernels.numpy_impl.softmax_rows(logits)
    keys = rng.normal(size=(n, 64))
    keep = max(1, n // 10)
    conserved = np.sort(rng.choice(n, keep, replace=False))
    less = np.setdiff1d(np.arange(n), conserved)
    target = rng.integers(0, keep, size=less.size)
    return {
        "softmax_rows": (logits,),
        "entropy_rows": (probs,),
        "column_sums": (np.tril(probs),),
        "cosine_matrix": (keys[less], keys[conserved]),
        "argmax_rows": (rng.normal(size=(n, keep)),),
        "merge_groups": (keys, conserved, less, target),
    }


def bench_kernels(n: int, repeat: int) -> None:
    args = inputs(n, np.random.default_rng(0))
    print(f"kernels at n={n} (best of {repeat}, ms)")
    print(f"{'kernel':<16}{'numpy':>10}{'numba':>10}{'speedup':>9}")
    for name, a in args.items():
        row = []
        for impl in (_kernels.numpy_impl, _kernels.numba_impl):
            fn = getattr(impl, name)
            fn(*a)
            row.append(1e3 * min(timeit.repeat(lambda: fn(*a), number=1, repeat=repeat)))
        print(f"{name:<16}{row[0]:>10.3f}{row[1]:>10.3f}{row[0] / row[1]:>8.1f}x")


def bench_pipeline(tokens: int, repeat: int) -> None:
    print(f"\nend-to-end run (L=8, H=4, D=64, {tokens} tokens, 8 decode steps, mean s)")
    out = {}
    for backend, flag in (("numpy", "1"), ("numba", "0")):
        env = dict(os.environ, MEDAKV_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", PIPELINE.format(tokens=tokens, repeat=repeat)],
                             env=env, capture_output=True, text=True, check=True)
        out[backend] = float(res.stdout.strip())
        print(f"{backend:<16}{out[backend]:>10.4f}")
    print(f"{'speedup':<16}{out['numpy'] / out['numba']:>9.2f}x")


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--tokens", type=int, default=1024)
    a = p.parse_args()
    if _kernels.numba_impl is None:
        sys.exit("numba is not importable; nothing to compare")
    bench_kernels(a.tokens, a.repeat)
    bench_pipeline(a.tokens, max(1, a.repeat // 10))


if __name__ == "__main__":
    main()
