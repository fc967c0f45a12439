"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--rank 32] [--batch 640] [--repeat 50]

Also times one short training run per backend on a simulated baseline graph.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from kgsec.embedding import kernels


def bench_kernels(impl, n, m, rank, batch, repeat, seed=0):
    rng = np.random.default_rng(seed)
    E = rng.normal(size=(n, rank))
    R = rng.normal(size=(m, rank, rank))
    trip = np.stack([rng.integers(0, n, batch), rng.integers(0, m, batch), rng.integers(0, n, batch)], 1)
    trip = np.ascontiguousarray(trip, dtype=np.int64)
    w = rng.normal(size=batch)
    gE, gR = np.zeros_like(E), np.zeros_like(R)
    logits = rng.normal(size=(batch, n))
    u = rng.random(batch)
    cases = {
        "theta_batch": lambda: impl.theta_batch(E, R, trip),
        "accumulate_theta_grad": lambda: impl.accumulate_theta_grad(E, R, trip, w, gE, gR),
        "sample_rows": lambda: impl.sample_rows(logits, u),
    }
    return {name: min(timeit.repeat(fn, number=1, repeat=repeat)) for name, fn in cases.items()}


# training runs in a child process so the backend is chosen at import, as in normal use
_TRAIN = """
import time
from kgsec import testbed as tb
from kgsec.embedding import kernels
from kgsec.embedding.model import TrainConfig
from kgsec.embedding.trainers import train
from kgsec.ingestion import MappingConfig, build_graph
spec = tb.build_testbed(0)
conns, accesses, _ = tb.split_events(tb.generate_baseline(spec, 3000, 0))
store = build_graph(spec.topology(), conns, accesses, MappingConfig())
t = time.perf_counter()
train(store, TrainConfig(rank={rank}, epochs={epochs}, seed=0, trainer="energy"))
print(kernels.BACKEND, time.perf_counter() - t)
"""


def bench_training(rank, epochs):
    out = {}
    for pure in ("0", "1"):
        env = dict(os.environ, KGSEC_PURE_PYTHON=pure)
        res = subprocess.run([sys.executable, "-c", _TRAIN.format(rank=rank, epochs=epochs)],
                             env=env, capture_output=True, text=True, check=True)
        backend, secs = res.stdout.split()
        out[backend] = float(secs)
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--m", type=int, default=20)
    ap.add_argument("--rank", type=int, default=32)
    ap.add_argument("--batch", type=int, default=640)
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--epochs", type=int, default=5, help="training epochs per backend (0 skips)")
    args = ap.parse_args()

    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the python backend is available")
    results = {name: bench_kernels(mod, args.n, args.m, args.rank, args.batch, args.repeat)
               for name, mod in backends.items()}
    print(f"n={args.n} m={args.m} rank={args.rank} batch={args.batch} (best of {args.repeat})")
    print(f"{'kernel':<24}" + "".join(f"{b:>14}" for b in results) + f"{'speedup':>10}")
    for kernel in results["python"]:
        row = f"{kernel:<24}" + "".join(f"{results[b][kernel] * 1e3:>12.3f}ms" for b in results)
        if "compiled" in results:
            row += f"{results['python'][kernel] / results['compiled'][kernel]:>9.1f}x"
        print(row)
    if args.epochs and "compiled" in backends:
        t = bench_training(args.rank, args.epochs)
        print(f"\nenergy training, {args.epochs} epochs: compiled {t['compiled']:.2f}s, "
              f"python {t['python']:.2f}s ({t['python'] / t['compiled']:.1f}x)")


if __name__ == "__main__":
    main()
