"""Time the compiled selective-scan kernel against the numpy fallback.

Usage::

    python benchmarks/bench_scan.py [--repeats 5]

Shapes mirror the default model: the first stage sees a 32x32 token grid
with expanded width 32, the second a 16x16 grid with width 64.
"""
import argparse
import timeit

import numpy as np

from amsdb.core import scan
from amsdb.core.tensor import Tensor

SHAPES = {
    "stage1 fwd+bwd": dict(N=8, K=4, L=32 * 32, E=32, S=8),
    "stage2 fwd+bwd": dict(N=8, K=4, L=16 * 16, E=64, S=8),
}


def make_inputs(rng, N, K, L, E, S, dtype=np.float32):
    arrays = [
        rng.standard_normal((N, K, L, E)),
        rng.uniform(0.05, 0.8, (N, K, L, E)),
        -rng.uniform(0.3, 2.0, (K, E, S)),
        rng.standard_normal((N, K, L, S)),
        rng.standard_normal((N, K, L, S)),
        rng.standard_normal((K, E)),
    ]
    return [Tensor(a.astype(dtype), requires_grad=True) for a in arrays]


def run_once(inputs, backend):
    y = scan.selective_scan(*inputs, backend=backend)
    y.sum().backward()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = scan.available_backends()
    if "compiled" not in backends:
        print("compiled kernel not built; only the python fallback is available")
    print(f"{'case':<16} " + " ".join(f"{b:>12}" for b in backends) + "   speedup")
    for name, shape in SHAPES.items():
        inputs = make_inputs(rng, **shape)
        times = {}
        for b in backends:
            run_once(inputs, b)  # warm up
            times[b] = min(timeit.repeat(lambda: run_once(inputs, b), number=1, repeat=args.repeats))
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{name:<16} " + " ".join(f"{times[b] * 1e3:>10.1f}ms" for b in backends) + f"   {speed:6.1f}x")


if __name__ == "__main__":
    main()
