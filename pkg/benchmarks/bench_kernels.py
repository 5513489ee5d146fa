"""Compare the compiled and pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Levenshtein runs on pairs shaped like entity surfaces; frame RMS on a 20 s
16 kHz clip with 30 ms frames and a 10 ms hop.
"""

from __future__ import annotations

import argparse
import importlib
import random
import statistics
import timeit

import numpy as np

from deidkit import _pykernels


def workloads(seed: int = 0):
    rng = random.Random(seed)
    alphabet = "abcdefghijklmnopqrstuvwxyz .-"
    pairs = [
        ("".join(rng.choice(alphabet) for _ in range(rng.randint(4, 40))), "".join(rng.choice(alphabet) for _ in range(rng.randint(4, 40))))
        for _ in range(2000)
    ]
    clip = np.random.default_rng(seed).integers(-3000, 3000, 16000 * 20).astype(np.int16)
    return pairs, clip


def bench(mod, pairs, clip, repeat):
    lev = timeit.repeat(lambda: [mod.levenshtein(a, b) for a, b in pairs], number=1, repeat=repeat)
    rms = timeit.repeat(lambda: mod.frame_rms(clip, 480, 160), number=1, repeat=repeat)
    return statistics.median(lev), statistics.median(rms)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    pairs, clip = workloads()
    backends = [("python", _pykernels)]
    try:
        backends.append(("cython", importlib.import_module("deidkit._ckernels")))
    except ImportError:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
    results = {name: bench(mod, pairs, clip, args.repeat) for name, mod in backends}
    print(f"{'backend':<8} {'levenshtein x2000 (ms)':>24} {'frame_rms 20 s (ms)':>22}")
    for name, (lev, rms) in results.items():
        print(f"{name:<8} {lev * 1e3:>24.2f} {rms * 1e3:>22.2f}")
    if "cython" in results:
        (pl, pr), (cl, cr) = results["python"], results["cython"]
        print(f"speedup  {pl / cl:>23.1f}x {pr / cr:>21.1f}x")


if __name__ == "__main__":
    main()
