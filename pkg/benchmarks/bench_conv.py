#!/usr/bin/env python3
"""Benchmark the compiled convolution kernel against the numpy fallback.

Covers the three kernel entry points (forward, input gradient, weight
gradient) on training-shaped and verification-shaped workloads. Run:

    python3 benchmarks/bench_conv.py

Spawns one subprocess per backend (backend choice is fixed at import via
SQZGAN_BACKEND) and prints a speedup table.
"""

import argparse
import json
import os
import subprocess
import sys
import time

CASES = [
    # name, (N, C, H, W), (O, kh), pad, dtype
    ("train 3x3 f32", (16, 16, 16, 16), (16, 3), 1, "float32"),
    ("train 1x1 f32", (16, 16, 16, 16), (16, 1), 0, "float32"),
    ("train 3x3 8x8 f32", (16, 16, 8, 8), (16, 3), 1, "float32"),
    ("verify 3x3 f64", (25, 16, 64, 64), (16, 3), 1, "float64"),
    ("verify 1x1 f64", (25, 16, 64, 64), (3, 1), 0, "float64"),
]


def run_cases():
    import numpy as np

    from sqzgan import backend, kernels

    rng = np.random.default_rng(0)
    rows = []
    for name, (n, c, h, w), (o, k), pad, dtype in CASES:
        x = rng.standard_normal((n, c, h, w)).astype(dtype)
        wt = rng.standard_normal((o, c, k, k)).astype(dtype)
        y = kernels.conv2d_forward(x, wt, pad)
        g = rng.standard_normal(y.shape).astype(dtype)
        macs = n * o * c * k * k * y.shape[2] * y.shape[3]
        timings = {}
        for label, fn in (
            ("fwd", lambda: kernels.conv2d_forward(x, wt, pad)),
            ("igrad", lambda: kernels.conv2d_input_grad(g, wt, pad, (h, w))),
            ("wgrad", lambda: kernels.conv2d_weight_grad(x, g, pad, (k, k))),
        ):
            fn()  # warm up
            reps, elapsed = 0, 0.0
            t0 = time.perf_counter()
            while elapsed < 0.4:
                fn()
                reps += 1
                elapsed = time.perf_counter() - t0
            timings[label] = elapsed / reps
        rows.append({"case": name, "macs": macs, "backend": backend.name(),
                     **{k: v for k, v in timings.items()}})
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--backend", choices=("compiled", "python", "both"),
                        default="both")
    parser.add_argument("--inner", action="store_true",
                        help=argparse.SUPPRESS)  # subprocess mode
    args = parser.parse_args()

    if args.inner:
        print(json.dumps(run_cases()))
        return

    backends = ["compiled", "python"] if args.backend == "both" else [args.backend]
    results = {}
    for name in backends:
        env = dict(os.environ, SQZGAN_BACKEND=name)
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--inner"],
            env=env, capture_output=True, text=True, check=True)
        results[name] = {row["case"]: row for row in json.loads(out.stdout)}

    hdr = f"{'case':<22} {'op':<6} " + "".join(f"{b:>14}" for b in backends)
    if len(backends) == 2:
        hdr += f"{'speedup':>10}"
    print(hdr)
    print("-" * len(hdr))
    for case in results[backends[0]]:
        macs = results[backends[0]][case]["macs"]
        for op in ("fwd", "igrad", "wgrad"):
            cells = []
            for b in backends:
                t = results[b][case][op]
                cells.append(f"{t * 1e3:8.2f} ms" if op != "fwd"
                             else f"{t * 1e3:5.2f} ms/{macs / t / 1e9:4.1f}G")
            line = f"{case:<22} {op:<6} " + "".join(f"{c:>14}" for c in cells)
            if len(backends) == 2:
                ratio = results["python"][case][op] / results["compiled"][case][op]
                line += f"{ratio:9.1f}x"
            print(line)


if __name__ == "__main__":
    main()
