"""Numba vs numpy timings for the hot kernels, plus end-to-end slide encoding.

    python3 benchmarks/bench_kernels.py            # kernel table
    python3 benchmarks/bench_kernels.py --encode   # also 50k x 1024 encodes, both backends
    python3 benchmarks/bench_kernels.py --encode --unimodal   # plus the slow one-mode slide

Kernel rows compare ``*_nb`` against ``*_np`` in one process and check that
both return the same result. The encode rows run the CLI in a subprocess
with ``CTISQA_DISABLE_NUMBA`` unset or set, single-threaded.
"""

import argparse
import json
import os
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from ctisqa import _kernels as K


def best_of(fn, repeat):
    fn()  # warm-up, includes JIT compilation on the numba path
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_rows(repeat, scale):
    rng = np.random.default_rng(0)
    n, d, k = int(20000 * scale), 256, 16
    x = rng.standard_normal((n, d)).astype(np.float32)
    c = rng.standard_normal((k, d))
    labels, _ = K.assign_nearest_np(x, c)
    sums, counts = K.cluster_sums_np(x, labels, k)
    cent = sums / np.maximum(counts, 1)[:, None]
    buf = rng.integers(0, 256, int(8_000_000 * scale), dtype=np.uint8)

    def hart(fn):
        def run():
            lab, cen, cnt = labels.copy(), cent.copy(), counts.copy()
            return fn(x, lab, cen, cnt, 0.0), lab
        return run

    cases = [
        ("assign_nearest", f"{n}x{d}, K={k}",
         lambda: K.assign_nearest_np(x, c), lambda: K.assign_nearest_nb(x, c)),
        ("sq_dist_to_point", f"{n}x{d}",
         lambda: K.sq_dist_to_point_np(x, c[0]), lambda: K.sq_dist_to_point_nb(x, c[0])),
        ("cluster_sums", f"{n}x{d}, K={k}",
         lambda: K.cluster_sums_np(x, labels, k), lambda: K.cluster_sums_nb(x, labels, k)),
        ("hartigan_pass", f"{n}x{d}, K={k}",
         hart(K.hartigan_pass_np), hart(K.hartigan_pass_nb)),
        ("fnv1a64", f"{buf.size} bytes",
         lambda: K.fnv1a64_np(buf), lambda: K.fnv1a64_nb(buf)),
    ]
    rows = []
    for name, size, f_np, f_nb in cases:
        same = _same(f_np(), f_nb())
        t_np = best_of(f_np, repeat)
        t_nb = best_of(f_nb, repeat)
        rows.append((name, size, t_np, t_nb, same))
    return rows


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(u, v) for u, v in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b) or bool(np.allclose(a, b, rtol=1e-12, atol=1e-9))
    return a == b


def encode_row(n_modes, disable_numba, tmp):
    """Encode one 50k x 1024 slide in a fresh process; returns (seconds, peak MB)."""
    slides = Path(tmp) / f"slides-{n_modes}"
    if not (slides / "manifest.jsonl").exists():
        subprocess.run([sys.executable, "-m", "ctisqa", "synth", "slides", "--count", "1",
                        "--n-patches", "50000", "--dim", "1024", "--n-modes", str(n_modes),
                        "--out", str(slides), "--quiet"], check=True)
    env = dict(os.environ)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        env[var] = "1"
    env["CTISQA_DISABLE_NUMBA"] = "1" if disable_numba else ""
    out = Path(tmp) / f"enc-{n_modes}-{int(disable_numba)}"
    code = ("import resource, sys, time\n"
            "from ctisqa.cli import main\n"
            "t = time.perf_counter()\n"
            f"rc = main(['encode', '--manifest', {str(slides / 'manifest.jsonl')!r}, "
            f"'--out', {str(out)!r}, '--quiet'])\n"
            "dt = time.perf_counter() - t\n"
            "print(dt, resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024, rc)\n")
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    dt, mb, rc = res.stdout.split()
    return float(dt), float(mb), int(rc)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scale", type=float, default=1.0, help="problem-size multiplier")
    ap.add_argument("--encode", action="store_true", help="run the 50k x 1024 encode rows too")
    ap.add_argument("--unimodal", action="store_true",
                    help="add a one-mode slide to the encode rows (minutes per backend)")
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args()
    if K.numba is None:
        sys.exit("numba is not importable; nothing to compare")
    from threadpoolctl import threadpool_limits
    threadpool_limits(1)
    K.numba.set_num_threads(1)

    results = {"kernels": [], "encode": []}
    print(f"{'kernel':<18} {'size':<20} {'numpy s':>9} {'numba s':>9} {'speedup':>8}  same")
    for name, size, t_np, t_nb, same in kernel_rows(args.repeat, args.scale):
        print(f"{name:<18} {size:<20} {t_np:9.4f} {t_nb:9.4f} {t_np / t_nb:8.1f}x  {same}")
        results["kernels"].append({"kernel": name, "size": size, "numpy_s": t_np,
                                   "numba_s": t_nb, "same": same})

    if args.encode:
        print(f"\n{'encode 50000x1024':<26} {'backend':<8} {'wall s':>8} {'peak MB':>8}")
        with tempfile.TemporaryDirectory() as tmp:
            for n_modes in (16, 1) if args.unimodal else (16,):
                for disable in (False, True):
                    dt, mb, rc = encode_row(n_modes, disable, tmp)
                    backend = "numpy" if disable else "numba"
                    label = f"{n_modes}-mode mixture"
                    print(f"{label:<26} {backend:<8} {dt:8.1f} {mb:8.0f}" + ("" if rc == 0 else "  (errors)"))
                    results["encode"].append({"n_modes": n_modes, "backend": backend,
                                              "wall_s": dt, "peak_mb": mb, "exit": rc})
    if args.json:
        Path(args.json).write_text(json.dumps(results, indent=2) + "\n")


if __name__ == "__main__":
    main()
