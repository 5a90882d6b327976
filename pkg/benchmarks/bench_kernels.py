#!/usr/bin/env python3
"""Benchmark the compiled channel kernel against the pure-Python fallback.

The per-tick plant/controller/sensing loop dominates protocol simulation
runtime; both backends implement it with bit-identical arithmetic, so this
also re-checks output parity on a realistic workload.

Run:  python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from fastnose._kernels import get_backend
from fastnose.config import load_config
from fastnose.olfactometer import ODOURS
from fastnose.simulate import simulate_single_channel


def run_case(backend, n_ms, with_odour):
    cfg = load_config()
    conc = None
    if with_odour:
        conc = np.zeros((len(ODOURS), n_ms))
        conc[0, n_ms // 3 : 2 * n_ms // 3] = 1.0
    t0 = time.perf_counter()
    out = simulate_single_channel(
        cfg, sensor_id=1, protocol="A", n_ms=n_ms, conc=conc, seed=1,
        backend=backend,
    )
    return time.perf_counter() - t0, out


def main():
    pure = get_backend("pure")
    try:
        compiled = get_backend("compiled")
    except ImportError:
        print("compiled kernel not built; run `python setup.py build_ext --inplace`")
        return 1

    print(f"{'workload':<28} {'pure':>10} {'compiled':>10} {'speedup':>9}  parity")
    for n_ms, with_odour, label in (
        (5_000, False, "5 s cycling, clean air"),
        (5_000, True, "5 s cycling, odour pulse"),
        (30_000, True, "30 s cycling, odour pulse"),
    ):
        t_p, out_p = run_case(pure, n_ms, with_odour)
        t_c, out_c = run_case(compiled, n_ms, with_odour)
        same = all(
            np.array_equal(out_p[k], out_c[k]) for k in ("r", "t_rec", "t_true", "v_cmd")
        )
        print(
            f"{label:<28} {t_p * 1e3:>8.1f}ms {t_c * 1e3:>8.1f}ms "
            f"{t_p / t_c:>8.1f}x  {'bit-identical' if same else 'MISMATCH'}"
        )
        if not same:
            return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
