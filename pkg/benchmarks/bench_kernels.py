"""Wall-clock comparison of the numba and numpy kernel backends.

Runs each batch kernel on the figure preset with both backends, checks that
they agree, and prints the best of ``--repeat`` timings. JIT compilation is
warmed up before timing.

    python3 benchmarks/bench_kernels.py --paths 200000
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from regimefx import _accel
from regimefx._kernels import chain_batch, series_batch, spot_batch
from regimefx._rng import path_seeds
from regimefx.cli import load_config, preset_path
from regimefx.esscher import calibrate
from regimefx.pricing import quantity_arrays
from regimefx.simulation import Dynamics


def best_of(fn, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def max_gap(a, b) -> float:
    if isinstance(a, tuple):
        return max(max_gap(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--paths", type=int, default=200_000)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--horizon", type=float, default=1.0)
    args = parser.parse_args(argv)

    if not _accel.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    cfg = load_config(preset_path())
    _, rn = calibrate(cfg.regimes, cfg.spec, cfg.k0)
    dyn = Dynamics.risk_neutral(cfg.regimes, rn).kernel_args()
    seeds = path_seeds(cfg.seed, args.paths)
    i0, t = cfg.initial_state, args.horizon
    occ, _ = chain_batch(cfg.rate.pi, i0, t, seeds, use_numba=False)
    q = quantity_arrays(occ, t, cfg.regimes, rn)

    kernels = {
        "chain": lambda nb: chain_batch(cfg.rate.pi, i0, t, seeds, use_numba=nb),
        "spot": lambda nb: spot_batch(cfg.rate.pi, i0, t, seeds, use_numba=nb, **dyn),
        "series": lambda nb: series_batch(cfg.s0, 1.0, t, q[:, 0], q[:, 1], q[:, 3], q[:, 4],
                                          q[:, 5], q[:, 6], use_numba=nb),
    }
    print(f"{args.paths} paths, best of {args.repeat}")
    print(f"{'kernel':<8} {'numba s':>10} {'numpy s':>10} {'speedup':>8} {'max diff':>10}")
    for name, fn in kernels.items():
        fn(True)
        t_nb, out_nb = best_of(lambda: fn(True), args.repeat)
        t_np, out_np = best_of(lambda: fn(False), args.repeat)
        print(f"{name:<8} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>7.1f}x {max_gap(out_nb, out_np):>10.2e}")


if __name__ == "__main__":
    main()
