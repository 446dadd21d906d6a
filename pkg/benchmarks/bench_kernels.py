#!/usr/bin/env python3
"""Compare the numba and numpy kernels on realistic sizes.

Run: python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from voroto import _kernels
from voroto.dataset import sample_spec
from voroto.homogenize import BaseMaterial, q4_element_stiffness
from voroto.voronoi import cell_centers


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_density(repeat):
    spec = sample_spec(np.random.default_rng(0))
    px, py = cell_centers(120, 120)
    args = (px.ravel(), py.ravel(), spec.sites[:, 0].copy(), spec.sites[:, 1].copy(),
            spec.params.beta, spec.params.alpha, spec.params.theta, spec.k)
    _kernels.density_numba(*args)  # compile
    t_np, a = best_of(lambda: _kernels.density_numpy(*args), repeat)
    t_nb, b = best_of(lambda: _kernels.density_numba(*args), repeat)
    return "density 120x120", t_np, t_nb, np.max(np.abs(a - b))


def bench_energy(repeat):
    rng = np.random.default_rng(1)
    w = rng.uniform(size=14400)
    U = rng.normal(size=(14400, 8, 3))
    KE = q4_element_stiffness(BaseMaterial())
    _kernels.energy_numba(w, U, KE)
    t_np, a = best_of(lambda: _kernels.energy_numpy(w, U, KE), repeat)
    t_nb, b = best_of(lambda: _kernels.energy_numba(w, U, KE), repeat)
    return "energy 14400 elems", t_np, t_nb, np.max(np.abs(a - b)) / np.max(np.abs(a))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        print("numba not available; nothing to compare")
        return
    print(f"{'kernel':<22}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>9}{'max diff':>11}")
    for name, t_np, t_nb, diff in (bench_density(args.repeat), bench_energy(args.repeat)):
        print(f"{name:<22}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>9.1f}{diff:>11.1e}")


if __name__ == "__main__":
    main()
