"""Compare the compiled and numpy power-flow kernels on random dense networks.

    python3 benchmarks/bench_kernels.py [--sizes 14 57 118] [--repeat 200]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from gridtariff import ieee14, kernels
from gridtariff.powerflow import build_ybus, bus_layout, solve_newton


def random_state(n: int, rng: np.random.Generator):
    """Symmetric sparse-ish admittance with matching shunt-free diagonal and a flat-ish state."""
    mask = np.triu(rng.random((n, n)) < min(1.0, 4.0 / n), 1)
    y = np.where(mask, 1.0 / (rng.uniform(0.01, 0.05, (n, n)) + 1j * rng.uniform(0.05, 0.3, (n, n))), 0)
    y = y + y.T
    Y = -y
    Y[np.diag_indices(n)] = y.sum(axis=1)
    vm = rng.uniform(0.95, 1.05, n)
    va = rng.uniform(-0.2, 0.2, n)
    pvpq = np.arange(1, n, dtype=np.intp)
    pq = np.arange(n // 5 + 1, n, dtype=np.intp)
    return np.ascontiguousarray(Y.real), np.ascontiguousarray(Y.imag), vm, va, pvpq, pq


def bench(backend, args, repeat: int) -> tuple[float, float]:
    G, B, vm, va, pvpq, pq = args
    t_inj = min(timeit.repeat(lambda: backend.power_injections(G, B, vm, va), number=repeat, repeat=3))
    t_jac = min(timeit.repeat(lambda: backend.jacobian_polar(G, B, vm, va, pvpq, pq),
                              number=repeat, repeat=3))
    return t_inj / repeat, t_jac / repeat


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[14, 57, 118, 300])
    ap.add_argument("--repeat", type=int, default=200)
    ns = ap.parse_args()

    backends = [("python", kernels.python_backend)]
    if kernels.compiled_backend is not None:
        backends.append(("cython", kernels.compiled_backend))
    else:
        print("compiled extension not available; timing the numpy backend only")

    rng = np.random.default_rng(0)
    print(f"{'n':>5} {'backend':>8} {'injections [us]':>16} {'jacobian [us]':>14}")
    for n in ns.sizes:
        state = random_state(n, rng)
        for name, be in backends:
            t_inj, t_jac = bench(be, state, ns.repeat)
            print(f"{n:>5} {name:>8} {t_inj * 1e6:>16.1f} {t_jac * 1e6:>14.1f}")

    case = ieee14()
    ybus = build_ybus(case)
    lay = bus_layout(case)
    t = min(timeit.repeat(lambda: solve_newton(case), number=50, repeat=3)) / 50
    print(f"\nieee14 full solve with '{kernels.BACKEND}' backend: {t * 1e3:.3f} ms "
          f"({ybus.n} buses, {len(lay.pvpq)} angle unknowns)")


if __name__ == "__main__":
    main()
