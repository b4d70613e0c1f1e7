"""Compiled kernels vs the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times the batched tridiagonal solve on its own and a full forward batch of
the two-fidelity diffusion model (17 points, as one unscented iteration
evaluates), once with each backend.
"""
import argparse
import timeit

import numpy as np

from ukinv import _kernels_py, problems
from ukinv.forward import Fidelity
from ukinv.problems import TWOFID_THETA_REF, DiffusionModel

try:
    from ukinv import _kernels as _compiled
except ImportError:
    _compiled = None


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def bench_solve(impl, k, n, repeat):
    rng = np.random.default_rng(0)
    lower, upper = rng.uniform(-1, 0, (2, k, n))
    diag = 2.5 + rng.uniform(0, 1, (k, n))
    rhs = rng.standard_normal((k, n))
    return best_of(lambda: impl.tridiag_solve_batch(lower, diag, upper, rhs), repeat, 20)


def bench_forward(impl, repeat):
    model = DiffusionModel()
    thetas = np.asarray(TWOFID_THETA_REF) + 0.1 * np.random.default_rng(1).standard_normal((17, 8))
    saved = problems.tridiag_solve_batch, problems.diffusion_system
    problems.tridiag_solve_batch, problems.diffusion_system = impl.tridiag_solve_batch, impl.diffusion_system
    try:
        return best_of(lambda: model.evaluate_many(thetas, Fidelity.HIGH), repeat, 20)
    finally:
        problems.tridiag_solve_batch, problems.diffusion_system = saved


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    impls = [("python", _kernels_py)]
    if _compiled is not None:
        impls.append(("cython", _compiled))
    else:
        print("compiled extension not built; timing the fallback only")

    cases = [(f"tridiag solve k={k} n={n}", lambda impl, k=k, n=n: bench_solve(impl, k, n, args.repeat))
             for k, n in ((1, 1023), (17, 1023), (17, 63), (200, 255))]
    cases.append(("twofid forward batch (17 pts)", lambda impl: bench_forward(impl, args.repeat)))

    print(f"{'case':<32}" + "".join(f"{name:>12}" for name, _ in impls) + ("     speedup" if len(impls) > 1 else ""))
    for label, fn in cases:
        times = [fn(impl) for _, impl in impls]
        line = f"{label:<32}" + "".join(f"{t * 1e3:>10.3f}ms" for t in times)
        if len(times) > 1:
            line += f"{times[0] / times[1]:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
