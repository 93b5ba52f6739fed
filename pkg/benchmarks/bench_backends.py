"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_backends.py [--sizes 100 500 1000] [--repeat 5]

Both backends run in this process; the numpy one is the path selected by
RIESZGAS_BACKEND=numpy.
"""
import argparse
import timeit

import numpy as np

from rieszgas import GasModel, KernelSpec, SamplerParams, energy_delta, total_energy
from rieszgas.kernel import quadratic
from rieszgas.sampler import _energy_grad, make_rng, new_chain_state, advance


def best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 500, 1000])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    model = GasModel(KernelSpec.coulomb(3), quadratic(), 1.0)
    rng = np.random.default_rng(0)
    for n in args.sizes:
        x = rng.normal(size=(n, 3))
        p = rng.normal(size=3)
        print(f"N={n}")
        for be in ("numba", "numpy"):
            # warm the JIT before timing
            total_energy(x, model, backend=be)
            _energy_grad(x, model, be)
            energy_delta(x, model, 0, p, backend=be)
            number = max(1, 20_000 // n) if be == "numba" else max(1, 2000 // n)
            t_e = best(lambda: total_energy(x, model, backend=be), args.repeat, number)
            t_g = best(lambda: _energy_grad(x, model, be), args.repeat, number)
            t_d = best(lambda: energy_delta(x, model, n // 2, p, backend=be), args.repeat, 50)
            params = SamplerParams(algorithm="mala", step_size=1e-3, resync_every=0)
            st = new_chain_state(x.copy(), model, float(n * n), make_rng(1), params, be)
            steps = 50 if be == "numba" else 5
            advance(st, model, params, 1, backend=be)
            t_m = best(lambda: advance(st, model, params, steps, backend=be), args.repeat, 1) / steps
            print(f"  {be:6s} energy {t_e * 1e3:8.3f} ms  energy+grad {t_g * 1e3:8.3f} ms  "
                  f"delta {t_d * 1e6:8.2f} us  mala step {t_m * 1e3:8.3f} ms")


if __name__ == "__main__":
    main()
