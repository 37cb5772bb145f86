"""Compare the compiled and NumPy Euler-Maruyama backends.

    python benchmarks/bench_kernels.py [--n-traj N] [--steps S] [--repeat R]

Both backends integrate the same multiwell ensemble from the same noise;
the script reports wall time per step and the largest state difference.
"""

import argparse
import time

import numpy as np

from response_forecast import kernels
from response_forecast.dynamics import CoarseMap, Perturbation, Potential


def run(backend, x0, gauss, upack, vpack, proj, dt, eps):
    x = x0.copy()
    out = np.empty((x.shape[0], 1, len(proj)))
    kern = kernels.get_backend(backend)
    t0 = time.perf_counter()
    bad = kern(x, gauss, dt, np.sqrt(2 * dt), upack, vpack, proj, eps, 0, out, 0, 1e6)
    elapsed = time.perf_counter() - t0
    if bad >= 0:
        raise RuntimeError(f"{backend}: replicate {bad} diverged")
    return x, elapsed


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-traj", type=int, default=256)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    pot = Potential.multiwell()
    pert = Perturbation.gaussian()
    cmap = CoarseMap(2, (0,))
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(args.n_traj, 2))
    gauss = rng.standard_normal((args.n_traj, args.steps, 2))
    proj = np.asarray(cmap.indices, dtype=np.intp)
    common = (x0, gauss, pot.terms.packed(), pert.terms.packed(), proj, 1e-3, 0.1)

    backends = ["python"]
    try:
        kernels.get_backend("cython")
        backends.insert(0, "cython")
    except ImportError:
        print("compiled extension not built; timing the NumPy backend only")

    results = {}
    for name in backends:
        times = []
        for _ in range(args.repeat):
            x, dt = run(name, *common)
            times.append(dt)
        results[name] = (x, min(times))
        per = min(times) / (args.steps * args.n_traj) * 1e9
        print(f"{name:>7}: {min(times):8.3f} s  ({per:7.1f} ns per replicate-step)")

    if len(results) == 2:
        diff = np.abs(results["cython"][0] - results["python"][0]).max()
        speedup = results["python"][1] / results["cython"][1]
        print(f"speed-up {speedup:.1f}x; max |x_cython - x_python| = {diff:.2e}")


if __name__ == "__main__":
    main()
