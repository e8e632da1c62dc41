"""Compare the compiled integrator kernel against the NumPy fallback.

    python benchmarks/bench_kernels.py [--modes 61 211] [--repeat 3]

Both backends run the same adaptive storage simulation; the script prints
wall time, step counts and the largest difference in the final state.
"""

import argparse
import time

import numpy as np

from photon_memory_sim import SechEnvelope, SystemParams, omega_X, simulate
from photon_memory_sim.kernels import BACKENDS


def run(backend, params, env, pulse, repeat):
    best = float("inf")
    rec = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        rec = simulate(params, env, pulse, tol=1e-9, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, rec


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--modes", type=int, nargs="+", default=[61, 211])
    ap.add_argument("--tc", type=float, default=0.5)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    if "compiled" not in BACKENDS:
        print("compiled extension not built; only the fallback is available")
    print(f"{'N':>5} {'backend':>9} {'seconds':>9} {'steps':>7} {'eta(t2)':>10} {'max |dpsi|':>11}")
    for n in args.modes:
        params = SystemParams.reference(tc=args.tc, n_modes=n, kappa_loss=2 * np.pi * 0.33)
        env = SechEnvelope.from_tc(args.tc)
        pulse = omega_X(params, env)
        results = {name: run(name, params, env, pulse, args.repeat) for name in BACKENDS}
        ref = results["python"][1].final_state.amps
        for name, (sec, rec) in results.items():
            diff = np.max(np.abs(rec.final_state.amps - ref))
            print(f"{n:>5} {name:>9} {sec:>9.3f} {rec.stats['accepted']:>7} "
                  f"{rec.final_eta:>10.6f} {diff:>11.2e}")
        if "compiled" in results:
            print(f"{'':>5} speedup {results['python'][0] / results['compiled'][0]:.1f}x")


if __name__ == "__main__":
    main()
