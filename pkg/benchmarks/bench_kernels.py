"""Compare the compiled and numpy kernels on a fleet of realistic size.

    python3 benchmarks/bench_kernels.py [--n 100] [--m 16] [--mc 8] [--L 1000] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from srpmask import _backend
from srpmask.distributions import rng_stream
from srpmask.latent import FleetArrays
from srpmask.sim import Scenario, generate_fleet


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--m", type=int, default=16)
    ap.add_argument("--mc", type=float, default=8.0)
    ap.add_argument("--L", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    sim = generate_fleet(Scenario(n=args.n, m=args.m, m_c=args.mc), rng_stream(0))
    model = Scenario(n=1, m=1, m_c=1).component_model
    arrays = FleetArrays(sim.fleet)
    lf = np.ascontiguousarray(arrays.logf_table(model))
    lR = np.ascontiguousarray(arrays.logR_table(model))
    u = rng_stream(1).random((arrays.n, args.L, arrays.R))
    w = np.full((arrays.n, args.L), 1.0 / args.L)
    print(f"fleet: n={arrays.n} m={arrays.m} max r={arrays.R} failures={sim.fleet.total_failures} L={args.L}")

    parents = _backend.python_kernels.sample_parents(lf, arrays.r, arrays.m, u)[1]
    cases = {
        "sample_parents": lambda k: k.sample_parents(lf, arrays.r, arrays.m, u),
        "tally_weighted": lambda k: k.tally_weighted(parents, arrays.r, arrays.m, w),
        "censor_counts": lambda k: k.censor_counts_per_sample(parents, arrays.r, arrays.m),
        "fleet_loglik": lambda k: k.fleet_loglik(lf, lR, arrays.r, arrays.m),
    }
    names = _backend.available()
    print(f"{'kernel':<16}" + "".join(f"{b + ' [ms]':>16}" for b in names) + (f"{'speedup':>10}" if len(names) > 1 else ""))
    for label, fn in cases.items():
        times = []
        for b in names:
            k = _backend.get(b)
            times.append(min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat)) * 1e3)
        line = f"{label:<16}" + "".join(f"{t:>16.2f}" for t in times)
        if len(times) > 1:
            line += f"{times[1] / times[0]:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
