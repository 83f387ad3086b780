"""Standardized errors (theta_hat - theta0) / se of the debiased estimator over many replicates.

Prints mean, variance and the empirical coverage of the normal-theory interval, for
one or more slack constants K (used for both weight problems).
Example: python scripts/coverage_study.py --n 1000 --dims 100 --sigma2 0.5 --reps 200 --K 2.75,1.0
"""

import argparse
from dataclasses import replace

import numpy as np

from medfx.pipeline import z_value
from medfx.simlab import SimConfig, benchmark


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--dims", type=int, default=100, help="p+q (split evenly)")
    ap.add_argument("--sigma2", type=float, default=0.5)
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--K", default="2.75")
    ap.add_argument("--level", type=float, default=0.95)
    ap.add_argument("--seed", type=int, default=SimConfig.master_seed)
    ap.add_argument("--threads", type=int)
    args = ap.parse_args(argv)
    d = args.dims
    base = SimConfig(n=args.n, p=d // 2, q=d - d // 2, sigma2=args.sigma2, reps=args.reps, level=args.level,
                     master_seed=args.seed)
    z = z_value(args.level)
    for K in map(float, args.K.split(",")):
        row = benchmark(replace(base, K1=K, K2=K), args.threads)
        ok = [r for r in row.results if r.error is None]
        t = np.array([(r.theta_hat - row.theta0) / r.se for r in ok])
        print(f"K={K:g}: reps {t.size}, mean {t.mean():+.3f}, variance {t.var(ddof=1):.3f}, "
              f"coverage {np.mean(np.abs(t) <= z):.3f}, debiased RMSE {row.rmse_debiased:.4f}, "
              f"naive RMSE {row.rmse_naive:.4f}")


if __name__ == "__main__":
    main()
