"""Debiased vs plug-in RMSE over a grid of (n, p+q, sigma2) cells.

Writes one CSV row per cell (same columns as `medfx benchmark`).
Example: python scripts/benchmark_grid.py --n 500,1000 --dims 100,800 --sigma2 0.1,0.5 --reps 100 --out grid.csv
"""

import argparse
import sys
import time

from medfx.cli import rows_csv
from medfx.simlab import SimConfig, benchmark


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--n", default="500,1000,1250")
    ap.add_argument("--dims", default="100,800,2500", help="p+q values (split evenly)")
    ap.add_argument("--sigma2", default="0.1,0.5")
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--seed", type=int, default=SimConfig.master_seed)
    ap.add_argument("--threads", type=int)
    ap.add_argument("--out", default="-")
    args = ap.parse_args(argv)
    rows = []
    for n in map(int, args.n.split(",")):
        for d in map(int, args.dims.split(",")):
            for s2 in map(float, args.sigma2.split(",")):
                cfg = SimConfig(n=n, p=d // 2, q=d - d // 2, sigma2=s2, reps=args.reps, master_seed=args.seed)
                t0 = time.perf_counter()
                row = benchmark(cfg, args.threads)
                print(f"n={n} p+q={d} sigma2={s2:g}: debiased {row.rmse_debiased:.4f} ({row.sd_debiased:.4f}), "
                      f"naive {row.rmse_naive:.4f} ({row.sd_naive:.4f}), coverage {row.coverage:.2f}, "
                      f"{time.perf_counter() - t0:.0f}s", file=sys.stderr)
                rows.append(row)
    text = rows_csv(rows)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as f:
            f.write(text)


if __name__ == "__main__":
    main()
