"""RMSE over a (K1, K2) grid for one simulation cell, printed as a K1 x K2 table.

Example: python scripts/sensitivity_grid.py --n 1250 --dims 1500 --reps 50 --out sens.csv
"""

import argparse
import sys

import numpy as np

from medfx.cli import DEFAULT_K_GRID, parse_k_grid, rows_csv
from medfx.simlab import SimConfig, sensitivity


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--n", type=int, default=1250)
    ap.add_argument("--dims", type=int, default=1500, help="p+q (split evenly)")
    ap.add_argument("--sigma2", type=float, default=0.1)
    ap.add_argument("--reps", type=int, default=50)
    ap.add_argument("--K-grid", dest="K_grid", help='"K1,K2;K1,K2;..." (default {2.25,2.5,2.75,3}^2)')
    ap.add_argument("--seed", type=int, default=SimConfig.master_seed)
    ap.add_argument("--threads", type=int)
    ap.add_argument("--out")
    args = ap.parse_args(argv)
    grid = parse_k_grid(args.K_grid) if args.K_grid else DEFAULT_K_GRID
    d = args.dims
    cfg = SimConfig(n=args.n, p=d // 2, q=d - d // 2, sigma2=args.sigma2, reps=args.reps, master_seed=args.seed)
    rows = sensitivity(cfg, grid, args.threads)
    k1s, k2s = sorted({r.K1 for r in rows}), sorted({r.K2 for r in rows})
    table = np.full((len(k1s), len(k2s)), np.nan)
    for r in rows:
        table[k1s.index(r.K1), k2s.index(r.K2)] = r.rmse_debiased
    print("K1 \\ K2 " + " ".join(f"{k:>8g}" for k in k2s))
    for k, line in zip(k1s, table):
        print(f"{k:>7g} " + " ".join(f"{v:8.4f}" for v in line))
    print(f"naive RMSE {rows[0].rmse_naive:.4f}; max/min cell RMSE {np.nanmax(table) / np.nanmin(table):.2f}")
    if args.out:
        with open(args.out, "w") as f:
            f.write(rows_csv(rows))
        print(f"wrote {args.out}", file=sys.stderr)


if __name__ == "__main__":
    main()
