#!/usr/bin/env python3
"""Fluctuations of the telegraph model: V^N(T) from coupled pairs against the limiting SDE.

    python3 scripts/run_clt.py --batches 10 --out out/clt
"""
import argparse
import os

import numpy as np

from msgn import HybridState
from msgn.models import telegraph
from msgn.stats import ConvergenceReport, clt_compare, clt_csv, clt_summary


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=float, default=2.0)
    ap.add_argument("--N", type=float, default=4096)
    ap.add_argument("--M-N", dest="M_N", type=int, default=500)
    ap.add_argument("--M-sde", dest="M_sde", type=int, default=5000)
    ap.add_argument("--sde-steps", type=int, default=2**10)
    ap.add_argument("--batches", type=int, default=1)
    ap.add_argument("--seed", type=int, default=100)
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", default="out/clt")
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    net = telegraph()
    z0 = HybridState([1.0], [1])
    pvals = []
    for b in range(args.batches):
        c = clt_compare(net, z0, args.T, args.N, args.M_N, args.M_sde, args.seed + b,
                        workers=args.workers, sde_steps=args.sde_steps)
        pvals.append(float(c.ks_p.min()))
        print(f"batch {b} (seed {args.seed + b})")
        print(clt_summary(c))
        with open(os.path.join(args.out, f"report_{b}.csv"), "w") as fh:
            fh.write(clt_csv(c, [f"telegraph batch {b} seed {args.seed + b}"]))
        if b == 0:
            with open(os.path.join(args.out, "plot.script"), "w") as fh:
                fh.write(ConvergenceReport(T=args.T, seed=args.seed, rows=[], clt=c).plot_script())
    ok = int(np.sum(np.array(pvals) > 0.01))
    print(f"KS p > 0.01 in {ok}/{args.batches} batches")


if __name__ == "__main__":
    main()
