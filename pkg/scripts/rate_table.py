#!/usr/bin/env python
"""Print the manufactured-solution error/rate table.

    python scripts/rate_table.py                 # h = 1/4 ... 1/32
    python scripts/rate_table.py --fine          # adds h = 1/64 (several minutes)
"""
import argparse
import time

from chns.config import parse_config
from chns.verification import convergence_study


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--h-list", default="4,8,16,32", help="comma-separated 1/h values")
    ap.add_argument("--fine", action="store_true", help="append 1/h = 64")
    ap.add_argument("--T", type=float, default=0.01)
    args = ap.parse_args()
    nxs = [int(s) for s in args.h_list.split(",")]
    if args.fine:
        nxs.append(64)
    params = parse_config("").params
    t0 = time.time()

    def progress(h, errs):
        print(f"h = 1/{round(1 / h)}: {errs['n_steps']} steps, {time.time() - t0:.1f} s elapsed", flush=True)

    table = convergence_study([1.0 / n for n in nxs], params, args.T, progress=progress)
    print(table.format())


if __name__ == "__main__":
    main()
