"""Total ghost-exchange time of the two send/receive orderings versus rank count.

    python3 scripts/exchange_patterns.py --cost-ms 10 --ranks 2 4 8 16
"""
import argparse

from lbmtask.comm import CommSpec, Pattern, simulate_exchange_time
from lbmtask.scalefit import ScalePoint, fit_weak


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cost-ms", type=float, default=10.0)
    ap.add_argument("--ranks", type=int, nargs="+", default=[2, 4, 8, 16])
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    cost = args.cost_ms / 1000
    print("ranks  " + "  ".join(f"{p.value:>11s}" for p in Pattern))
    table = {p: [] for p in Pattern}
    for n in args.ranks:
        for p in Pattern:
            table[p].append(simulate_exchange_time(CommSpec(n, pattern=p), cost, args.repeats))
        print(f"{n:5d}  " + "  ".join(f"{table[p][-1] * 1e3:9.1f}ms" for p in Pattern))
    if len(args.ranks) >= 2:
        for p in Pattern:
            fit = fit_weak([ScalePoint(n, t) for n, t in zip(args.ranks, table[p])])
            print(f"{p.value}: slope {fit.mu * 1e3:.2f} ms per rank, intercept {fit.tau0 * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
