"""Weak-scaling sweep: fixed lattice per rank, growing rank count, then a weak-model fit.

    python3 scripts/weak_scaling.py --per-rank 32 --ranks 1 2 4 8 --mode tasked --csv weak.csv
"""
import argparse

from lbmtask.bench import BenchConfig, run, warm_up, write_csv
from lbmtask.scalefit import ScalePoint, fit_weak, format_fit


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--per-rank", type=int, default=32, help="cube edge of each rank's block")
    ap.add_argument("--ranks", type=int, nargs="+", default=[1, 2, 4, 8])
    ap.add_argument("--mode", default="tasked")
    ap.add_argument("--tiling", default="alias")
    ap.add_argument("--schedule", default="plain")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--steps", type=int, default=20)
    ap.add_argument("--tile", type=int, default=16)
    ap.add_argument("--pattern", default="pairwise")
    ap.add_argument("--latency-ms", type=float, default=0.0)
    ap.add_argument("--csv", default=None)
    args = ap.parse_args()
    warm_up()

    n = args.per_rank
    results = []
    for r in args.ranks:
        cfg = BenchConfig(nx=n * r, ny=n, nz=n, tile=args.tile, steps=args.steps, mode=args.mode,
                          tiling=args.tiling, schedule=args.schedule, ranks=r, workers=args.workers,
                          pattern=args.pattern, latency_ms=args.latency_ms)
        res = run(cfg)
        results.append(res)
        print(f"ranks={r:3d} seconds={res.seconds:8.3f} mlups/core={res.mlups_per_core:7.2f}")
    if args.csv:
        write_csv(args.csv, results)

    ref = results[0].seconds
    cores = [r.config.cores for r in results]
    if len(set(cores)) >= 2:
        fit = fit_weak([ScalePoint(c, r.seconds / ref) for c, r in zip(cores, results)])
        print(format_fit(fit), end="")


if __name__ == "__main__":
    main()
