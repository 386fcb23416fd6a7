"""Strong-scaling sweep over worker counts at a fixed lattice, then a strong-model fit.

    python3 scripts/strong_scaling.py --size 64 --workers 1 2 3 4
"""
import argparse

from lbmtask.bench import BenchConfig, run, warm_up
from lbmtask.scalefit import ScalePoint, fit_strong, format_fit


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--tile", type=int, default=16)
    ap.add_argument("--steps", type=int, default=20)
    ap.add_argument("--mode", default="tasked")
    ap.add_argument("--workers", type=int, nargs="+", default=[1, 2, 3, 4])
    ap.add_argument("--repeats", type=int, default=2)
    args = ap.parse_args()
    warm_up()

    n = args.size
    serial = min(run(BenchConfig(nx=n, ny=n, nz=n, steps=args.steps, mode="serial")).seconds
                 for _ in range(args.repeats))
    points = []
    for w in args.workers:
        cfg = BenchConfig(nx=n, ny=n, nz=n, tile=args.tile, steps=args.steps, mode=args.mode, workers=w)
        sec = min(run(cfg).seconds for _ in range(args.repeats))
        points.append(ScalePoint(w, sec / serial))
        print(f"workers={w:3d} seconds={sec:8.3f} speedup={serial / sec:5.2f}")
    if len({p.n for p in points}) >= 3:
        print(format_fit(fit_strong(points)), end="")


if __name__ == "__main__":
    main()
