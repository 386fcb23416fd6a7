"""Plain vs overlapped schedule under injected exchange latency.

    python3 scripts/overlap_demo.py --size 160 --tile 32 --latency-ms 0 25 50 100
"""
import argparse

from lbmtask.bench import BenchConfig, run, warm_up


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=160)
    ap.add_argument("--tile", type=int, default=32)
    ap.add_argument("--steps", type=int, default=5)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--ranks", type=int, default=1)
    ap.add_argument("--latency-ms", type=float, nargs="+", default=[0, 25, 50, 100])
    args = ap.parse_args()
    warm_up()

    n = args.size
    print("latency_ms  plain_s  overlap_s  hidden_ms_per_step")
    for lat in args.latency_ms:
        common = dict(nx=n * args.ranks, ny=n, nz=n, tile=args.tile, steps=args.steps,
                      workers=args.workers, ranks=args.ranks, latency_ms=lat)
        plain = run(BenchConfig(**common)).phases["loop"]
        overlap = run(BenchConfig(**common, schedule="overlap")).phases["loop"]
        hidden = (plain - overlap) / args.steps * 1e3
        print(f"{lat:10.1f}  {plain:7.3f}  {overlap:9.3f}  {hidden:18.1f}")


if __name__ == "__main__":
    main()
