"""Command line: ``lbmtask run`` for benchmarks, ``lbmtask fit`` for scaling fits."""
from __future__ import annotations

import argparse
import sys

from . import scalefit
from .bench import (BenchConfig, ConfigError, config_fields, run, warm_up, write_csv,
                    write_exchange_csv)

# flag name -> (BenchConfig field, converter)
_RUN_FLAGS = {
    "nx": int, "ny": int, "nz": int, "steps": int, "mode": str, "tiling": str,
    "schedule": str, "ranks": int, "workers": int, "pattern": str, "latency_ms": float,
    "tau": float, "init": str, "seed": int, "u0": float, "walls": str,
}


def parse_tile(text: str):
    parts = text.lower().replace(",", "x").split("x")
    vals = tuple(int(p) for p in parts)
    if len(vals) == 1:
        return vals * 3
    if len(vals) != 3:
        raise ValueError(f"tile must be N or NxNxN, got {text!r}")
    return vals


def read_config_file(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment. Keys may use dashes."""
    out = {}
    known = set(config_fields())
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = parse_tile(value) if key == "tile" else _RUN_FLAGS[key](value)
    return out


def build_config(args: argparse.Namespace) -> BenchConfig:
    values = read_config_file(args.config) if args.config else {}
    for name in list(_RUN_FLAGS) + ["tile"]:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return BenchConfig(**values)


def _add_run(sub):
    p = sub.add_parser("run", help="run one benchmark configuration")
    for name, conv in _RUN_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=conv, default=None)
    p.add_argument("--tile", type=parse_tile, default=None, help="N or NxNxN")
    p.add_argument("--config", help="file of key=value lines; flags override it")
    p.add_argument("--csv", help="append a result row to this CSV")
    p.add_argument("--dot", help="write the task graph of the first two steps here")
    p.add_argument("--exchange-csv", help="write per-exchange timings here")


def _add_fit(sub):
    p = sub.add_parser("fit", help="fit a scaling model to a timing CSV")
    p.add_argument("csv")
    p.add_argument("--model", choices=("weak", "strong"), default="weak")
    p.add_argument("--ref-seconds", type=float, default=None,
                   help="reference time for normalization (default: smallest core count)")
    p.add_argument("--powers-of-two", action="store_true",
                   help="only use core counts that are powers of two")


def cmd_run(args) -> int:
    cfg = build_config(args)
    warm_up()
    result = run(cfg, dot=bool(args.dot))
    if args.csv:
        write_csv(args.csv, [result])
    if args.dot and result.dot is not None:
        with open(args.dot, "w") as fh:
            fh.write(result.dot)
    if args.exchange_csv:
        write_exchange_csv(args.exchange_csv, result)
    print(f"seconds={result.seconds:.6f}")
    print(f"mlups_total={result.mlups_total:.6f}")
    print(f"mlups_per_core={result.mlups_per_core:.6f}")
    print(f"checksum={result.checksum}")
    if result.graph is not None:
        g = result.graph
        print(f"graph_nodes={g.nodes} graph_edges={g.edges} max_antichain={g.max_antichain}")
    return 0


def cmd_fit(args) -> int:
    points = scalefit.read_points(args.csv, args.ref_seconds)
    keep = scalefit.powers_of_two if args.powers_of_two else None
    fit = scalefit.fit_weak(points, keep) if args.model == "weak" else scalefit.fit_strong(points, keep)
    sys.stdout.write(scalefit.format_fit(fit))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lbmtask")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run(sub)
    _add_fit(sub)
    args = parser.parse_args(argv)
    try:
        return cmd_run(args) if args.command == "run" else cmd_fit(args)
    except (ConfigError, scalefit.FitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
