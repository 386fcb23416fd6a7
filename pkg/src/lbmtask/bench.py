"""Benchmark harness: the timestep loop in serial, fork-join and tasked form."""
from __future__ import annotations

import csv
import enum
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import networkx as nx

from . import lbm
from .comm import Communicator, CommSpec, Pattern, decompose, run_ranks
from .taskgraph import Runtime, TaskGraph, inout, inp, reduction
from .tiling import (TileKind, gather_tiles, init_tiles, pull_ghosts, push_ghosts,
                     stream_collide_tile)

CSV_HEADER = ["mode", "tiling", "schedule", "ranks", "workers", "nx", "ny", "nz", "tile",
              "steps", "seconds", "mlups_total", "mlups_per_core", "checksum"]


class ExecMode(enum.Enum):
    SERIAL = "serial"
    FORKJOIN = "forkjoin"
    TASKED = "tasked"


class Schedule(enum.Enum):
    PLAIN = "plain"
    OVERLAP = "overlap"


class ConfigError(ValueError):
    pass


@dataclass
class BenchConfig:
    nx: int = 64
    ny: int = 64
    nz: int = 64
    tile: tuple[int, int, int] = (32, 32, 32)
    steps: int = 10
    mode: ExecMode = ExecMode.TASKED
    tiling: TileKind = TileKind.ALIAS
    schedule: Schedule = Schedule.PLAIN
    ranks: int = 1
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    pattern: Pattern = Pattern.PAIRWISE
    latency_ms: float = 0.0
    tau: float = 0.8
    init: str = "perturbed"
    seed: int = 0
    u0: float = 0.05
    walls: str = ""

    def __post_init__(self):
        self.mode = ExecMode(self.mode)
        self.tiling = TileKind(self.tiling)
        self.schedule = Schedule(self.schedule)
        self.pattern = Pattern(self.pattern)
        if isinstance(self.tile, int):
            self.tile = (self.tile,) * 3
        self.tile = tuple(int(t) for t in self.tile)
        for name in ("nx", "ny", "nz", "steps", "ranks", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if len(self.tile) != 3 or min(self.tile) < 1:
            raise ConfigError("tile must be >= 1 along every axis")
        if self.schedule is Schedule.OVERLAP and self.mode is not ExecMode.TASKED:
            raise ConfigError("the overlap schedule needs tasked mode")
        if self.schedule is Schedule.OVERLAP and self.tiling is not TileKind.ALIAS:
            raise ConfigError("the overlap schedule is implemented for alias tiling only")
        if self.nx % self.ranks:
            raise ConfigError(f"{self.ranks} ranks do not divide nx={self.nx}")
        if self.init not in lbm.INITIAL_CONDITIONS:
            raise ConfigError(f"unknown initial condition {self.init!r}")
        if any(c not in "xyz" for c in self.walls):
            raise ConfigError(f"walls must be a subset of 'xyz', got {self.walls!r}")
        if self.latency_ms < 0:
            raise ConfigError("latency must be non-negative")
        lbm.LbmParams(tau=self.tau)

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def cores(self) -> int:
        return self.ranks if self.mode is ExecMode.SERIAL else self.ranks * self.workers

    @property
    def params(self) -> lbm.LbmParams:
        return lbm.LbmParams(tau=self.tau, u0=(self.u0, 0.0, 0.0))


@dataclass
class GraphStats:
    nodes: int = 0
    edges: int = 0
    # computed on the first two timesteps only
    window_nodes: int = 0
    window_edges: int = 0
    window_reduced_edges: int = 0
    max_antichain: int = 0


@dataclass
class BenchmarkResult:
    config: BenchConfig
    seconds: float
    phases: dict[str, float]
    mlups_total: float
    mlups_per_core: float
    checksum: str
    graph: GraphStats | None = None
    dot: str | None = None
    exchange_timings: list[tuple[int, int, float]] = field(default_factory=list)

    def csv_row(self) -> list:
        c = self.config
        tile = str(c.tile[0]) if len(set(c.tile)) == 1 else "x".join(map(str, c.tile))
        return [c.mode.value, c.tiling.value, c.schedule.value, c.ranks, c.workers,
                c.nx, c.ny, c.nz, tile, c.steps, f"{self.seconds:.6f}",
                f"{self.mlups_total:.6f}", f"{self.mlups_per_core:.6f}", self.checksum]


def mlups(dims, steps: int, seconds: float, cores: int = 1) -> tuple[float, float]:
    """Mega lattice updates per second, total and per core."""
    if seconds <= 0:
        raise ValueError("seconds must be positive")
    nx, ny, nz = dims
    total = nx * ny * nz * steps / seconds / 1e6
    return total, total / cores


def graph_stats(graph, window_ids) -> GraphStats:
    g = nx.DiGraph()
    window = set(window_ids)
    g.add_nodes_from(window)
    g.add_edges_from((u, v) for u, v in graph.edges() if u in window and v in window)
    reduced = nx.transitive_reduction(g) if g.number_of_nodes() else g
    return GraphStats(
        nodes=len(graph.nodes),
        edges=sum(len(n.predecessors) for n in graph.nodes),
        window_nodes=g.number_of_nodes(),
        window_edges=g.number_of_edges(),
        window_reduced_edges=reduced.number_of_edges(),
        max_antichain=max_antichain(g),
    )


def max_antichain(dag: nx.DiGraph) -> int:
    """Width of a DAG via Dilworth: nodes minus a maximum matching of its closure."""
    if dag.number_of_nodes() == 0:
        return 0
    closure = nx.transitive_closure_dag(dag)
    bip = nx.Graph()
    left = [("L", v) for v in closure.nodes]
    bip.add_nodes_from(left)
    bip.add_nodes_from(("R", v) for v in closure.nodes)
    bip.add_edges_from((("L", u), ("R", v)) for u, v in closure.edges)
    matching = nx.bipartite.hopcroft_karp_matching(bip, top_nodes=left)
    return closure.number_of_nodes() - len(matching) // 2


class _RankContext:
    def __init__(self, cfg: BenchConfig, blocks, comm, want_dot: bool):
        self.cfg = cfg
        self.blocks = blocks
        self.comm = comm
        self.want_dot = want_dot
        self.graph_stats = None
        self.dot = None


def _prime(rank, ctx: _RankContext):
    block = ctx.blocks[rank]
    lbm.boundaries(block, block.src(0))
    ctx.comm.exchange_ghosts(rank, block, block.src(0), step=-1)


def _run_serial(rank, ctx: _RankContext):
    cfg, block, comm = ctx.cfg, ctx.blocks[rank], ctx.comm
    params = cfg.params
    hi = tuple(n + 1 for n in block.dims)
    for s in range(cfg.steps):
        lbm.stream_collide(block.src(s), block.dst(s), (1, 1, 1), hi, params, block.model)
        lbm.boundaries(block, block.dst(s))
        comm.exchange_ghosts(rank, block, block.dst(s), s)


def _run_forkjoin(rank, ctx: _RankContext):
    cfg, block, comm = ctx.cfg, ctx.blocks[rank], ctx.comm
    params = cfg.params
    tiles = init_tiles(block, cfg.tile, cfg.tiling)
    copy = cfg.tiling is TileKind.COPY
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        for s in range(cfg.steps):
            if copy:
                list(pool.map(lambda t: pull_ghosts(t, block, s), tiles))

            def work(t, s=s):
                stream_collide_tile(t, s, params)
                if copy:
                    push_ghosts(t, block, s)

            list(pool.map(work, tiles))  # the barrier before boundaries
            lbm.boundaries(block, block.dst(s))
            comm.exchange_ghosts(rank, block, block.dst(s), s)
    if copy:
        gather_tiles(block, tiles, cfg.steps)


def _submit_plain_alias(rt, tiles, block_region, block, comm, rank, s, params):
    for i, t in enumerate(tiles):
        rt.submit(lambda t=t: stream_collide_tile(t, s, params),
                  [inout(t.region), reduction(block_region)], f"stream_collide s{s} t{i}")
    rt.submit(lambda: lbm.boundaries(block, block.dst(s)), [inout(block_region)], f"boundaries s{s}")
    rt.submit(lambda: comm.exchange_ghosts(rank, block, block.dst(s), s), [inout(block_region)],
              f"exchange_ghosts s{s}")


def _submit_plain_copy(rt, tiles, block_region, block, comm, rank, s, params):
    for i, t in enumerate(tiles):
        rt.submit(lambda t=t: pull_ghosts(t, block, s), [inout(t.region), inp(block_region)],
                  f"pull_ghosts s{s} t{i}")
    for i, t in enumerate(tiles):
        rt.submit(lambda t=t: stream_collide_tile(t, s, params), [inout(t.region)],
                  f"stream_collide s{s} t{i}")
        rt.submit(lambda t=t: push_ghosts(t, block, s), [inp(t.region), reduction(block_region)],
                  f"push_ghosts s{s} t{i}")
    rt.submit(lambda: lbm.boundaries(block, block.dst(s)), [inout(block_region)], f"boundaries s{s}")
    rt.submit(lambda: comm.exchange_ghosts(rank, block, block.dst(s), s), [inout(block_region)],
              f"exchange_ghosts s{s}")


def _submit_overlap(rt, tiles, sentinels, block, comm, rank, s, params):
    # Inner tiles carry only S_inner: reading S_outer would make boundaries(t),
    # a writer of S_outer, wait for them and serialize the exchange after all
    # computation. They still follow outer(t), since outer(t) reads S_inner.
    # With inner tiles off S_outer the edges do not depend on where they are
    # submitted; submitting them last gives boundaries and exchange the lower
    # ids, so FIFO dispatch starts communication before the inner sweep.
    s_outer, s_inner = sentinels
    index = {id(t): i for i, t in enumerate(tiles)}
    for t in tiles.outer:
        rt.submit(lambda t=t: stream_collide_tile(t, s, params),
                  [inout(t.region), reduction(s_outer), inp(s_inner)],
                  f"stream_collide s{s} t{index[id(t)]} outer")
    rt.submit(lambda: lbm.boundaries(block, block.dst(s)), [inout(s_outer)], f"boundaries s{s}")
    rt.submit(lambda: comm.exchange_ghosts(rank, block, block.dst(s), s), [inout(s_outer)],
              f"exchange_ghosts s{s}")
    for t in tiles.inner:
        rt.submit(lambda t=t: stream_collide_tile(t, s, params),
                  [inout(t.region), reduction(s_inner)],
                  f"stream_collide s{s} t{index[id(t)]} inner")


def _submit_steps(rt, cfg: BenchConfig, block, comm, rank: int, steps: int):
    """Submit ``steps`` timesteps; returns (tiles, ids of the first two steps)."""
    params = cfg.params
    tiles = init_tiles(block, cfg.tile, cfg.tiling, register=rt.register_region)
    block_region = rt.register_region("block")
    window = []
    for s in range(steps):
        first = len(rt.graph.nodes)
        if cfg.schedule is Schedule.OVERLAP:
            if s == 0:
                sentinels = (rt.register_region("outer"), rt.register_region("inner"))
            _submit_overlap(rt, tiles, sentinels, block, comm, rank, s, params)
        elif cfg.tiling is TileKind.COPY:
            _submit_plain_copy(rt, tiles, block_region, block, comm, rank, s, params)
        else:
            _submit_plain_alias(rt, tiles, block_region, block, comm, rank, s, params)
        if s < 2:
            window.extend(range(first, len(rt.graph.nodes)))
    return tiles, window


def _run_tasked(rank, ctx: _RankContext):
    cfg, block, comm = ctx.cfg, ctx.blocks[rank], ctx.comm
    with Runtime(cfg.workers, record_events=False) as rt:
        tiles, window = _submit_steps(rt, cfg, block, comm, rank, cfg.steps)
        try:
            rt.wait_all()
        except BaseException:
            comm.abort()
            raise
        if rank == 0:
            ctx.graph_stats = graph_stats(rt.graph, window)
            if ctx.want_dot:
                ctx.dot = rt.graph.to_dot(window)
    if cfg.tiling is TileKind.COPY:
        gather_tiles(block, tiles, cfg.steps)


class _GraphRecorder:
    """Stands in for a Runtime: builds the graph, never runs a task."""

    def __init__(self):
        self.graph = TaskGraph()

    def register_region(self, label: str = ""):
        return self.graph.register_region(label)

    def submit(self, body, accesses=(), label: str = "") -> int:
        return self.graph.add(accesses, label).task_id


def task_graph(cfg: BenchConfig, steps: int | None = None) -> TaskGraph:
    """Rank 0's tasked-mode graph for ``cfg`` (``steps`` defaults to cfg.steps), unexecuted."""
    if cfg.mode is not ExecMode.TASKED:
        raise ConfigError("only tasked mode has a task graph")
    blocks, comm = setup(cfg)
    rec = _GraphRecorder()
    _submit_steps(rec, cfg, blocks[0], comm, 0, cfg.steps if steps is None else steps)
    return rec.graph


_RUNNERS = {
    ExecMode.SERIAL: _run_serial,
    ExecMode.FORKJOIN: _run_forkjoin,
    ExecMode.TASKED: _run_tasked,
}


def _rank_main(rank, ctx: _RankContext):
    try:
        _prime(rank, ctx)
        _RUNNERS[ctx.cfg.mode](rank, ctx)
    except BaseException:
        ctx.comm.abort()
        raise


def setup(cfg: BenchConfig):
    """Blocks (with initial state) and communicator for ``cfg``."""
    bc = lbm.BoundarySpec.with_walls(cfg.walls)
    spec = CommSpec(cfg.ranks, 0, bc.kinds[0] == "periodic", cfg.pattern, cfg.latency_ms)
    blocks = [
        lbm.init_block(d, cfg.params, lbm.D3Q19, cfg.init, origin=o, global_dims=cfg.dims,
                       bc=bc, seed=cfg.seed)
        for d, o in decompose(cfg.dims, cfg.ranks)
    ]
    return blocks, Communicator(spec)


def run(cfg: BenchConfig, dot: bool = False) -> BenchmarkResult:
    """Run one benchmark; timing spans initialisation through the final checksum."""
    t0 = time.perf_counter()
    blocks, comm = setup(cfg)
    ctx = _RankContext(cfg, blocks, comm, dot)
    t1 = time.perf_counter()
    run_ranks(cfg.ranks, _rank_main, ctx)
    t2 = time.perf_counter()
    digest = lbm.checksum(blocks, [b.src(cfg.steps) for b in blocks])
    t3 = time.perf_counter()
    seconds = t3 - t0
    total, per_core = mlups(cfg.dims, cfg.steps, seconds, cfg.cores)
    return BenchmarkResult(
        cfg, seconds, {"init": t1 - t0, "loop": t2 - t1, "output": t3 - t2},
        total, per_core, digest, ctx.graph_stats, ctx.dot, sorted(comm.timings),
    )


def warm_up() -> None:
    """Compile the kernels on a tiny lattice so later timings exclude JIT time."""
    for tiling in (TileKind.ALIAS, TileKind.COPY):
        run(BenchConfig(nx=4, ny=4, nz=4, tile=2, steps=2, workers=1, tiling=tiling))


def write_csv(path, results, append: bool = True) -> None:
    exists = os.path.exists(path) and os.path.getsize(path) > 0
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if not (append and exists):
            w.writerow(CSV_HEADER)
        for r in results:
            w.writerow(r.csv_row())


def write_exchange_csv(path, result: BenchmarkResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "step", "seconds"])
        for rank, step, sec in result.exchange_timings:
            w.writerow([rank, step, f"{sec:.6f}"])


def config_fields() -> list[str]:
    return [f.name for f in fields(BenchConfig)]


def config_dict(cfg: BenchConfig) -> dict:
    d = asdict(cfg)
    for k, v in d.items():
        if isinstance(v, enum.Enum):
            d[k] = v.value
    return d
