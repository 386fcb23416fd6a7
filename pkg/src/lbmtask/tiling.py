"""Tiles: task-level sub-boxes of a block.

Alias tiles are views into the block grids and move no data. Copy tiles own
their grids (with a one-cell ghost shell) and talk to the block, which acts
as the ghost buffer, through ``pull_ghosts``/``push_ghosts``/``gather_tiles``.
"""
from __future__ import annotations

import enum
import itertools
from collections import Counter
from dataclasses import dataclass, field

import numba
import numpy as np

from .lbm import LatticeBlock, LbmParams, stream_collide as _stream_collide
from .taskgraph import RegionHandle

# Number of block<->tile copy operations performed, by operation name.
copy_counter: Counter = Counter()


class TileKind(enum.Enum):
    ALIAS = "alias"
    COPY = "copy"


class Placement(enum.Enum):
    OUTER = "outer"
    INNER = "inner"


class TilingError(ValueError):
    pass


@dataclass(eq=False)
class Tile:
    """Interior box ``[lo, hi)`` in block array coordinates."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]
    kind: TileKind
    block: LatticeBlock = field(repr=False)
    region: RegionHandle | None = None
    placement: Placement | None = None
    grids: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    @property
    def volume(self) -> int:
        return int(np.prod(self.shape))

    def _window(self):
        return tuple(slice(l - 1, h + 1) for l, h in zip(self.lo, self.hi))

    def grid(self, index: int) -> np.ndarray:
        """Tile-local grid ``index`` (0 = flip, 1 = flop) including ghosts."""
        if self.kind is TileKind.ALIAS:
            return self.block.grids[index][self._window()]
        return self.grids[index]

    @property
    def flip(self):
        return self.grid(0)

    @property
    def flop(self):
        return self.grid(1)

    def src(self, step: int) -> np.ndarray:
        return self.grid(step % 2)

    def dst(self, step: int) -> np.ndarray:
        return self.grid((step + 1) % 2)

    def interior(self, grid: np.ndarray) -> np.ndarray:
        return grid[tuple(slice(1, n + 1) for n in self.shape)]


@dataclass
class TileSet:
    tiles: list[Tile]
    tile_size: tuple[int, int, int]

    def __iter__(self):
        return iter(self.tiles)

    def __len__(self):
        return len(self.tiles)

    def __getitem__(self, i):
        return self.tiles[i]

    @property
    def outer(self) -> list[Tile]:
        return [t for t in self.tiles if t.placement is Placement.OUTER]

    @property
    def inner(self) -> list[Tile]:
        return [t for t in self.tiles if t.placement is Placement.INNER]


def _normalize_size(tile_size) -> tuple[int, int, int]:
    if isinstance(tile_size, int):
        tile_size = (tile_size,) * 3
    size = tuple(int(s) for s in tile_size)
    if len(size) != 3 or min(size) < 1:
        raise TilingError(f"tile size must be three positive integers, got {tile_size}")
    return size


def init_tiles(block: LatticeBlock, tile_size, kind: TileKind = TileKind.ALIAS,
               register=None) -> TileSet:
    """Cut ``block`` into tiles ordered lexicographically by origin.

    Trailing tiles absorb the remainder when a dimension is not divisible.
    ``register`` (e.g. ``Runtime.register_region``) gives each tile a region
    handle. Copy tiles are initialised from the block's ``flip``.
    """
    size = _normalize_size(tile_size)
    starts = [range(1, n + 1, s) for n, s in zip(block.dims, size)]
    tiles = []
    for origin in itertools.product(*starts):
        hi = tuple(min(o + s, n + 1) for o, s, n in zip(origin, size, block.dims))
        tile = Tile(tuple(origin), hi, kind, block)
        if kind is TileKind.COPY:
            shape = tuple(n + 2 for n in tile.shape) + (block.model.Q,)
            flip = np.array(block.flip[tile._window()], order="C")
            tile.grids = [flip, np.zeros(shape)]
            copy_counter["init"] += 1
        if register is not None:
            tile.region = register(f"tile{len(tiles)}")
        tiles.append(tile)
    return classify_tiles(TileSet(tiles, size), block)


def boundary_faces(block: LatticeBlock) -> set[tuple[int, str]]:
    """Faces ``(axis, "low"|"high")`` whose ghosts are filled from interior layers.

    That is every face populations stream across: rank-exchange faces,
    periodic faces and walls alike. For D3Q19 these are all six.
    """
    vel = block.model.velocities
    return {(a, side) for a in range(3) if np.any(vel[:, a] != 0) for side in ("low", "high")}


def classify_tiles(tileset: TileSet, block: LatticeBlock, faces=None) -> TileSet:
    """Mark tiles touching any of ``faces`` as outer, the rest as inner.

    ``faces`` defaults to :func:`boundary_faces`.
    """
    faces = boundary_faces(block) if faces is None else set(faces)
    for t in tileset:
        touches = any(
            (side == "low" and t.lo[a] == 1) or (side == "high" and t.hi[a] == block.dims[a] + 1)
            for a, side in faces
        )
        t.placement = Placement.OUTER if touches else Placement.INNER
    return tileset


def stream_collide_tile(tile: Tile, step: int, params: LbmParams) -> None:
    n = tile.shape
    _stream_collide(tile.src(step), tile.dst(step), (1, 1, 1), (n[0] + 1, n[1] + 1, n[2] + 1),
                    params, tile.block.model)


def _require_copy(tile: Tile, op: str):
    if tile.kind is not TileKind.COPY:
        raise TilingError(f"{op} is only defined for copy tiles")


@numba.njit(nogil=True, cache=True)
def _copy_shell(src, dst, s0, s1, s2, d0, d1, d2, n0, n1, n2, width):
    """Copy the cells of an ``n0 x n1 x n2`` box lying within ``width`` of its faces."""
    q = src.shape[3]
    for x in range(n0):
        xin = width <= x < n0 - width
        for y in range(n1):
            if xin and width <= y < n1 - width and n2 > 2 * width:
                for z in range(width):
                    for i in range(q):
                        dst[d0 + x, d1 + y, d2 + z, i] = src[s0 + x, s1 + y, s2 + z, i]
                for z in range(n2 - width, n2):
                    for i in range(q):
                        dst[d0 + x, d1 + y, d2 + z, i] = src[s0 + x, s1 + y, s2 + z, i]
            else:
                for z in range(n2):
                    for i in range(q):
                        dst[d0 + x, d1 + y, d2 + z, i] = src[s0 + x, s1 + y, s2 + z, i]


def pull_ghosts(tile: Tile, block: LatticeBlock, step: int) -> None:
    """Fill the full ghost shell of the tile's read grid from the block cells around it."""
    _require_copy(tile, "pull_ghosts")
    n = tile.shape
    _copy_shell(block.src(step), tile.src(step), *(l - 1 for l in tile.lo), 0, 0, 0,
                n[0] + 2, n[1] + 2, n[2] + 2, 1)
    copy_counter["pull"] += 1


def push_ghosts(tile: Tile, block: LatticeBlock, step: int, tracker=None) -> None:
    """Copy the outermost interior layer of the tile's write grid into the block."""
    _require_copy(tile, "push_ghosts")
    n = tile.shape
    _copy_shell(tile.dst(step), block.dst(step), 1, 1, 1, *tile.lo, n[0], n[1], n[2], 1)
    if tracker is not None:
        tracker.record_shell(tile)
    copy_counter["push"] += 1


def gather_tiles(block: LatticeBlock, tiles: TileSet, step: int) -> None:
    """Copy copy-tile interiors holding the state before ``step`` into ``block.src(step)``.

    Alias tiles share storage with the block and are skipped.
    """
    block_grid = block.src(step)
    for t in tiles:
        if t.kind is not TileKind.COPY:
            continue
        blk = tuple(slice(l, h) for l, h in zip(t.lo, t.hi))
        block_grid[blk] = t.interior(t.src(step))
        copy_counter["gather"] += 1


class WriteTracker:
    """Counts writes per block cell to check that pushes never overlap."""

    def __init__(self, block: LatticeBlock):
        self.counts = np.zeros(tuple(n + 2 for n in block.dims), dtype=np.int64)

    def record_shell(self, tile: Tile) -> None:
        mask = np.zeros(tile.shape, dtype=bool)
        mask[0, :, :] = mask[-1, :, :] = True
        mask[:, 0, :] = mask[:, -1, :] = True
        mask[:, :, 0] = mask[:, :, -1] = True
        self.counts[tuple(slice(l, h) for l, h in zip(tile.lo, tile.hi))] += mask

    def reset(self):
        self.counts[...] = 0

    @property
    def max_writes(self) -> int:
        return int(self.counts.max())
