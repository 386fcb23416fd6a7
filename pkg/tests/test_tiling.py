import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lbmtask import lbm
from lbmtask.lbm import LbmParams
from lbmtask.tiling import (Placement, TileKind, TilingError, WriteTracker, classify_tiles,
                            copy_counter, gather_tiles, init_tiles, pull_ghosts, push_ghosts,
                            stream_collide_tile)

dims3 = st.tuples(st.integers(1, 9), st.integers(1, 9), st.integers(1, 9))


def indexed_block(dims, model=lbm.D3Q19):
    """Block whose every grid entry holds a distinct value (its flat index)."""
    b = lbm.init_block(dims, LbmParams(), model)
    b.flip[...] = np.arange(b.flip.size, dtype=float).reshape(b.flip.shape)
    b.flop[...] = -np.arange(b.flop.size, dtype=float).reshape(b.flop.shape)
    return b


@settings(max_examples=60, deadline=None)
@given(dims=dims3, size=dims3)
def test_tiles_form_an_exact_ordered_cover(dims, size):
    b = lbm.init_block(dims, LbmParams())
    tiles = init_tiles(b, size)
    cover = np.zeros(dims, dtype=int)
    for t in tiles:
        cover[tuple(slice(l - 1, h - 1) for l, h in zip(t.lo, t.hi))] += 1
        # only trailing tiles may be smaller than requested
        for a in range(3):
            if t.shape[a] < min(size[a], dims[a]):
                assert t.hi[a] == dims[a] + 1
    assert np.all(cover == 1)
    assert sum(t.volume for t in tiles) == np.prod(dims)
    assert [t.lo for t in tiles] == sorted(t.lo for t in tiles)


def test_tile_counts():
    b = lbm.init_block((64, 64, 64), LbmParams())
    tiles = init_tiles(b, 32)
    assert len(tiles) == 8 and all(t.shape == (32, 32, 32) for t in tiles)
    b = lbm.init_block((48, 32, 32), LbmParams())
    assert [t.shape for t in init_tiles(b, 32)] == [(32, 32, 32), (16, 32, 32)]
    b = lbm.init_block((5, 5, 5), LbmParams())
    assert [t.shape for t in init_tiles(b, 32)] == [(5, 5, 5)]
    with pytest.raises(TilingError):
        init_tiles(b, 0)
    with pytest.raises(TilingError):
        init_tiles(b, (4, 4))


def test_alias_tiles_are_views():
    b = lbm.init_block((8, 8, 8), LbmParams())
    tiles = init_tiles(b, 4)
    t = tiles[3]
    t.flip[1, 1, 1, 0] = 42.0
    assert b.flip[t.lo[0], t.lo[1], t.lo[2], 0] == 42.0
    assert np.shares_memory(t.flop, b.flop)
    with pytest.raises(TilingError):
        pull_ghosts(t, b, 0)
    with pytest.raises(TilingError):
        push_ghosts(t, b, 0)


def test_copy_tiles_own_storage():
    b = lbm.init_block((8, 8, 8), LbmParams(), initial="perturbed")
    tiles = init_tiles(b, 4, TileKind.COPY)
    for t in tiles:
        assert not np.shares_memory(t.flip, b.flip)
        assert np.array_equal(t.flip, b.flip[t._window()])


@settings(max_examples=25, deadline=None)
@given(dims=dims3, size=dims3)
def test_pull_fills_the_full_shell_and_leaves_interior(dims, size):
    b = indexed_block(dims)
    tiles = init_tiles(b, size, TileKind.COPY)
    for t in tiles:
        t.flip[...] = np.nan
        pull_ghosts(t, b, 0)
        window = b.flip[t._window()]
        shell = np.ones(t.flip.shape[:3], dtype=bool)
        shell[1:-1, 1:-1, 1:-1] = False
        assert np.array_equal(t.flip[shell], window[shell])
        assert np.all(np.isnan(t.interior(t.flip)))


def shell_mask(shape):
    m = np.zeros(shape, dtype=bool)
    m[0], m[-1] = True, True
    m[:, 0], m[:, -1] = True, True
    m[:, :, 0], m[:, :, -1] = True, True
    return m


@settings(max_examples=25, deadline=None)
@given(dims=dims3, size=dims3)
def test_push_writes_each_tile_shell_once(dims, size):
    b = indexed_block(dims)
    tiles = init_tiles(b, size, TileKind.COPY)
    tracker = WriteTracker(b)
    marker = np.zeros(tuple(n + 2 for n in dims), dtype=bool)
    for t in tiles:
        t.flop[...] = 7.0 + t.lo[0]
        before = b.flop.copy()
        push_ghosts(t, b, 0, tracker)
        changed = np.any(b.flop != before, axis=-1)
        expected = np.zeros_like(changed)
        box = tuple(slice(l, h) for l, h in zip(t.lo, t.hi))
        expected[box] = shell_mask(t.shape)
        assert np.array_equal(changed, expected)
        marker |= changed
    assert tracker.max_writes == 1
    assert np.array_equal(tracker.counts.astype(bool), marker)


def test_push_layers_cover_interfaces_in_1d_split():
    b = indexed_block((16, 4, 4))
    tiles = init_tiles(b, (4, 4, 4), TileKind.COPY)
    tracker = WriteTracker(b)
    for t in tiles:
        push_ghosts(t, b, 0, tracker)
    # away from the y/z faces only the x layers next to interfaces are written
    core = tracker.counts[:, 2:4, 2:4].any(axis=(1, 2))
    assert np.nonzero(core)[0].tolist() == [1, 4, 5, 8, 9, 12, 13, 16]


def test_single_tile_push_then_gather_reproduces_block():
    p = LbmParams()
    b = lbm.init_block((5, 4, 3), p, initial="perturbed", seed=1)
    tiles = init_tiles(b, 8, TileKind.COPY)
    (t,) = tiles.tiles
    stream_collide_tile(t, 0, p)
    push_ghosts(t, b, 0)
    mask = shell_mask((5, 4, 3))
    assert np.array_equal(b.interior(b.flop)[mask], t.interior(t.flop)[mask])
    gather_tiles(b, tiles, 1)
    assert np.array_equal(b.interior(b.flop), t.interior(t.flop))
    snapshot = b.flop.copy()
    gather_tiles(b, tiles, 1)
    assert np.array_equal(b.flop, snapshot)


@settings(max_examples=15, deadline=None)
@given(dims=st.tuples(st.integers(2, 8), st.integers(2, 8), st.integers(2, 8)),
       size=st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)),
       seed=st.integers(0, 1000))
def test_tiled_steps_match_untiled(dims, size, seed):
    p = LbmParams(tau=0.7, u0=(0.02, -0.01, 0.0))
    ref = lbm.init_block(dims, p, initial="perturbed", seed=seed)
    expect = lbm.advance(ref, p, 3)
    alias = lbm.init_block(dims, p, initial="perturbed", seed=seed)
    copy = lbm.init_block(dims, p, initial="perturbed", seed=seed)
    atiles = init_tiles(alias, size, TileKind.ALIAS)
    ctiles = init_tiles(copy, size, TileKind.COPY)
    lbm.boundaries(alias, alias.src(0))
    lbm.boundaries(copy, copy.src(0))
    for s in range(3):
        for t in atiles:
            stream_collide_tile(t, s, p)
        lbm.boundaries(alias, alias.dst(s))
        for t in ctiles:
            pull_ghosts(t, copy, s)
        for t in ctiles:
            stream_collide_tile(t, s, p)
            push_ghosts(t, copy, s)
        lbm.boundaries(copy, copy.dst(s))
    gather_tiles(copy, ctiles, 3)
    assert np.array_equal(alias.interior(alias.src(3)), ref.interior(expect))
    assert np.array_equal(copy.interior(copy.src(3)), ref.interior(expect))


def test_alias_variant_moves_no_data():
    p = LbmParams()
    b = lbm.init_block((8, 8, 8), p)
    copy_counter.clear()
    tiles = init_tiles(b, 4)
    for s in range(2):
        for t in tiles:
            stream_collide_tile(t, s, p)
    gather_tiles(b, tiles, 2)
    assert sum(copy_counter.values()) == 0


def placements(tiles):
    return ["O" if t.placement is Placement.OUTER else "I" for t in tiles]


def test_classification_along_exchange_axis():
    b = lbm.init_block((8, 4, 4), LbmParams())
    x_faces = [(0, "low"), (0, "high")]
    tiles = classify_tiles(init_tiles(b, (2, 4, 4)), b, x_faces)
    assert placements(tiles) == ["O", "I", "I", "O"]
    tiles = classify_tiles(init_tiles(b, (4, 4, 4)), b, x_faces)
    assert placements(tiles) == ["O", "O"] and tiles.inner == []


def test_classification_ring_in_plane():
    b = lbm.init_block((8, 8, 1), LbmParams(), lbm.D2Q9)
    tiles = init_tiles(b, (2, 2, 1))  # default: faces the D2Q9 model streams across
    grid = np.array(placements(tiles)).reshape(4, 4)
    ring = np.full((4, 4), "O")
    ring[1:3, 1:3] = "I"
    assert np.array_equal(grid, ring)


def test_default_classification_counts_all_faces_in_3d():
    b = lbm.init_block((64, 64, 64), LbmParams())
    tiles = init_tiles(b, 16)
    assert len(tiles.inner) == 8 and len(tiles.outer) == 56
    assert all(all(2 <= l // 16 + 1 <= 3 for l in t.lo) for t in tiles.inner)
