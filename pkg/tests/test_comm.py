import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lbmtask import lbm
from lbmtask.comm import (CommError, CommSpec, Communicator, Face, Pattern, decompose,
                          pack_layer, run_ranks, simulate_exchange_time, unpack_layer)
from lbmtask.lbm import LbmParams


def rank_blocks(nranks, per_rank=(4, 4, 4), walls=""):
    g = (per_rank[0] * nranks,) + tuple(per_rank[1:])
    bc = lbm.BoundarySpec.with_walls(walls)
    blocks = []
    for d, o in decompose(g, nranks):
        b = lbm.init_block(d, LbmParams(), origin=o, global_dims=g, bc=bc)
        # distinguishable values: global cell index * 100 + population
        x = np.arange(d[0] + 2)[:, None, None, None] + o[0]
        y = np.arange(d[1] + 2)[None, :, None, None]
        z = np.arange(d[2] + 2)[None, None, :, None]
        i = np.arange(19)[None, None, None, :]
        b.flop[...] = ((x * 100 + y) * 100 + z) * 100 + i
        blocks.append(b)
    return blocks


def exchange_all(spec, blocks, step=0):
    comm = Communicator(spec, timeout=10)
    run_ranks(spec.nranks, lambda r: comm.exchange_ghosts(r, blocks[r], blocks[r].flop, step))
    return comm


def test_interface_order():
    ser = CommSpec(4, pattern=Pattern.SERIALIZED)
    pair = CommSpec(4, pattern=Pattern.PAIRWISE)
    assert ser.interfaces(0) == [(0, Face.HIGH), (3, Face.LOW)]
    assert ser.interfaces(2) == [(1, Face.LOW), (2, Face.HIGH)]
    assert pair.interfaces(1) == [(0, Face.LOW), (1, Face.HIGH)]
    assert pair.interfaces(2) == [(2, Face.HIGH), (1, Face.LOW)]
    assert CommSpec(3, periodic=False).interfaces(0) == [(0, Face.HIGH)]
    assert CommSpec(1).interfaces(0) == [(0, Face.LOW)]
    with pytest.raises(ValueError):
        CommSpec(0)


def test_pack_format_is_big_endian_full_face():
    b = rank_blocks(1, (3, 4, 5))[0]
    payload = pack_layer(b.flop, 0, 3)
    assert len(payload) == 19 * (4 + 2) * (5 + 2) * 8
    data = np.frombuffer(payload, dtype=">f8")
    # ordered by (face-local y, face-local z, i)
    expect = [b.flop[3, y, z, i] for y in range(6) for z in range(7) for i in range(19)]
    assert np.array_equal(data, expect)


@settings(max_examples=30, deadline=None)
@given(axis=st.integers(0, 2), index=st.integers(0, 4), seed=st.integers(0, 99))
def test_pack_unpack_roundtrip(axis, index, seed):
    rng = np.random.default_rng(seed)
    g = rng.random((5, 5, 5, 19))
    h = np.zeros_like(g)
    unpack_layer(pack_layer(g, axis, index), h, axis, index)
    sl = [slice(None)] * 3
    sl[axis] = index
    assert np.array_equal(h[tuple(sl)], g[tuple(sl)])
    assert np.count_nonzero(h) == np.count_nonzero(g[tuple(sl)])


def test_single_rank_wraps_onto_itself():
    (b,) = rank_blocks(1)
    exchange_all(CommSpec(1), [b])
    assert np.array_equal(b.flop[0], b.flop[4])
    assert np.array_equal(b.flop[5], b.flop[1])


@pytest.mark.parametrize("pattern", list(Pattern))
def test_two_ranks_swap_facing_layers(pattern):
    blocks = rank_blocks(2)
    before = [b.flop.copy() for b in blocks]
    exchange_all(CommSpec(2, pattern=pattern), blocks)
    left, right = blocks
    assert np.array_equal(left.flop[5], before[1][1])
    assert np.array_equal(right.flop[0], before[0][4])
    # periodic wrap between the outer faces
    assert np.array_equal(left.flop[0], before[1][4])
    assert np.array_equal(right.flop[5], before[0][1])
    # nothing else moved
    for b, old in zip(blocks, before):
        assert np.array_equal(b.flop[1:5], old[1:5])


@pytest.mark.parametrize("nranks", [1, 2, 3, 4])
def test_patterns_give_identical_states(nranks):
    a, b = rank_blocks(nranks), rank_blocks(nranks)
    exchange_all(CommSpec(nranks, pattern=Pattern.SERIALIZED), a)
    exchange_all(CommSpec(nranks, pattern=Pattern.PAIRWISE), b)
    for x, y in zip(a, b):
        assert np.array_equal(x.flop, y.flop)


def test_wall_edges_are_left_to_bounce_back():
    blocks = rank_blocks(2, walls="y")
    before = [b.flop.copy() for b in blocks]
    exchange_all(CommSpec(2), blocks)
    left = blocks[0]
    # y ghost rows of the exchanged layer keep their old values, the rest is replaced
    assert np.array_equal(left.flop[5, 0], before[0][5, 0])
    assert np.array_equal(left.flop[5, 5], before[0][5, 5])
    assert np.array_equal(left.flop[5, 1:5], before[1][1, 1:5])


def test_non_periodic_ends_keep_their_ghosts():
    blocks = rank_blocks(3, walls="x")
    before = [b.flop.copy() for b in blocks]
    exchange_all(CommSpec(3, periodic=False), blocks)
    assert np.array_equal(blocks[0].flop[0], before[0][0])
    assert np.array_equal(blocks[2].flop[5], before[2][5])
    assert np.array_equal(blocks[1].flop[0], before[0][4])


def test_decompose():
    parts = decompose((12, 4, 4), 3)
    assert parts == [((4, 4, 4), (0, 0, 0)), ((4, 4, 4), (4, 0, 0)), ((4, 4, 4), (8, 0, 0))]
    with pytest.raises(ValueError):
        decompose((10, 4, 4), 3)


def test_run_ranks_reraises():
    def target(r):
        if r == 1:
            raise KeyError("rank 1")
        return r
    assert run_ranks(3, lambda r: r * 2) == [0, 2, 4]
    with pytest.raises(KeyError):
        run_ranks(3, target)


def test_abort_wakes_waiting_rank():
    blocks = rank_blocks(2)
    comm = Communicator(CommSpec(2), timeout=30)
    errors = []

    def lonely():
        try:
            comm.exchange_ghosts(0, blocks[0], blocks[0].flop)
        except CommError as exc:
            errors.append(exc)

    t = threading.Thread(target=lonely)
    t.start()
    t.join(0.2)
    comm.abort()
    t.join(5)
    assert not t.is_alive() and len(errors) == 1


def test_timeout_surfaces_as_error():
    blocks = rank_blocks(2)
    comm = Communicator(CommSpec(2), timeout=0.1)
    with pytest.raises(CommError):
        comm.exchange_ghosts(0, blocks[0], blocks[0].flop)


def test_exchange_timings_recorded():
    blocks = rank_blocks(2)
    comm = exchange_all(CommSpec(2, injected_latency=5.0), blocks, step=7)
    assert sorted((r, s) for r, s, _ in comm.timings) == [(0, 7), (1, 7)]
    assert all(sec >= 0.005 for _, _, sec in comm.timings)


def test_simulated_exchange_time_patterns():
    cost = 0.01
    assert simulate_exchange_time(CommSpec(1, pattern=Pattern.SERIALIZED), cost) == pytest.approx(
        simulate_exchange_time(CommSpec(1, pattern=Pattern.PAIRWISE), cost), abs=0.005)
    ser = simulate_exchange_time(CommSpec(8, pattern=Pattern.SERIALIZED), cost)
    pair = simulate_exchange_time(CommSpec(8, pattern=Pattern.PAIRWISE), cost)
    assert ser >= 8 * cost
    assert 2 * cost <= pair < 3 * cost
    with pytest.raises(ValueError):
        simulate_exchange_time(CommSpec(2))
