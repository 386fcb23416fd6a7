"""In-process ranks and ghost exchange along one decomposition axis.

Ranks are threads sharing one :class:`Communicator`. Rank ``k`` and rank
``k + 1`` meet at interface ``k`` (rank ``k``'s high face, rank ``k + 1``'s
low face); with periodic wrap-around there are ``nranks`` interfaces.
Each interface is a blocking send-receive between its two ranks.

The order in which a rank walks its two interfaces decides the pattern:

* ``serialized`` walks them by interface number. Interface ``k`` then can
  only start once interface ``k - 1`` is finished, so exchanges ripple
  through the communicator one after another.
* ``pairwise`` does its even interface first, then its odd one: two phases
  no matter how many ranks there are.
"""
from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass

import numpy as np

from .lbm import LatticeBlock, init_block, LbmParams


class Pattern(enum.Enum):
    SERIALIZED = "serialized"
    PAIRWISE = "pairwise"


class Face(enum.Enum):
    LOW = "low"
    HIGH = "high"


class CommError(RuntimeError):
    pass


@dataclass(frozen=True)
class CommSpec:
    nranks: int = 1
    axis: int = 0
    periodic: bool = True
    pattern: Pattern = Pattern.PAIRWISE
    injected_latency: float = 0.0  # milliseconds per interface exchange

    def __post_init__(self):
        if self.nranks < 1:
            raise ValueError("nranks must be >= 1")
        if self.axis not in (0, 1, 2):
            raise ValueError("axis must be 0, 1 or 2")
        if not isinstance(self.pattern, Pattern):
            object.__setattr__(self, "pattern", Pattern(self.pattern))

    def interfaces(self, rank: int) -> list[tuple[int, Face]]:
        """Interfaces of ``rank`` as ``(interface_id, own_face)`` in exchange order."""
        n = self.nranks
        out = []
        if rank > 0 or self.periodic:
            out.append(((rank - 1) % n, Face.LOW))
        if rank < n - 1 or self.periodic:
            out.append((rank, Face.HIGH))
        if n == 1:
            return out[:1]
        if self.pattern is Pattern.SERIALIZED:
            out.sort(key=lambda item: item[0])
        else:
            out.sort(key=lambda item: (item[0] % 2, item[0]))
        return out


def pack_layer(grid: np.ndarray, axis: int, index: int) -> bytes:
    """Big-endian float64 of one full layer ordered by (face-local a, face-local b, i)."""
    layer = np.take(grid, index, axis=axis)
    return np.ascontiguousarray(layer, dtype=">f8").tobytes()


def unpack_layer(payload: bytes, grid: np.ndarray, axis: int, index: int, keep_edges=(True, True)) -> None:
    """Write a packed layer into ``grid``.

    ``keep_edges[j]`` False leaves the ghost rows of the j-th face-local
    axis untouched (those belong to a wall bounce-back on that axis).
    """
    q = grid.shape[3]
    face_shape = tuple(s for a, s in enumerate(grid.shape[:3]) if a != axis)
    data = np.frombuffer(payload, dtype=">f8").reshape(face_shape + (q,)).astype(np.float64)
    target = [slice(None)] * 3
    target[axis] = index
    src = [slice(None)] * 2
    for j, keep in enumerate(keep_edges):
        if not keep:
            src[j] = slice(1, face_shape[j] - 1)
            other = [a for a in range(3) if a != axis][j]
            target[other] = slice(1, face_shape[j] - 1)
    grid[tuple(target)] = data[tuple(src)]


class _Rendezvous:
    def __init__(self):
        self.cond = threading.Condition()
        self.payloads: dict[Face, bytes] = {}
        self.done = 0


class Communicator:
    """Shared by all rank threads of one run."""

    def __init__(self, spec: CommSpec, timeout: float = 120.0):
        self.spec = spec
        self.timeout = timeout
        self.timings: list[tuple[int, int, float]] = []  # (rank, step, seconds)
        self._lock = threading.Lock()
        self._meetings: dict[tuple[int, int], _Rendezvous] = {}
        self._aborted = False

    def abort(self) -> None:
        """Wake every rank blocked in an exchange; they raise ``CommError``."""
        with self._lock:
            self._aborted = True
            meetings = list(self._meetings.values())
        for m in meetings:
            with m.cond:
                m.cond.notify_all()

    def _meeting(self, key):
        with self._lock:
            m = self._meetings.get(key)
            if m is None:
                m = self._meetings[key] = _Rendezvous()
            return m

    def _sendrecv(self, key, sides: dict[Face, bytes]) -> dict[Face, bytes]:
        """Deposit outgoing payloads (keyed by sender face), return the peer's."""
        m = self._meeting(key)
        deadline = time.monotonic() + self.timeout
        with m.cond:
            m.payloads.update(sides)
            m.cond.notify_all()
            while len(m.payloads) < 2:
                if self._aborted:
                    raise CommError("communicator aborted")
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise CommError(f"exchange {key} timed out")
                m.cond.wait(remaining)
        if self.spec.injected_latency > 0:
            time.sleep(self.spec.injected_latency / 1000.0)
        received = {f: p for f, p in m.payloads.items() if f not in sides}
        if not received:  # single rank talking to itself
            received = dict(sides)
        with m.cond:
            m.done += 1
            finished = m.done == (2 if len(sides) == 1 else 1)
        if finished:
            with self._lock:
                self._meetings.pop(key, None)
        return received

    def exchange_ghosts(self, rank: int, block: LatticeBlock, grid: np.ndarray, step: int = 0) -> None:
        """Fill ``grid``'s ghost layers on the exchange axis from the neighbours."""
        spec = self.spec
        axis = spec.axis
        n = block.dims[axis]
        others = [a for a in range(3) if a != axis]
        keep = tuple(block.bc.kinds[a] == "periodic" for a in others)
        t0 = time.perf_counter()
        for iface, face in spec.interfaces(rank):
            if spec.nranks == 1:
                sides = {Face.LOW: pack_layer(grid, axis, 1), Face.HIGH: pack_layer(grid, axis, n)}
            else:
                index = 1 if face is Face.LOW else n
                sides = {face: pack_layer(grid, axis, index)}
            received = self._sendrecv((step, iface), sides)
            for sender_face, payload in received.items():
                # a payload from the peer's high face fills our low ghost layer
                ghost = 0 if sender_face is Face.HIGH else n + 1
                unpack_layer(payload, grid, axis, ghost, keep)
        with self._lock:
            self.timings.append((rank, step, time.perf_counter() - t0))


def decompose(global_dims, nranks: int, axis: int = 0):
    """Per-rank ``(dims, origin)`` for an even split along ``axis``."""
    g = tuple(global_dims)
    if g[axis] % nranks:
        raise ValueError(f"{nranks} ranks do not divide {g[axis]} cells along axis {axis}")
    width = g[axis] // nranks
    parts = []
    for r in range(nranks):
        dims = list(g)
        dims[axis] = width
        origin = [0, 0, 0]
        origin[axis] = r * width
        parts.append((tuple(dims), tuple(origin)))
    return parts


def run_ranks(nranks: int, target, *args):
    """Run ``target(rank, *args)`` on one thread per rank; re-raise the first error."""
    errors: list[BaseException | None] = [None] * nranks
    results = [None] * nranks

    def wrap(r):
        try:
            results[r] = target(r, *args)
        except BaseException as exc:  # noqa: BLE001 - re-raised below
            errors[r] = exc

    threads = [threading.Thread(target=wrap, args=(r,), name=f"rank-{r}") for r in range(nranks)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for e in errors:
        if e is not None:
            raise e
    return results


def simulate_exchange_time(spec: CommSpec, per_message_cost: float | None = None, repeats: int = 1) -> float:
    """Wall time (seconds) for all ranks to complete one ghost exchange.

    ``per_message_cost`` (seconds) overrides ``spec.injected_latency``.
    Uses tiny 2x2x2 blocks so the sleep dominates.
    """
    if per_message_cost is not None:
        spec = CommSpec(spec.nranks, spec.axis, spec.periodic, spec.pattern, per_message_cost * 1000.0)
    if spec.injected_latency <= 0:
        raise ValueError("need a positive per-message cost")
    comm = Communicator(spec)
    parts = decompose((2 * spec.nranks, 2, 2), spec.nranks, spec.axis)
    blocks = [init_block(d, LbmParams(), origin=o, global_dims=(2 * spec.nranks, 2, 2)) for d, o in parts]
    barrier = threading.Barrier(spec.nranks + 1)
    done = threading.Barrier(spec.nranks + 1)

    def body(rank):
        for step in range(repeats):
            barrier.wait()
            comm.exchange_ghosts(rank, blocks[rank], blocks[rank].flip, step)
            done.wait()

    threads = [threading.Thread(target=body, args=(r,)) for r in range(spec.nranks)]
    for t in threads:
        t.start()
    best = float("inf")
    for _ in range(repeats):
        barrier.wait()
        t0 = time.perf_counter()
        done.wait()
        best = min(best, time.perf_counter() - t0)
    for t in threads:
        t.join()
    return best
