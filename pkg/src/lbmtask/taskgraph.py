"""Data-flow task runtime.

Tasks declare how they touch data regions (input, output, inout, or inout
as part of a reduction). Dependencies are inferred at submission time and
ready tasks run on a pool of worker threads; the submitting thread joins
in while it waits.
"""
from __future__ import annotations

import csv
import enum
import heapq
import io
import itertools
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

_region_ids = itertools.count()


class Mode(enum.Enum):
    INPUT = "in"
    OUTPUT = "out"
    INOUT = "inout"


class State(enum.Enum):
    PENDING = "Pending"
    READY = "Ready"
    RUNNING = "Running"
    DONE = "Done"


_NEXT_STATE = {
    State.PENDING: State.READY,
    State.READY: State.RUNNING,
    State.RUNNING: State.DONE,
}


class UnregisteredRegion(KeyError):
    pass


class RuntimeShutdown(RuntimeError):
    pass


class TaskFailed(RuntimeError):
    """Raised by :meth:`Runtime.wait_all` for the first task whose body raised."""

    def __init__(self, task_id: int, label: str, error: BaseException):
        super().__init__(f"task {task_id} ({label}) failed: {error!r}")
        self.task_id = task_id
        self.label = label
        self.error = error


@dataclass(frozen=True)
class RegionHandle:
    """Identity of a data region. A sentinel is just a handle nobody reads."""

    id: int
    label: str = field(default="", compare=False)

    def __repr__(self):
        return f"RegionHandle({self.id}, {self.label!r})"


@dataclass(frozen=True)
class AccessDecl:
    region: RegionHandle
    mode: Mode
    reduction: bool = False

    def __post_init__(self):
        if self.reduction and self.mode is not Mode.INOUT:
            raise ValueError("a reduction access must be inout")


def inp(region: RegionHandle) -> AccessDecl:
    return AccessDecl(region, Mode.INPUT)


def out(region: RegionHandle) -> AccessDecl:
    return AccessDecl(region, Mode.OUTPUT)


def inout(region: RegionHandle) -> AccessDecl:
    return AccessDecl(region, Mode.INOUT)


def reduction(region: RegionHandle) -> AccessDecl:
    return AccessDecl(region, Mode.INOUT, reduction=True)


@dataclass
class TaskNode:
    task_id: int
    accesses: tuple[AccessDecl, ...]
    predecessors: frozenset[int]
    label: str = ""
    state: State = State.PENDING
    body: Callable[[], object] | None = field(default=None, repr=False)
    successors: list[int] = field(default_factory=list, repr=False)
    unfinished: int = 0
    cancelled: bool = False
    error: BaseException | None = None


@dataclass
class _RegionState:
    # Last write event: one writer, or the members of a reduction set.
    writers: set[int] = field(default_factory=set)
    readers: set[int] = field(default_factory=set)
    reduction_open: bool = False
    # What the open reduction set had to wait for; every member inherits it.
    reduction_entry: set[int] = field(default_factory=set)


class TaskGraph:
    """Dependency bookkeeping; knows nothing about execution."""

    def __init__(self):
        self.nodes: list[TaskNode] = []
        self.regions: dict[int, RegionHandle] = {}
        self._state: dict[int, _RegionState] = {}

    def register_region(self, label: str = "") -> RegionHandle:
        handle = RegionHandle(next(_region_ids), label)
        self.regions[handle.id] = handle
        self._state[handle.id] = _RegionState()
        return handle

    def compute_predecessors(self, accesses: Sequence[AccessDecl]) -> set[int]:
        """Predecessors a task with ``accesses`` would get if submitted now."""
        return self._resolve(accesses, len(self.nodes), commit=False)

    def add(self, accesses: Sequence[AccessDecl], label: str = "", body=None) -> TaskNode:
        task_id = len(self.nodes)
        preds = self._resolve(accesses, task_id, commit=True)
        node = TaskNode(task_id, tuple(accesses), frozenset(preds), label, body=body)
        self.nodes.append(node)
        return node

    def _resolve(self, accesses, task_id, commit):
        deps: set[int] = set()
        scratch: dict[int, _RegionState] = {}
        for acc in accesses:
            rid = acc.region.id
            if rid not in self._state:
                raise UnregisteredRegion(acc.region)
            st = scratch.get(rid)
            if st is None:
                orig = self._state[rid]
                st = orig if commit else _RegionState(set(orig.writers), set(orig.readers),
                                                      orig.reduction_open, set(orig.reduction_entry))
                scratch[rid] = st
            if acc.mode is Mode.INPUT:
                deps |= st.writers
                st.reduction_open = False
                st.readers.add(task_id)
            elif acc.reduction:
                if st.reduction_open:
                    deps |= st.reduction_entry
                    st.writers.add(task_id)
                else:
                    st.reduction_entry = st.writers | st.readers
                    deps |= st.reduction_entry
                    st.writers = {task_id}
                    st.readers = set()
                    st.reduction_open = True
            else:
                deps |= st.writers | st.readers
                st.writers = {task_id}
                st.readers = set()
                st.reduction_open = False
        deps.discard(task_id)
        return deps

    def edges(self) -> list[tuple[int, int]]:
        return [(p, n.task_id) for n in self.nodes for p in sorted(n.predecessors)]

    def to_dot(self, task_ids: Iterable[int] | None = None) -> str:
        return export_graph(self, task_ids)


def export_graph(graph: TaskGraph, task_ids: Iterable[int] | None = None) -> str:
    """DOT text for ``graph`` (optionally restricted to ``task_ids``)."""
    keep = None if task_ids is None else set(task_ids)
    nodes = [n for n in graph.nodes if keep is None or n.task_id in keep]
    lines = ["digraph G {"]
    for n in nodes:
        label = f"{n.label} #{n.task_id}".strip().replace('"', r"\"")
        lines.append(f'  {n.task_id} [label="{label}"];')
    for n in nodes:
        for p in sorted(n.predecessors):
            if keep is None or p in keep:
                lines.append(f"  {p} -> {n.task_id};")
    lines.append("}")
    return "\n".join(lines) + "\n"


class Runtime:
    """Executes tasks of a :class:`TaskGraph` on worker threads.

    Ready tasks are dispatched lowest task id first. ``submit`` and
    ``wait_all`` must be called from the thread that created the runtime.
    """

    def __init__(self, workers: int | None = None, record_events: bool = True):
        self.workers = workers if workers is not None else (os.cpu_count() or 1)
        if self.workers < 1:
            raise ValueError("need at least one worker")
        self.graph = TaskGraph()
        self.record_events = record_events
        self.events: list[tuple[float, int, State]] = []
        self._lock = threading.Condition()
        self._ready: list[int] = []
        self._outstanding = 0
        self._failure: TaskNode | None = None
        self._closed = False
        self._t0 = time.perf_counter()
        self._threads = [
            threading.Thread(target=self._worker, name=f"task-worker-{i}", daemon=True)
            for i in range(self.workers)
        ]
        for t in self._threads:
            t.start()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()

    def register_region(self, label: str = "") -> RegionHandle:
        return self.graph.register_region(label)

    def submit(self, body: Callable[[], object], accesses: Sequence[AccessDecl] = (), label: str = "") -> int:
        with self._lock:
            if self._closed:
                raise RuntimeShutdown("runtime has been shut down")
            node = self.graph.add(accesses, label, body)
            self._log(node.task_id, State.PENDING)
            for p in node.predecessors:
                pred = self.graph.nodes[p]
                if pred.state is not State.DONE:
                    pred.successors.append(node.task_id)
                    node.unfinished += 1
                elif pred.cancelled or pred.error is not None:
                    node.cancelled = True
            self._outstanding += 1
            if node.unfinished == 0:
                self._make_ready(node)
            return node.task_id

    def wait_all(self) -> None:
        """Block until every submitted task is done, helping to run them."""
        while True:
            with self._lock:
                while not self._ready and self._outstanding:
                    self._lock.wait()
                if not self._outstanding:
                    failure, self._failure = self._failure, None
                    if failure is not None:
                        raise TaskFailed(failure.task_id, failure.label, failure.error)
                    return
                node = self._pop_ready()
            self._execute(node)

    def shutdown(self) -> None:
        with self._lock:
            self._closed = True
            self._lock.notify_all()
        for t in self._threads:
            t.join()

    def event_log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["timestamp", "task_id", "state"])
        with self._lock:
            for ts, tid, st in self.events:
                w.writerow([f"{ts:.9f}", tid, st.value])
        return buf.getvalue()

    # internals; callers hold self._lock unless noted

    def _log(self, task_id, state):
        if self.record_events:
            self.events.append((time.perf_counter() - self._t0, task_id, state))

    def _advance(self, node: TaskNode, state: State):
        if _NEXT_STATE.get(node.state) is not state:
            raise AssertionError(f"illegal transition {node.state} -> {state} for task {node.task_id}")
        node.state = state
        self._log(node.task_id, state)

    def _make_ready(self, node):
        self._advance(node, State.READY)
        heapq.heappush(self._ready, node.task_id)
        self._lock.notify()

    def _pop_ready(self) -> TaskNode:
        node = self.graph.nodes[heapq.heappop(self._ready)]
        self._advance(node, State.RUNNING)
        return node

    def _worker(self):
        while True:
            with self._lock:
                while not self._ready and not self._closed:
                    self._lock.wait()
                if self._closed and not self._ready:
                    return
                node = self._pop_ready()
            self._execute(node)

    def _execute(self, node: TaskNode):
        # called without the lock held
        error = None
        if not node.cancelled:
            try:
                node.body()
            except BaseException as exc:  # noqa: BLE001 - reported via wait_all
                error = exc
        with self._lock:
            node.body = None
            node.error = error
            if error is not None and self._failure is None:
                self._failure = node
            self._advance(node, State.DONE)
            poisoned = node.cancelled or error is not None
            for sid in node.successors:
                succ = self.graph.nodes[sid]
                succ.cancelled |= poisoned
                succ.unfinished -= 1
                if succ.unfinished == 0:
                    self._make_ready(succ)
            self._outstanding -= 1
            if not self._outstanding:
                self._lock.notify_all()
