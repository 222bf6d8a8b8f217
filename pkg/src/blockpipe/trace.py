"""Lazy-evaluation front end: record matrix instructions into a data
dependence graph, decide when to force execution, manage handle lifetimes.

Recording never executes anything. A force either slices the backward
closure of the requested node out of the live trace (value needed) or, when
the trace length reaches the configured threshold, flushes the whole pending
trace without blocking the recorder. Flushed traces run in flush order.
"""
from __future__ import annotations

import enum
import threading
from dataclasses import dataclass

import numpy as np

from .matrix import (ConfigError, Matrix, Opcode, Precision, ShapeError,
                     from_logical, result_shape)
from .pipeline import Pipeline, TraceJob


class ForceReason(enum.Enum):
    VALUE_NEEDED = "value-needed"
    THRESHOLD_REACHED = "threshold-reached"


class NodeState(enum.Enum):
    PENDING = "pending"
    EXECUTING = "executing"
    DONE = "done"


@dataclass
class TraceConfig:
    precision: Precision = Precision.SINGLE
    divisor: int | None = None
    buffer_elems: int | None = None
    workers: int = 4
    threshold: int = 10_000
    seed: int = 0
    scheduler: str = "heuristic"
    overlap: bool = False
    mailbox_capacity: int = 4
    instrumented: bool = False
    exact_node_cap: int = 10
    exact_budget: float | None = None
    coeffs_path: str | None = None

    @property
    def resolved_divisor(self) -> int:
        return self.divisor if self.divisor else self.precision.default_divisor

    @property
    def resolved_buffer_elems(self) -> int:
        return (self.buffer_elems if self.buffer_elems
                else self.precision.default_buffer_elems)

    def validate(self) -> None:
        if self.threshold < 1:
            raise ConfigError("trace threshold must be >= 1")
        if self.scheduler not in ("heuristic", "naive", "exact"):
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")


class TraceNode:
    __slots__ = ("id", "opcode", "operands", "scalar", "shape", "state",
                 "matrix", "handle_count", "pending_consumers", "trace_no",
                 "reclaimed")

    def __init__(self, nid, opcode, operands, scalar, shape):
        self.id = nid
        self.opcode = opcode            # None marks a constant
        self.operands = operands
        self.scalar = scalar
        self.shape = shape
        self.state = NodeState.PENDING
        self.matrix: Matrix | None = None
        self.handle_count = 0
        self.pending_consumers = 0
        self.trace_no: int | None = None
        self.reclaimed = False

    @property
    def is_const(self) -> bool:
        return self.opcode is None


class Handle:
    """Shared reference to a trace node; assignment is copy-on-write."""

    def __init__(self, session: "Session", node_id: int):
        self._session = session
        self.node_id = node_id
        self._alive = True

    @property
    def shape(self) -> tuple[int, int]:
        return self._session.node(self.node_id).shape

    def value(self) -> Matrix:
        return self._session.force(self)

    def release(self) -> None:
        if self._alive:
            self._alive = False
            self._session.gc_release_id(self.node_id)

    def set_element(self, i: int, j: int, v: float) -> None:
        """Mutate one element: forces evaluation, deep-copies, rebinds."""
        self.node_id = self._session.mutated_copy(self.node_id, i, j, v)


class Session:
    """Single-writer recording context owning the live dependence graph."""

    def __init__(self, config: TraceConfig | None = None):
        self.config = config or TraceConfig()
        self.config.validate()
        self.nodes: dict[int, TraceNode] = {}
        self.live: list[int] = []           # pending node ids, record order
        self._next_id = 0
        self._trace_count = 0
        self._rng = np.random.default_rng(self.config.seed)
        self._lock = threading.RLock()
        self._deferred_gc: set[int] = set()
        self._model = None
        self.pipeline = Pipeline(self, self.config.overlap)

    # bookkeeping ------------------------------------------------------------

    def node(self, nid: int) -> TraceNode:
        return self.nodes[nid]

    def shape_of(self, nid: int) -> tuple[int, int]:
        return self.nodes[nid].shape

    def matrix_of(self, nid: int) -> Matrix:
        node = self.nodes[nid]
        if node.matrix is None:
            raise RuntimeError(f"node {nid} has no materialized matrix")
        return node.matrix

    def model(self):
        if self._model is None:
            from .coeffs import load_model
            self._model = load_model(self.config.coeffs_path)
        return self._model

    def set_model(self, model) -> None:
        self._model = model

    def node_count(self) -> int:
        return len(self.nodes)

    def pending_count(self) -> int:
        return len(self.live)

    def edges(self) -> set[tuple[int, int]]:
        out = set()
        for nid in self.nodes:
            for op in self.nodes[nid].operands:
                out.add((op, nid))
        return out

    # recording ---------------------------------------------------------------

    def _new_node(self, opcode, operands, scalar, shape) -> TraceNode:
        nid = self._next_id
        self._next_id += 1
        node = TraceNode(nid, opcode, operands, scalar, shape)
        self.nodes[nid] = node
        return node

    def constant(self, matrix: Matrix) -> Handle:
        with self._lock:
            node = self._new_node(None, (), None, matrix.shape)
            node.matrix = matrix
            node.state = NodeState.DONE
            node.handle_count = 1
            return Handle(self, node.id)

    def rand(self, n: int, m: int) -> Handle:
        data = self._rng.random((n, m), dtype=np.float64)
        mat = from_logical(self.config.precision,
                           data.astype(self.config.precision.dtype),
                           self.config.resolved_divisor)
        return self.constant(mat)

    def alias(self, h: Handle) -> Handle:
        """Assignment: share the node, no copy, no new node."""
        with self._lock:
            self.nodes[h.node_id].handle_count += 1
            return Handle(self, h.node_id)

    def apply(self, op: Opcode, operands: list[Handle],
              scalar: float | None = None) -> Handle:
        if op.takes_scalar and scalar is None:
            raise ShapeError(f"{op.value} requires a scalar parameter")
        if not op.takes_scalar and scalar is not None:
            raise ShapeError(f"{op.value} takes no scalar parameter")
        with self._lock:
            for h in operands:
                if self.nodes[h.node_id].reclaimed:
                    raise RuntimeError(
                        f"operand node {h.node_id} was already reclaimed")
            shapes = [self.nodes[h.node_id].shape for h in operands]
            shape = result_shape(op, shapes)
            ids = tuple(h.node_id for h in operands)
            node = self._new_node(op, ids, scalar, shape)
            node.handle_count = 1
            for oid in ids:
                self.nodes[oid].pending_consumers += 1
            self.live.append(node.id)
            threshold_hit = len(self.live) >= self.config.threshold
        if threshold_hit:
            self.force(Handle(self, node.id), ForceReason.THRESHOLD_REACHED)
        return Handle(self, node.id)

    # execution ---------------------------------------------------------------

    def _freeze(self, ids: list[int]) -> TraceJob:
        """Move pending nodes into a new frozen trace (caller holds the lock)."""
        trace_no = self._trace_count
        self._trace_count += 1
        ops = []
        in_trace = set(ids)
        source_ids = set()
        for nid in ids:
            node = self.nodes[nid]
            node.state = NodeState.EXECUTING
            node.trace_no = trace_no
            ops.append((nid, node.opcode, node.operands, node.scalar,
                        node.shape))
            for oid in node.operands:
                if oid not in in_trace:
                    source_ids.add(oid)
        self.live = [nid for nid in self.live if nid not in in_trace]
        return TraceJob(trace_no, ops, sorted(source_ids))

    def _backward_slice(self, nid: int) -> list[int]:
        pending = set(self.live)
        seen = set()
        stack = [nid]
        while stack:
            cur = stack.pop()
            if cur in seen or cur not in pending:
                continue
            seen.add(cur)
            stack.extend(self.nodes[cur].operands)
        return sorted(seen)

    def force(self, h: Handle, reason: ForceReason = ForceReason.VALUE_NEEDED
              ) -> Matrix | None:
        node = self.nodes[h.node_id]
        if reason is ForceReason.THRESHOLD_REACHED:
            with self._lock:
                job = self._freeze(list(self.live)) if self.live else None
            if job is not None:
                self.pipeline.submit(job)
            return None
        if node.state is NodeState.DONE:
            return node.matrix
        if node.state is NodeState.EXECUTING:
            self.pipeline.wait(self._job_of(node.trace_no))
            return node.matrix
        with self._lock:
            ids = self._backward_slice(node.id)
            job = self._freeze(ids)
        self.pipeline.submit(job)
        self.pipeline.wait(job)
        return node.matrix

    def flush(self) -> None:
        """Flush the whole pending trace without waiting."""
        with self._lock:
            job = self._freeze(list(self.live)) if self.live else None
        if job is not None:
            self.pipeline.submit(job)

    def _job_of(self, trace_no: int) -> TraceJob:
        return self.pipeline.jobs[trace_no]

    def finish_trace(self, job: TraceJob, results: dict[int, Matrix] | None
                     ) -> None:
        """Pipeline callback: publish results, release consumer counts, gc."""
        with self._lock:
            if results is not None:
                for (nid, _, operands, _, _) in job.ops:
                    node = self.nodes[nid]
                    node.matrix = results[nid]
                    node.state = NodeState.DONE
                    for oid in operands:
                        self.nodes[oid].pending_consumers -= 1
            for nid in list(self._deferred_gc):
                self._try_reclaim(self.nodes[nid])

    # lifetime ----------------------------------------------------------------

    def gc_release_id(self, nid: int) -> None:
        with self._lock:
            node = self.nodes[nid]
            node.handle_count -= 1
            self._try_reclaim(node)

    def _try_reclaim(self, node: TraceNode) -> None:
        if node.reclaimed or node.handle_count > 0:
            return
        if node.state is NodeState.DONE and node.pending_consumers == 0:
            node.matrix = None
            node.reclaimed = True
            self._deferred_gc.discard(node.id)
        else:
            self._deferred_gc.add(node.id)

    def mutated_copy(self, nid: int, i: int, j: int, v: float) -> int:
        mat = self.force(Handle(self, nid))
        n, m = mat.shape
        if not (0 <= i < n and 0 <= j < m):
            raise IndexError(f"element ({i},{j}) outside {n}x{m}")
        arr = np.array(mat.logical(), copy=True)
        arr[i, j] = v
        new = from_logical(mat.precision, arr, self.config.resolved_divisor)
        with self._lock:
            node = self._new_node(None, (), None, new.shape)
            node.matrix = new
            node.state = NodeState.DONE
            node.handle_count = 1
            old = self.nodes[nid]
            old.handle_count -= 1
            self._try_reclaim(old)
            return node.id

    def close(self) -> None:
        self.pipeline.close()

    def __enter__(self) -> "Session":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
