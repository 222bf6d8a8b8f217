"""List scheduling of costed instruction DAGs onto pipelined workers.

Each worker runs a three-stage pipeline (data fetch, execute, write back);
an instruction's stages are contiguous from its start time. The greedy
scheduler always places the ready instruction with the earliest operand
completion into the stream where the slot function says it can start first.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field


@dataclass
class CostedGraph:
    """Schedulable instructions with per-stage durations and precedence edges.

    Node ids are dense 0..n-1 and every edge (u, v) satisfies u < v, so id
    order is a topological order. Constants are excluded by construction.
    """
    df: list[float]
    ex: list[float]
    wb: list[float]
    succs: list[list[int]]
    labels: list[int] | None = None    # original (lowered) node ids
    opcode_names: list[str] | None = None

    @property
    def n(self) -> int:
        return len(self.df)

    @property
    def edge_count(self) -> int:
        return sum(len(s) for s in self.succs)

    def indegrees(self) -> list[int]:
        c = [0] * self.n
        for succ in self.succs:
            for j in succ:
                c[j] += 1
        return c

    def total(self, i: int) -> float:
        return self.df[i] + self.ex[i] + self.wb[i]


@dataclass(frozen=True)
class WorkerFront:
    """Completion times of the last scheduled instruction's stages."""
    s_df: float = 0.0
    s_ex: float = 0.0
    s_wb: float = 0.0


def slot(e_i: float, t_df: float, t_ex: float, front: WorkerFront) -> float:
    """Earliest start h(i,k) of an instruction on a worker.

    Walks the three stages forward against the worker's stage fronts, then
    subtracts the fetch and execute durations to recover the start time.
    """
    a = max(e_i, front.s_df) + t_df
    a = max(a, front.s_ex) + t_ex
    a = max(a, front.s_wb)
    return a - (t_df + t_ex)


@dataclass
class Schedule:
    streams: list[list[int]]
    start: list[float]
    makespan: float
    kind: str
    stats: dict = field(default_factory=dict)

    @property
    def workers(self) -> int:
        return len(self.streams)

    def worker_of(self) -> list[int]:
        w = [-1] * len(self.start)
        for k, stream in enumerate(self.streams):
            for i in stream:
                w[i] = k
        return w

    def to_json(self, g: CostedGraph, makespan_measured: float | None = None) -> str:
        labels = g.labels or list(range(g.n))
        names = g.opcode_names or [""] * g.n
        payload = {
            "workers": self.workers,
            "kind": self.kind,
            "makespan_est": self.makespan,
            "streams": [
                [{"id": labels[i], "opcode": names[i], "t": self.start[i],
                  "df": g.df[i], "ex": g.ex[i], "wb": g.wb[i]}
                 for i in stream]
                for stream in self.streams
            ],
        }
        if makespan_measured is not None:
            payload["makespan_measured"] = makespan_measured
        return json.dumps(payload, indent=1)


def heuristic_schedule(g: CostedGraph, p: int) -> Schedule:
    """Greedy list schedule: earliest instruction into the earliest stream."""
    n = g.n
    df, ex, wb = g.df, g.ex, g.wb
    succs = g.succs
    c = g.indegrees()
    e = [0.0] * n
    t = [0.0] * n
    s_df = [0.0] * p
    s_ex = [0.0] * p
    s_wb = [0.0] * p
    streams: list[list[int]] = [[] for _ in range(p)]
    heap = [(0.0, i) for i in range(n) if c[i] == 0]
    heapq.heapify(heap)
    pops = edge_updates = 0
    pushes = len(heap)
    pop, push = heapq.heappop, heapq.heappush
    zmax = 0.0
    while heap:
        e_i, i = pop(heap)
        pops += 1
        tdf, tex, twb = df[i], ex[i], wb[i]
        best = None
        bestk = 0
        for k in range(p):
            a = e_i
            if s_df[k] > a:
                a = s_df[k]
            a += tdf
            if s_ex[k] > a:
                a = s_ex[k]
            a += tex
            if s_wb[k] > a:
                a = s_wb[k]
            h = a - tdf - tex
            if best is None or h < best:
                best = h
                bestk = k
        t[i] = best
        streams[bestk].append(i)
        s_df[bestk] = best + tdf
        s_ex[bestk] = best + tdf + tex
        comp = best + tdf + tex + twb
        s_wb[bestk] = comp
        if comp > zmax:
            zmax = comp
        for j in succs[i]:
            edge_updates += 1
            if comp > e[j]:
                e[j] = comp
            c[j] -= 1
            if c[j] == 0:
                pushes += 1
                push(heap, (e[j], j))
    stats = {"enqueues": pushes, "dequeues": pops, "edge_updates": edge_updates}
    return Schedule(streams, t, zmax, "heuristic", stats)


def naive_schedule(g: CostedGraph, p: int) -> Schedule:
    """Round-robin over a deterministic topological order (ascending id)."""
    n = g.n
    c = g.indegrees()
    heap = [i for i in range(n) if c[i] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        i = heapq.heappop(heap)
        order.append(i)
        for j in g.succs[i]:
            c[j] -= 1
            if c[j] == 0:
                heapq.heappush(heap, j)
    if len(order) != n:
        raise ValueError("precedence graph contains a cycle")

    e = [0.0] * n
    t = [0.0] * n
    fronts = [WorkerFront() for _ in range(p)]
    streams: list[list[int]] = [[] for _ in range(p)]
    zmax = 0.0
    for rank, i in enumerate(order):
        k = rank % p
        t[i] = slot(e[i], g.df[i], g.ex[i], fronts[k])
        streams[k].append(i)
        comp = t[i] + g.total(i)
        fronts[k] = WorkerFront(t[i] + g.df[i], t[i] + g.df[i] + g.ex[i], comp)
        zmax = max(zmax, comp)
        for j in g.succs[i]:
            e[j] = max(e[j], comp)
    return Schedule(streams, t, zmax, "naive")


def critical_path(g: CostedGraph) -> float:
    """Longest path of total stage durations; a lower bound on any makespan."""
    best = [0.0] * g.n
    for i in range(g.n - 1, -1, -1):
        tail = 0.0
        for j in g.succs[i]:
            if best[j] > tail:
                tail = best[j]
        best[i] = g.total(i) + tail
    return max(best, default=0.0)


def validate(sched: Schedule, g: CostedGraph) -> list[str]:
    """Check a schedule against precedence, stage-succession and stream rules.

    Returns a list of violation descriptions (empty means feasible).
    """
    out: list[str] = []
    n = g.n
    t = sched.start
    eps = 1e-9 * max(1.0, abs(sched.makespan))

    seen = [0] * n
    for stream in sched.streams:
        for i in stream:
            seen[i] += 1
    for i in range(n):
        if seen[i] != 1:
            out.append(f"instruction {i} appears in {seen[i]} streams")
    for i in range(n):
        if t[i] < -eps:
            out.append(f"instruction {i} starts at negative time {t[i]}")

    for i in range(n):
        comp = t[i] + g.total(i)
        for j in g.succs[i]:
            if comp > t[j] + eps:
                out.append(f"precedence ({i},{j}): completion {comp} > start {t[j]}")

    for k, stream in enumerate(sched.streams):
        for a, b in zip(stream, stream[1:]):
            if t[a] + g.df[a] > t[b] + eps:
                out.append(f"stream {k}: df of {b} overlaps df of {a}")
            if t[a] + g.df[a] + g.ex[a] > t[b] + g.df[b] + eps:
                out.append(f"stream {k}: ex of {b} overlaps ex of {a}")
            if t[a] + g.total(a) > t[b] + g.df[b] + g.ex[b] + eps:
                out.append(f"stream {k}: wb of {b} overlaps wb of {a}")

    z = max((t[i] + g.total(i) for i in range(n)), default=0.0)
    if abs(z - sched.makespan) > eps:
        out.append(f"makespan {sched.makespan} != max completion {z}")
    return out


def costed_from_lowered(lg, model) -> CostedGraph:
    """Estimate stage durations for every schedulable lowered instruction."""
    from .timemodel import Stage

    sched_nodes = lg.schedulable()
    index = {node.id: i for i, node in enumerate(sched_nodes)}
    df, ex, wb, succs, labels, names = [], [], [], [], [], []
    for node in sched_nodes:
        if node.opcode.is_matmul:
            a = lg.nodes[node.operands[0]]
            nvec = (a.rows, a.cols, node.cols)
        else:
            nvec = (node.rows, node.cols)
        dims = [(lg.nodes[o].rows, lg.nodes[o].cols) for o in node.operands]
        df.append(model.transfer_estimate(dims))
        ex.append(model.estimate(node.opcode, Stage.EX, nvec))
        wb.append(model.transfer_estimate([(node.rows, node.cols)]))
        succs.append([])
        labels.append(node.id)
        names.append(node.opcode.value)
    for node in sched_nodes:
        i = index[node.id]
        for o in set(node.operands):
            j = index.get(o)
            if j is not None:
                succs[j].append(i)
    return CostedGraph(df, ex, wb, succs, labels, names)
