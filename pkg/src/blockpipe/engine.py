"""Execute a scheduled lowered graph on p workers with triple buffering.

Each worker owns three staging regions whose roles rotate per instruction
(in = i mod 3, next = (i+1) mod 3, out = (i+2) mod 3) and a transfer agent
thread that performs staging copies ("DMA") in FIFO order, which also realizes
the write-back barrier: a later fetch into a region cannot start before an
earlier write-back from it has drained.

The control loop (the caller's thread) dispatches each stream in schedule
order, gated by a per-instruction guard count (distinct uncomputed producer
operands) and the bounded mailbox. Workers acknowledge instructions by reading
the mailbox; transfer agents publish write-back completions to a shared board
that the control loop consumes to release dependent instructions.
"""
from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .kernels import KERNELS
from .lowering import LoweredGraph
from .matrix import ConfigError, Matrix, Opcode, Precision
from .scheduler import Schedule

try:  # keep BLAS single-threaded; workers provide the parallelism
    from threadpoolctl import threadpool_limits
    _BLAS_LIMIT = threadpool_limits(limits=1, user_api="blas")
except Exception:  # pragma: no cover
    _BLAS_LIMIT = None

_TERM = object()


class EngineError(RuntimeError):
    def __init__(self, instruction_id, cause):
        super().__init__(f"instruction {instruction_id} failed: {cause!r}")
        self.instruction_id = instruction_id
        self.cause = cause


@dataclass(frozen=True)
class EngineConfig:
    workers: int
    buffer_elems: int
    divisor: int
    precision: Precision
    mailbox_capacity: int = 4
    instrumented: bool = False

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("need at least one worker")
        if self.mailbox_capacity < 1:
            raise ConfigError("mailbox capacity must be >= 1")


class _Instr:
    __slots__ = ("sid", "lid", "opcode", "kern", "descs", "scalar", "rows",
                 "cols", "vr", "vc", "rezero", "consumers", "guard", "out",
                 "in_views", "worker", "df_ns", "ex_ns", "wb_ns",
                 "fetch_start", "wb_end", "ev")

    def __init__(self, sid, lid, opcode, descs, scalar, rows, cols, vr, vc):
        self.sid = sid
        self.lid = lid
        self.opcode = opcode
        self.kern = KERNELS[opcode]
        self.descs = descs
        self.scalar = scalar
        self.rows = rows
        self.cols = cols
        self.vr = vr
        self.vc = vc
        self.rezero = not opcode.zero_preserving
        self.consumers = ()
        self.guard = 0
        self.out = None
        self.in_views = None
        self.worker = -1
        self.df_ns = 0
        self.ex_ns = 0
        self.wb_ns = 0
        self.fetch_start = 0
        self.wb_end = 0
        self.ev = None


@dataclass
class WorkerIdle:
    task_ns: int = 0
    dma_ns: int = 0
    busy_ns: int = 0
    wall_ns: int = 0


@dataclass
class RunReport:
    """Measured stage durations and control-protocol bookkeeping for one run."""
    instructions: list[dict]
    makespan_measured_ns: int
    idle: list[WorkerIdle]
    max_mailbox_occupancy: int
    events: dict[int, dict] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "instructions": self.instructions,
            "makespan_measured_ns": self.makespan_measured_ns,
            "per_worker_idle": [
                {"task_ns": w.task_ns, "dma_ns": w.dma_ns,
                 "busy_ns": w.busy_ns, "wall_ns": w.wall_ns}
                for w in self.idle
            ],
            "max_mailbox_occupancy": self.max_mailbox_occupancy,
        }


@dataclass
class EngineResult:
    results: dict[int, Matrix]
    report: RunReport


def _mfc_loop(jobs: deque, wake: threading.Event, completed: list,
              board_ev: threading.Event, t0: int, error_slot: list,
              fetch_events: list, arena: list):
    """Transfer agent: staging copies in issue order, completions on write-back."""
    ns = time.perf_counter_ns
    while True:
        while not jobs:
            wake.wait(0.01)
            wake.clear()
        job = jobs.popleft()
        if job is None:
            return
        kind, instr, payload = job
        try:
            if kind == 0:  # fetch all operands into staging slots
                views, done_ev = payload
                start = ns()
                for desc, view in zip(instr.descs, views):
                    src = desc[0]
                    if src is None:
                        np.copyto(view, arena[desc[1]])
                    else:
                        np.copyto(view, src[desc[1]:desc[2], desc[3]:desc[4]])
                end = ns()
                instr.df_ns = end - start
                instr.fetch_start = start - t0
                instr.in_views = views
                if instr.ev is not None:
                    instr.ev["fetch_copy_start"] = start - t0
                    instr.ev["fetch_copy_end"] = end - t0
                done_ev.set()
            else:  # write back: staging -> result block, then notify control
                out_view = payload
                start = ns()
                np.copyto(instr.out, out_view)
                end = ns()
                instr.wb_ns = end - start
                instr.wb_end = end - t0
                if instr.ev is not None:
                    instr.ev["wb_copy_start"] = start - t0
                    instr.ev["wb_copy_end"] = end - t0
                completed.append(instr.sid)
                board_ev.set()
        except Exception as exc:  # pragma: no cover - defensive
            error_slot.append((instr.lid, exc))
            for ev in fetch_events:
                ev.set()
            board_ev.set()
            return


def run(lg: LoweredGraph, sched: Schedule, cfg: EngineConfig,
        sources: dict[int, Matrix], op_shapes: dict[int, tuple[int, int]],
        ) -> EngineResult:
    """Execute every scheduled block instruction and assemble origin results."""
    ns = time.perf_counter_ns
    t0 = ns()
    dtype = cfg.precision.dtype
    cap_elems = cfg.buffer_elems

    sched_nodes = lg.schedulable()
    n = len(sched_nodes)
    if len(sched.start) != n:
        raise ConfigError(f"schedule covers {len(sched.start)} instructions, "
                          f"graph has {n}")
    index = {node.id: i for i, node in enumerate(sched_nodes)}

    instrs: list[_Instr] = []
    for sid, node in enumerate(sched_nodes):
        descs = []
        for oid in node.operands:
            op_node = lg.nodes[oid]
            if op_node.is_const:
                m = sources[op_node.source]
                v = op_node.view
                descs.append((m.data, v.row_start, v.row_start + v.row_count,
                              v.col_start, v.col_start + v.col_count))
            else:
                descs.append((None, index[oid], 0, 0, 0))
        inst = _Instr(sid, node.id, node.opcode, tuple(descs), node.scalar,
                      node.rows, node.cols, node.valid_rows, node.valid_cols)
        if max(node.rows * node.cols,
               max((lg.nodes[o].rows * lg.nodes[o].cols for o in node.operands),
                   default=0)) > cap_elems:
            raise ConfigError(f"block of instruction {node.id} exceeds the "
                              f"buffer capacity {cap_elems}")
        if cfg.instrumented:
            inst.ev = {}
        instrs.append(inst)
    for sid, node in enumerate(sched_nodes):
        producers = set()
        for oid in node.operands:
            j = index.get(oid)
            if j is not None:
                producers.add(j)
        instrs[sid].guard = len(producers)
        for j in producers:
            instrs[j].consumers += (sid,)

    arena: list = [None] * n
    workers = cfg.workers
    boxes = [deque() for _ in range(workers)]
    box_evs = [threading.Event() for _ in range(workers)]
    completed: list[list[int]] = [[] for _ in range(workers)]
    board_ev = threading.Event()
    error_slot: list = []
    idle = [WorkerIdle() for _ in range(workers)]
    acked = [0] * workers

    streams = [[instrs[i] for i in stream] for stream in sched.streams]
    if len(streams) != workers:
        raise ConfigError(f"schedule built for {len(streams)} workers, "
                          f"engine configured with {workers}")
    for k, stream in enumerate(streams):
        for inst in stream:
            inst.worker = k

    def worker_fn(k: int):
        wstart = ns()
        box = boxes[k]
        bev = box_evs[k]
        my_idle = idle[k]
        regions = [np.empty(2 * cap_elems, dtype=dtype) for _ in range(3)]
        fetch_done = [threading.Event() for _ in range(3)]
        jobs: deque = deque()
        mfc_wake = threading.Event()
        mfc = threading.Thread(
            target=_mfc_loop,
            args=(jobs, mfc_wake, completed[k], board_ev, t0, error_slot,
                  fetch_done, arena),
            name=f"mfc-{k}", daemon=True)
        mfc.start()
        task_ns = dma_ns = busy_ns = 0
        cur = None

        def pop_box():
            nonlocal task_ns
            w0 = ns()
            while not box:
                bev.wait(0.01)
                bev.clear()
            item = box.popleft()
            if item is not _TERM:
                acked[k] += 1
            task_ns += ns() - w0
            return item

        def submit_fetch(inst: _Instr, region: int):
            flat = regions[region]
            views = []
            off = 0
            for desc in inst.descs:
                if desc[0] is None:
                    rows, cols = instrs[desc[1]].rows, instrs[desc[1]].cols
                else:
                    rows, cols = desc[2] - desc[1], desc[4] - desc[3]
                views.append(flat[off:off + rows * cols].reshape(rows, cols))
                off += cap_elems
            ev = fetch_done[region]
            ev.clear()
            if inst.ev is not None:
                inst.ev["fetch_issue"] = ns() - t0
            jobs.append((0, inst, (tuple(views), ev)))
            mfc_wake.set()
            return ev

        try:
            cur = pop_box()
            if cur is not _TERM:
                i = 0
                waits = [None, None, None]
                waits[0] = submit_fetch(cur, 0)
                while True:
                    in_r, next_r, out_r = i % 3, (i + 1) % 3, (i + 2) % 3
                    nxt = pop_box()
                    if nxt is not _TERM:
                        waits[next_r] = submit_fetch(nxt, next_r)
                    w0 = ns()
                    waits[in_r].wait()
                    dma_ns += ns() - w0
                    if error_slot:
                        break
                    ex0 = ns()
                    out_view = regions[out_r][:cur.rows * cur.cols] \
                        .reshape(cur.rows, cur.cols)
                    a = cur.in_views[0]
                    b = cur.in_views[1] if len(cur.in_views) > 1 else None
                    cur.kern(a, b, cur.scalar, out_view)
                    if cur.rezero:
                        if cur.vr < cur.rows:
                            out_view[cur.vr:, :] = 0
                        if cur.vc < cur.cols:
                            out_view[:, cur.vc:] = 0
                    if cur.ev is not None:
                        cur.ev["ex_start"] = ex0 - t0
                        cur.ev["wb_issue"] = ns() - t0
                    jobs.append((1, cur, out_view))
                    mfc_wake.set()
                    ex1 = ns()
                    cur.ex_ns = ex1 - ex0
                    if cur.ev is not None:
                        cur.ev["ex_end"] = ex1 - t0
                    busy_ns += ex1 - ex0
                    if nxt is _TERM:
                        break
                    cur = nxt
                    i += 1
        except Exception as exc:
            error_slot.append((cur.lid if isinstance(cur, _Instr) else -1, exc))
            board_ev.set()
        finally:
            jobs.append(None)
            mfc_wake.set()
            mfc.join()
            my_idle.task_ns = task_ns
            my_idle.dma_ns = dma_ns
            my_idle.busy_ns = busy_ns
            my_idle.wall_ns = ns() - wstart

    threads = [threading.Thread(target=worker_fn, args=(k,),
                                name=f"worker-{k}", daemon=True)
               for k in range(workers)]
    for t in threads:
        t.start()

    # control loop: dispatch in stream order under guard and mailbox bounds
    guards = [inst.guard for inst in instrs]
    ptr = [0] * workers
    dispatched = [0] * workers
    cursor = [0] * workers
    done = 0
    max_occ = 0
    term_sent = [False] * workers
    aborted = False
    while done < n or not all(term_sent):
        board_ev.clear()
        progressed = False
        if error_slot and not aborted:
            aborted = True
            for k in range(workers):
                if not term_sent[k]:
                    boxes[k].append(_TERM)
                    term_sent[k] = True
                    box_evs[k].set()
        for k in range(workers):
            lst = completed[k]
            while cursor[k] < len(lst):
                sid = lst[cursor[k]]
                cursor[k] += 1
                done += 1
                progressed = True
                inst = instrs[sid]
                if inst.ev is not None:
                    inst.ev["completion_seen"] = ns() - t0
                for c in inst.consumers:
                    guards[c] -= 1
        if not aborted:
            for k in range(workers):
                stream = streams[k]
                while ptr[k] < len(stream):
                    occ = dispatched[k] - acked[k]
                    if occ >= cfg.mailbox_capacity:
                        break
                    inst = stream[ptr[k]]
                    if guards[inst.sid] != 0:
                        break
                    inst.out = np.empty((inst.rows, inst.cols), dtype=dtype)
                    arena[inst.sid] = inst.out
                    if inst.ev is not None:
                        inst.ev["dispatch"] = ns() - t0
                    boxes[k].append(inst)
                    dispatched[k] += 1
                    ptr[k] += 1
                    box_evs[k].set()
                    occ = dispatched[k] - acked[k]
                    if occ > max_occ:
                        max_occ = occ
                    progressed = True
                if ptr[k] == len(stream) and not term_sent[k]:
                    boxes[k].append(_TERM)
                    term_sent[k] = True
                    box_evs[k].set()
                    progressed = True
        if all(term_sent) and (done >= n or aborted):
            break
        if not progressed:
            board_ev.wait(0.01)
    for t in threads:
        t.join()

    if error_slot:
        lid, exc = error_slot[0]
        raise EngineError(lid, exc)

    results: dict[int, Matrix] = {}
    for origin, grid in lg.result_map.items():
        if lg.nodes[grid[0][0]].is_const:
            continue
        part = lg.partitionings[origin]
        n_log, m_log = op_shapes[origin]
        buf = np.empty((part.padded_rows, part.padded_cols), dtype=dtype)
        roffs, coffs = part.row_offsets(), part.col_offsets()
        for i, row in enumerate(grid):
            for j, lid_ in enumerate(row):
                blk = arena[index[lid_]]
                buf[roffs[i]:roffs[i] + blk.shape[0],
                    coffs[j]:coffs[j] + blk.shape[1]] = blk
        buf.setflags(write=False)
        results[origin] = Matrix(cfg.precision, n_log, m_log, buf)

    instr_rows = [
        {"id": inst.lid, "worker": inst.worker,
         "t_start_meas_ns": inst.fetch_start,
         "df_ns": inst.df_ns, "ex_ns": inst.ex_ns, "wb_ns": inst.wb_ns}
        for inst in instrs
    ]
    if instrs:
        makespan = max(i.wb_end for i in instrs) - min(i.fetch_start for i in instrs)
    else:
        makespan = 0
    events = {inst.lid: inst.ev for inst in instrs if inst.ev is not None}
    report = RunReport(instr_rows, makespan, idle, max_occ, events)
    return EngineResult(results, report)
