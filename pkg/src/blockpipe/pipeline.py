"""Drive flushed traces through lowering, scheduling and execution.

Traces execute strictly in flush order. With overlap enabled, a preparation
thread (lowering + scheduling) and an execution thread run behind the
recording thread, so all pipeline stages of different traces can overlap;
with overlap disabled every stage runs inline at flush time. Both modes
produce identical matrices.
"""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from queue import Queue

from . import engine
from .exact import exact_schedule
from .lowering import lower_graph
from .matrix import Matrix
from .scheduler import costed_from_lowered, heuristic_schedule, naive_schedule


@dataclass
class TraceJob:
    """One flushed trace moving through the pipeline."""
    trace_no: int
    ops: list                      # (id, opcode, operand_ids, scalar, shape)
    source_ids: list[int]          # nodes whose matrices are read, not computed
    done: threading.Event = field(default_factory=threading.Event)
    error: BaseException | None = None
    lowered = None
    costed = None
    schedule = None
    report = None
    ts: dict = field(default_factory=dict)


class Pipeline:
    """Executes TraceJobs in order; overlap mode runs stages in worker threads."""

    def __init__(self, session, overlap: bool):
        self.session = session
        self.overlap = overlap
        self.jobs: list[TraceJob] = []
        if overlap:
            self._prep_q: Queue = Queue()
            self._exec_q: Queue = Queue()
            self._prep_t = threading.Thread(target=self._prep_loop,
                                            name="bp-prep", daemon=True)
            self._exec_t = threading.Thread(target=self._exec_loop,
                                            name="bp-exec", daemon=True)
            self._prep_t.start()
            self._exec_t.start()

    def submit(self, job: TraceJob) -> None:
        self.jobs.append(job)
        job.ts["flushed"] = time.perf_counter_ns()
        if self.overlap:
            self._prep_q.put(job)
        else:
            self._prepare(job)
            if job.error is None:
                self._execute(job)
            else:
                job.done.set()

    def wait(self, job: TraceJob) -> None:
        job.done.wait()
        if job.error is not None:
            raise job.error

    def close(self) -> None:
        if self.overlap:
            self._prep_q.put(None)
            self._prep_t.join()
            self._exec_q.put(None)
            self._exec_t.join()

    # stages ---------------------------------------------------------------

    def _prepare(self, job: TraceJob) -> None:
        cfg = self.session.config
        try:
            job.ts["lower_start"] = time.perf_counter_ns()
            sources = {sid: self.session.shape_of(sid) for sid in job.source_ids}
            job.lowered = lower_graph(job.ops, sources, cfg.resolved_divisor,
                                      cfg.resolved_buffer_elems)
            job.ts["lower_end"] = time.perf_counter_ns()
            job.costed = costed_from_lowered(job.lowered, self.session.model())
            job.ts["sched_start"] = time.perf_counter_ns()
            if cfg.scheduler == "heuristic":
                job.schedule = heuristic_schedule(job.costed, cfg.workers)
            elif cfg.scheduler == "naive":
                job.schedule = naive_schedule(job.costed, cfg.workers)
            elif cfg.scheduler == "exact":
                job.schedule, _ = exact_schedule(
                    job.costed, cfg.workers, node_cap=cfg.exact_node_cap,
                    time_budget=cfg.exact_budget)
            else:
                raise ValueError(f"unknown scheduler {cfg.scheduler!r}")
            job.ts["sched_end"] = time.perf_counter_ns()
        except BaseException as exc:
            job.error = exc

    def _execute(self, job: TraceJob) -> None:
        cfg = self.session.config
        try:
            job.ts["exec_start"] = time.perf_counter_ns()
            source_mats = {sid: self.session.matrix_of(sid)
                           for sid in job.source_ids}
            op_shapes = {nid: shape for (nid, _, _, _, shape) in job.ops}
            ecfg = engine.EngineConfig(
                workers=cfg.workers,
                buffer_elems=cfg.resolved_buffer_elems,
                divisor=cfg.resolved_divisor,
                precision=cfg.precision,
                mailbox_capacity=cfg.mailbox_capacity,
                instrumented=cfg.instrumented)
            result = engine.run(job.lowered, job.schedule, ecfg, source_mats,
                                op_shapes)
            job.report = result.report
            job.ts["exec_end"] = time.perf_counter_ns()
            self.session.finish_trace(job, result.results)
        except BaseException as exc:
            job.error = exc
            self.session.finish_trace(job, None)
        finally:
            job.done.set()

    # overlap-mode loops ----------------------------------------------------

    def _prep_loop(self) -> None:
        while True:
            job = self._prep_q.get()
            if job is None:
                return
            self._prepare(job)
            self._exec_q.put(job)

    def _exec_loop(self) -> None:
        while True:
            job = self._exec_q.get()
            if job is None:
                return
            if job.error is None:
                self._execute(job)
            else:
                self.session.finish_trace(job, None)
                job.done.set()
