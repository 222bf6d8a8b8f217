"""Exact minimum-makespan schedules for tiny instances.

Branch and bound over stream assignments with the same timing semantics as
the integer program: streams are ordered instruction lists, each instruction's
stages are contiguous from its start time, consecutive stream instructions may
not overlap stage-wise, and precedence requires full completion of operands.

Any feasible stream assignment admits earliest start times computed forward,
and every optimal schedule can be built by repeatedly appending a ready
instruction to some stream, so the search space is complete.
"""
from __future__ import annotations

import time

from .matrix import ConfigError
from .scheduler import CostedGraph, Schedule, WorkerFront, heuristic_schedule, slot

DEFAULT_NODE_CAP = 10


class InstanceTooLarge(ConfigError):
    pass


def exact_schedule(g: CostedGraph, p: int, node_cap: int = DEFAULT_NODE_CAP,
                   time_budget: float | None = None) -> tuple[Schedule, bool]:
    """Minimum-makespan schedule; the flag reports proven optimality.

    Instances above `node_cap` are rejected unless a time budget is given, in
    which case the best schedule found within the budget is returned.
    """
    n = g.n
    if n > node_cap and time_budget is None:
        raise InstanceTooLarge(
            f"exact scheduler capped at {node_cap} instructions "
            f"(got {n}); pass a time budget to search anyway")
    seed = heuristic_schedule(g, p)
    if n == 0:
        return Schedule([[] for _ in range(p)], [], 0.0, "exact"), True

    # longest df+ex+wb path from each node to a sink, for pruning
    tail = [0.0] * n
    for i in range(n - 1, -1, -1):
        t = 0.0
        for j in g.succs[i]:
            if tail[j] > t:
                t = tail[j]
        tail[i] = g.total(i) + t

    indeg = g.indegrees()
    best_z = seed.makespan
    best_assign: list[list[int]] = [list(s) for s in seed.streams]
    best_t = list(seed.start)
    deadline = time.monotonic() + time_budget if time_budget else None
    timed_out = False

    c = indeg[:]
    e = [0.0] * n
    t_cur = [0.0] * n
    fronts = [(0.0, 0.0, 0.0)] * p
    streams: list[list[int]] = [[] for _ in range(p)]
    ready = sorted([i for i in range(n) if c[i] == 0])

    def dfs(placed: int, cur_z: float):
        nonlocal best_z, best_assign, best_t, timed_out
        if deadline is not None and time.monotonic() > deadline:
            timed_out = True
            return
        if placed == n:
            if cur_z < best_z - 1e-12:
                best_z = cur_z
                best_assign = [list(s) for s in streams]
                best_t = t_cur[:]
            return
        # lower bound: some unplaced node still has its tail ahead of it
        bound = cur_z
        for i in range(n):
            if not placed_mask[i]:
                lb = e[i] + tail[i]
                if lb > bound:
                    bound = lb
        if bound >= best_z - 1e-12:
            return
        for i in list(ready):
            if timed_out:
                return
            tdf, tex = g.df[i], g.ex[i]
            tried = set()
            for k in range(p):
                fr = fronts[k]
                if fr in tried:
                    continue
                tried.add(fr)
                h = slot(e[i], tdf, tex, WorkerFront(*fr))
                comp = h + g.total(i)
                if max(cur_z, e[i] + tail[i], h + tail[i]) >= best_z - 1e-12:
                    continue
                # place i on k
                ready.remove(i)
                placed_mask[i] = True
                streams[k].append(i)
                old_front = fronts[k]
                fronts[k] = (h + tdf, h + tdf + tex, comp)
                t_cur[i] = h
                newly = []
                e_old = []
                for j in g.succs[i]:
                    c[j] -= 1
                    e_old.append((j, e[j]))
                    if comp > e[j]:
                        e[j] = comp
                    if c[j] == 0:
                        newly.append(j)
                ready.extend(newly)
                ready.sort()
                dfs(placed + 1, max(cur_z, comp))
                # undo
                for j in newly:
                    ready.remove(j)
                for j, ev in e_old:
                    c[j] += 1
                    e[j] = ev
                fronts[k] = old_front
                streams[k].pop()
                placed_mask[i] = False
                ready.append(i)
                ready.sort()

    placed_mask = [False] * n
    dfs(0, 0.0)
    sched = Schedule(best_assign, best_t, best_z, "exact")
    return sched, not timed_out
