"""Emit the pipelined-scheduling integer program as CPLEX-LP text.

The model minimizes the makespan z over a schedule graph: a synthetic start
node s with at most p outgoing edges encodes the worker streams, every real
instruction has exactly one predecessor and at most one successor, precedence
edges force operand completion, and three stream constraints keep consecutive
instructions' pipeline stages from overlapping. Products t_i * x_ij are
linearized through y_ij with the big-M constant U = sum of all durations.

Instructions are numbered 1..n in the emitted file.
"""
from __future__ import annotations

from .scheduler import CostedGraph


def _f(v: float) -> str:
    return f"{v:.10g}"


def emit_ilp(g: CostedGraph, p: int) -> str:
    n = g.n
    df = g.df
    dfex = [g.df[i] + g.ex[i] for i in range(n)]
    total = [g.total(i) for i in range(n)]
    U = sum(total)
    lines: list[str] = []
    add = lines.append

    add(f"\\ pipelined precedence-constrained scheduling, {n} instructions, "
        f"{p} processors, U={_f(U)}")
    add("Minimize")
    add(" obj: z")
    add("Subject To")

    for i in range(n):
        add(f" makespan_{i+1}: t_{i+1} - z <= {_f(-total[i])}")

    for i in range(n):
        for j in g.succs[i]:
            add(f" prec_{i+1}_{j+1}: t_{i+1} - t_{j+1} <= {_f(-total[i])}")

    def stream_row(name: str, j: int, dur: list[float], rhs: float):
        parts = []
        for i in range(n):
            if i == j:
                continue
            parts.append(f"y_{i+1}_{j+1}")
            if dur[i] != 0.0:
                parts.append(f"{_f(dur[i])} x_{i+1}_{j+1}")
        expr = " + ".join(parts)
        add(f" {name}_{j+1}: {expr} - t_{j+1} <= {_f(rhs)}")

    for j in range(n):
        stream_row("stream_df", j, df, 0.0)
    for j in range(n):
        stream_row("stream_ex", j, dfex, df[j])
    for j in range(n):
        stream_row("stream_wb", j, total, dfex[j])

    add(" processors: " + " + ".join(f"x_s_{j+1}" for j in range(n))
        + f" <= {p}")

    for i in range(n):
        others = [f"x_{i+1}_{j+1}" for j in range(n) if j != i]
        if others:
            add(f" succ_{i+1}: " + " + ".join(others) + " <= 1")

    for j in range(n):
        preds = [f"x_s_{j+1}"] + [f"x_{i+1}_{j+1}" for i in range(n) if i != j]
        add(f" pred_{j+1}: " + " + ".join(preds) + " = 1")

    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            a, b = i + 1, j + 1
            add(f" lin1_{a}_{b}: y_{a}_{b} - {_f(U)} x_{a}_{b} <= 0")
            add(f" lin2_{a}_{b}: t_{a} + {_f(U)} x_{a}_{b} - y_{a}_{b} <= {_f(U)}")
            add(f" lin3_{a}_{b}: y_{a}_{b} - t_{a} <= 0")

    add("Bounds")
    add(" 0 <= z")
    for i in range(n):
        add(f" 0 <= t_{i+1}")
    for i in range(n):
        for j in range(n):
            if i != j:
                add(f" 0 <= y_{i+1}_{j+1}")

    add("Binary")
    for j in range(n):
        add(f" x_s_{j+1}")
    for i in range(n):
        for j in range(n):
            if i != j:
                add(f" x_{i+1}_{j+1}")
    add("End")
    return "\n".join(lines) + "\n"
