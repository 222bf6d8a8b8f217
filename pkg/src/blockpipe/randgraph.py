"""Random costed instruction DAGs for scheduler benchmarks and fuzzing."""
from __future__ import annotations

import numpy as np

from .scheduler import CostedGraph


def random_costed_graph(rng: np.random.Generator, n: int,
                        edge_prob: float = 0.25,
                        max_duration: float = 10.0) -> CostedGraph:
    """DAG with edges only from lower to higher ids (id order is topological)."""
    succs: list[list[int]] = [[] for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < edge_prob:
                succs[i].append(j)
    df = [float(rng.integers(1, int(max_duration) + 1)) for _ in range(n)]
    ex = [float(rng.integers(1, int(max_duration) + 1)) for _ in range(n)]
    wb = [float(rng.integers(1, int(max_duration) + 1)) for _ in range(n)]
    return CostedGraph(df, ex, wb, succs)


def layered_costed_graph(rng: np.random.Generator, nodes: int, layers: int,
                         edges_per_node: int = 2) -> CostedGraph:
    """Layered DAG (each node depends on nodes of the previous layer)."""
    per = nodes // layers
    n = per * layers
    succs: list[list[int]] = [[] for _ in range(n)]
    for layer in range(1, layers):
        base = layer * per
        prev = (layer - 1) * per
        for v in range(base, base + per):
            for u in rng.integers(prev, prev + per, size=edges_per_node):
                succs[int(u)].append(v)
    df = rng.uniform(1, 10, size=n).tolist()
    ex = rng.uniform(1, 10, size=n).tolist()
    wb = rng.uniform(1, 10, size=n).tolist()
    return CostedGraph(df, ex, wb, succs)
