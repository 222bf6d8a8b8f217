"""Partition matrices into divisor-aligned blocks and rewrite a trace into
block-level instructions.

Partitioning depends only on a matrix's dimensions (plus the global divisor
and buffer capacity), so equal-dimension matrices always share a layout and
operands of any lowered operation are compatible by construction; no
re-partition instruction ever exists.

Defaults follow the buffer arithmetic for single precision (S=9216, divisor 4)
and double precision (S=4608, divisor 2). Other sections of the source
material quote 9728/4864 for the raw buffer capacity; the effective per-block
cap used here is always divisor*floor(sqrt(S)/divisor) per side with S as
configured.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .matrix import BlockView, ConfigError, Opcode, pad_dims


@dataclass(frozen=True)
class Partitioning:
    """Block layout of a padded matrix: p x q blocks of k_i x l_j elements."""
    p: int
    q: int
    row_heights: tuple[int, ...]
    col_widths: tuple[int, ...]
    divisor: int
    buffer_elems: int

    @property
    def padded_rows(self) -> int:
        return sum(self.row_heights)

    @property
    def padded_cols(self) -> int:
        return sum(self.col_widths)

    def row_offsets(self) -> list[int]:
        offs, acc = [], 0
        for h in self.row_heights:
            offs.append(acc)
            acc += h
        return offs

    def col_offsets(self) -> list[int]:
        offs, acc = [], 0
        for w in self.col_widths:
            offs.append(acc)
            acc += w
        return offs


def axis_units_cap(divisor: int, buffer_elems: int) -> int:
    """Blocks are capped at divisor*floor(sqrt(S)/divisor) elements per side."""
    cap = int(math.isqrt(buffer_elems)) // divisor
    if cap < 1:
        raise ConfigError(
            f"buffer of {buffer_elems} elements cannot hold one "
            f"{divisor}x{divisor} block")
    return cap


def _axis_partition(extent: int, divisor: int, cap_units: int) -> tuple[int, ...]:
    units = -(-extent // divisor)          # groups-of-divisor rows
    count = -(-units // cap_units)         # blocks along this axis
    base = units // count
    spare = units % count                  # one extra unit each, smallest indices
    return tuple(divisor * (base + (1 if i < spare else 0)) for i in range(count))


def partition(n: int, m: int, divisor: int, buffer_elems: int) -> Partitioning:
    """Deterministic block layout for an n x m matrix."""
    if n < 1 or m < 1:
        raise ConfigError(f"matrix dims must be positive, got {n}x{m}")
    cap = axis_units_cap(divisor, buffer_elems)
    heights = _axis_partition(n, divisor, cap)
    widths = _axis_partition(m, divisor, cap)
    return Partitioning(len(heights), len(widths), heights, widths,
                        divisor, buffer_elems)


@dataclass(slots=True)
class LoweredNode:
    """One block-level instruction (or a constant block view)."""
    id: int
    opcode: Opcode | None          # None marks a constant block
    operands: tuple[int, ...]
    scalar: float | None
    rows: int
    cols: int
    origin: int                    # unlowered instruction this block belongs to
    source: int | None = None      # producing node id, for constant blocks
    view: BlockView | None = None
    valid_rows: int = 0            # non-pad extent of the output block
    valid_cols: int = 0

    @property
    def is_const(self) -> bool:
        return self.opcode is None


class LoweredGraph:
    """Block-level dependence graph plus per-origin result grids."""

    def __init__(self):
        self.nodes: list[LoweredNode] = []
        self.result_map: dict[int, list[list[int]]] = {}
        self.partitionings: dict[int, Partitioning] = {}

    def new_node(self, **kw) -> int:
        nid = len(self.nodes)
        self.nodes.append(LoweredNode(id=nid, **kw))
        return nid

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    def edges(self):
        for node in self.nodes:
            for src in node.operands:
                yield (src, node.id)

    @property
    def edge_count(self) -> int:
        return sum(len(n.operands) for n in self.nodes)

    def schedulable(self) -> list[LoweredNode]:
        """Instructions that execute; constant blocks are never scheduled."""
        return [n for n in self.nodes if not n.is_const]

    def op_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for n in self.nodes:
            key = n.opcode.value if n.opcode else "CONST"
            counts[key] = counts.get(key, 0) + 1
        return counts

    def to_json(self) -> str:
        payload = {
            "nodes": [
                {
                    "id": n.id,
                    "kind": "const" if n.is_const else "op",
                    "opcode": n.opcode.value if n.opcode else None,
                    "rows": n.rows,
                    "cols": n.cols,
                    "origin": n.origin,
                    "scalar": n.scalar,
                }
                for n in self.nodes
            ],
            "edges": [[u, v] for (u, v) in self.edges()],
            "result_map": {str(k): v for k, v in self.result_map.items()},
        }
        return json.dumps(payload, indent=1)


def _valid_extent(offset: int, size: int, logical: int) -> int:
    """Rows/cols of a block that fall inside the logical region."""
    return max(0, min(size, logical - offset))


class _Lowerer:
    def __init__(self, graph: LoweredGraph, divisor: int, buffer_elems: int):
        self.g = graph
        self.divisor = divisor
        self.buffer_elems = buffer_elems

    def const_grid(self, origin: int, n: int, m: int) -> list[list[int]]:
        part = partition(n, m, self.divisor, self.buffer_elems)
        self.g.partitionings[origin] = part
        roffs, coffs = part.row_offsets(), part.col_offsets()
        grid = []
        for i in range(part.p):
            row = []
            for j in range(part.q):
                view = BlockView(roffs[i], part.row_heights[i],
                                 coffs[j], part.col_widths[j])
                row.append(self.g.new_node(
                    opcode=None, operands=(), scalar=None,
                    rows=view.row_count, cols=view.col_count,
                    origin=origin, source=origin, view=view,
                    valid_rows=_valid_extent(roffs[i], view.row_count, n),
                    valid_cols=_valid_extent(coffs[j], view.col_count, m)))
            grid.append(row)
        self.g.result_map[origin] = grid
        return grid

    def lower_unary(self, origin: int, grid, op: Opcode, scalar,
                    n: int, m: int, part: Partitioning) -> list[list[int]]:
        roffs, coffs = part.row_offsets(), part.col_offsets()
        out = []
        for i in range(part.p):
            row = []
            for j in range(part.q):
                src = self.g.nodes[grid[i][j]]
                row.append(self.g.new_node(
                    opcode=op, operands=(src.id,), scalar=scalar,
                    rows=src.rows, cols=src.cols, origin=origin,
                    valid_rows=_valid_extent(roffs[i], src.rows, n),
                    valid_cols=_valid_extent(coffs[j], src.cols, m)))
            out.append(row)
        return out

    def lower_binary(self, origin: int, grid_a, grid_b, op: Opcode,
                     n: int, m: int, part: Partitioning) -> list[list[int]]:
        assert len(grid_a) == len(grid_b) and len(grid_a[0]) == len(grid_b[0]), \
            "binary operand grids must share a partitioning"
        roffs, coffs = part.row_offsets(), part.col_offsets()
        out = []
        for i in range(part.p):
            row = []
            for j in range(part.q):
                a = self.g.nodes[grid_a[i][j]]
                b = self.g.nodes[grid_b[i][j]]
                assert (a.rows, a.cols) == (b.rows, b.cols), \
                    "corresponding blocks must have equal dims"
                row.append(self.g.new_node(
                    opcode=op, operands=(a.id, b.id), scalar=None,
                    rows=a.rows, cols=a.cols, origin=origin,
                    valid_rows=_valid_extent(roffs[i], a.rows, n),
                    valid_cols=_valid_extent(coffs[j], a.cols, m)))
            out.append(row)
        return out

    def lower_matmul(self, origin: int, grid_a, grid_b,
                     n: int, m: int, part: Partitioning) -> list[list[int]]:
        p_a, q_a = len(grid_a), len(grid_a[0])
        q_b = len(grid_b[0])
        assert len(grid_b) == q_a, "column partition of A must match rows of B"
        roffs, coffs = part.row_offsets(), part.col_offsets()
        out = []
        for i in range(p_a):
            row = []
            for j in range(q_b):
                rows = self.g.nodes[grid_a[i][0]].rows
                cols = self.g.nodes[grid_b[0][j]].cols
                vr = _valid_extent(roffs[i], rows, n)
                vc = _valid_extent(coffs[j], cols, m)
                # one product per inner index, then a FIFO pairwise add queue
                queue = []
                for r in range(q_a):
                    a = self.g.nodes[grid_a[i][r]]
                    b = self.g.nodes[grid_b[r][j]]
                    assert a.cols == b.rows, "inner block dims must agree"
                    queue.append(self.g.new_node(
                        opcode=Opcode.MMUL, operands=(a.id, b.id), scalar=None,
                        rows=rows, cols=cols, origin=origin,
                        valid_rows=vr, valid_cols=vc))
                while len(queue) > 1:
                    s1 = queue.pop(0)
                    s2 = queue.pop(0)
                    queue.append(self.g.new_node(
                        opcode=Opcode.MADD, operands=(s1, s2), scalar=None,
                        rows=rows, cols=cols, origin=origin,
                        valid_rows=vr, valid_cols=vc))
                row.append(queue[0])
            out.append(row)
        return out


def lower_graph(ops, sources: dict[int, tuple[int, int]], divisor: int,
                buffer_elems: int) -> LoweredGraph:
    """Rewrite pending instructions into a block-level graph.

    `ops` is a topologically ordered sequence of records
    (id, opcode, operand_ids, scalar, (n, m)); `sources` maps every referenced
    id that is not in `ops` (constants and already-computed nodes) to its
    logical shape. Constants are split into block views, never executed.
    """
    g = LoweredGraph()
    low = _Lowerer(g, divisor, buffer_elems)
    grids: dict[int, list[list[int]]] = {}

    def grid_of(node_id: int):
        if node_id not in grids:
            n, m = sources[node_id]
            grids[node_id] = low.const_grid(node_id, n, m)
        return grids[node_id]

    for (nid, op, operand_ids, scalar, shape) in ops:
        n, m = shape
        part = partition(n, m, divisor, buffer_elems)
        g.partitionings[nid] = part
        in_grids = [grid_of(oid) for oid in operand_ids]
        if op.is_matmul:
            out = low.lower_matmul(nid, in_grids[0], in_grids[1], n, m, part)
        elif op.arity == 2:
            out = low.lower_binary(nid, in_grids[0], in_grids[1], op, n, m, part)
        else:
            out = low.lower_unary(nid, in_grids[0], op, scalar, n, m, part)
        grids[nid] = out
        g.result_map[nid] = out
    return g
