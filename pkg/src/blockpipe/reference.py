"""Independent dense oracle for every supported operation.

Results are computed directly on the unpartitioned logical data, never through
the block path. Matrix products use a sequential-order float64 contraction so
the oracle's summation order is independent of pairwise block summation.
"""
from __future__ import annotations

import numpy as np

from .matrix import Matrix, Opcode, from_logical, result_shape, round_half_away


def _matmul_direct(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # einsum without optimization contracts in fixed i,j,k order; float64
    # accumulation keeps the oracle's error negligible next to the tolerance.
    acc = np.einsum("ik,kj->ij", a.astype(np.float64), b.astype(np.float64),
                    optimize=False)
    return acc


def _eval_logical(op: Opcode, ops: list[np.ndarray], scalar) -> np.ndarray:
    a = ops[0]
    b = ops[1] if len(ops) > 1 else None
    with np.errstate(all="ignore"):
        if op is Opcode.MADD:
            return a + b
        if op is Opcode.MSUB:
            return a - b
        if op is Opcode.MMUL:
            return _matmul_direct(a, b)
        if op is Opcode.EMUL:
            return a * b
        if op is Opcode.EDIV:
            return a / b
        if op is Opcode.EPOW:
            return a ** b
        if op is Opcode.SADD:
            return a + a.dtype.type(scalar)
        if op is Opcode.SSUB:
            return a - a.dtype.type(scalar)
        if op is Opcode.SMUL:
            return a * a.dtype.type(scalar)
        if op is Opcode.ABS:
            return np.abs(a)
        if op is Opcode.MOD:
            return np.mod(a, a.dtype.type(scalar))
        if op is Opcode.SIN:
            return np.sin(a)
        if op is Opcode.COS:
            return np.cos(a)
        if op is Opcode.SIGN:
            return np.sign(a)
        if op is Opcode.ROUND:
            return round_half_away(a)
        if op is Opcode.EQ:
            return (a == b).astype(a.dtype)
        if op is Opcode.NEQ:
            return (a != b).astype(a.dtype)
    raise AssertionError(f"unhandled opcode {op}")


def reference_eval(op: Opcode, operands: list[Matrix], scalar=None,
                   divisor: int | None = None) -> Matrix:
    """Evaluate one operation on whole matrices; repads the result."""
    if op.takes_scalar and scalar is None:
        raise ValueError(f"{op.value} requires a scalar parameter")
    precision = operands[0].precision
    result_shape(op, [o.shape for o in operands])
    if divisor is None:
        divisor = precision.default_divisor
    out = _eval_logical(op, [o.logical() for o in operands], scalar)
    return from_logical(precision, out.astype(precision.dtype), divisor)


def max_norm_rel_error(got: Matrix, want: Matrix) -> float:
    """Matrix-level relative error: ||got - want||_inf / max(1e-30, ||want||_inf).

    inf and nan cells must match positionally; mismatches return inf.
    """
    g = np.asarray(got.logical(), dtype=np.float64)
    w = np.asarray(want.logical(), dtype=np.float64)
    if g.shape != w.shape:
        return float("inf")
    if not (np.array_equal(np.isnan(g), np.isnan(w))
            and np.array_equal(np.isinf(g), np.isinf(w))):
        return float("inf")
    finite = np.isfinite(w)
    if np.any(np.isinf(w) & (np.sign(g) != np.sign(w))):
        return float("inf")
    if not np.any(finite):
        return 0.0
    diff = np.max(np.abs(g[finite] - w[finite]))
    scale = max(np.max(np.abs(w[finite])), 1e-30)
    return float(diff / scale)
