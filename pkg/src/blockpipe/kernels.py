"""Dense block kernels executed inside workers.

Each kernel writes into a preallocated staging view. Division by zero and
similar follow IEEE-754 (inf/nan), never raising.
"""
from __future__ import annotations

import numpy as np

from .matrix import Opcode, round_half_away


def _k_madd(a, b, s, out):
    np.add(a, b, out=out)


def _k_msub(a, b, s, out):
    np.subtract(a, b, out=out)


def _k_mmul(a, b, s, out):
    np.matmul(a, b, out=out)


def _k_emul(a, b, s, out):
    np.multiply(a, b, out=out)


def _k_ediv(a, b, s, out):
    with np.errstate(all="ignore"):
        np.divide(a, b, out=out)


def _k_epow(a, b, s, out):
    with np.errstate(all="ignore"):
        np.power(a, b, out=out)


def _k_sadd(a, b, s, out):
    np.add(a, a.dtype.type(s), out=out)


def _k_ssub(a, b, s, out):
    np.subtract(a, a.dtype.type(s), out=out)


def _k_smul(a, b, s, out):
    np.multiply(a, a.dtype.type(s), out=out)


def _k_abs(a, b, s, out):
    np.abs(a, out=out)


def _k_mod(a, b, s, out):
    with np.errstate(all="ignore"):
        np.mod(a, a.dtype.type(s), out=out)


def _k_sin(a, b, s, out):
    np.sin(a, out=out)


def _k_cos(a, b, s, out):
    np.cos(a, out=out)


def _k_sign(a, b, s, out):
    np.sign(a, out=out)


def _k_round(a, b, s, out):
    round_half_away(a, out=out)


def _k_eq(a, b, s, out):
    np.equal(a, b, out=out, casting="unsafe")


def _k_neq(a, b, s, out):
    np.not_equal(a, b, out=out, casting="unsafe")


KERNELS = {
    Opcode.MADD: _k_madd,
    Opcode.MSUB: _k_msub,
    Opcode.MMUL: _k_mmul,
    Opcode.EMUL: _k_emul,
    Opcode.EDIV: _k_ediv,
    Opcode.EPOW: _k_epow,
    Opcode.SADD: _k_sadd,
    Opcode.SSUB: _k_ssub,
    Opcode.SMUL: _k_smul,
    Opcode.ABS: _k_abs,
    Opcode.MOD: _k_mod,
    Opcode.SIN: _k_sin,
    Opcode.COS: _k_cos,
    Opcode.SIGN: _k_sign,
    Opcode.ROUND: _k_round,
    Opcode.EQ: _k_eq,
    Opcode.NEQ: _k_neq,
}


def execute_block_op(opcode: Opcode, a: np.ndarray, b: np.ndarray | None,
                     scalar, out: np.ndarray,
                     valid_rows: int | None = None,
                     valid_cols: int | None = None) -> np.ndarray:
    """Run one block kernel; re-zero result pads for non-zero-preserving ops."""
    KERNELS[opcode](a, b, scalar, out)
    if not opcode.zero_preserving:
        vr = out.shape[0] if valid_rows is None else valid_rows
        vc = out.shape[1] if valid_cols is None else valid_cols
        if vr < out.shape[0]:
            out[vr:, :] = 0
        if vc < out.shape[1]:
            out[:, vc:] = 0
    return out
