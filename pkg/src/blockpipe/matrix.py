"""Dense matrix storage with divisor padding, block views and opcode metadata.

Matrices carry logical dimensions (n, m) plus a padded row-major buffer whose
dimensions are the smallest multiples of the active divisor. All pad cells are
kept at exactly zero so block kernels can run on full padded blocks.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are invalid for the requested operation."""


class ConfigError(ValueError):
    """Configuration values are out of their legal range."""


class Precision(enum.Enum):
    SINGLE = "single"
    DOUBLE = "double"

    @property
    def dtype(self):
        return np.float32 if self is Precision.SINGLE else np.float64

    @property
    def element_bytes(self) -> int:
        return 4 if self is Precision.SINGLE else 8

    @property
    def default_divisor(self) -> int:
        return 4 if self is Precision.SINGLE else 2

    @property
    def default_buffer_elems(self) -> int:
        return 9216 if self is Precision.SINGLE else 4608


class Opcode(enum.Enum):
    MADD = "MADD"
    MSUB = "MSUB"
    MMUL = "MMUL"
    EMUL = "EMUL"
    EDIV = "EDIV"
    EPOW = "EPOW"
    SADD = "SADD"
    SSUB = "SSUB"
    SMUL = "SMUL"
    ABS = "ABS"
    MOD = "MOD"
    SIN = "SIN"
    COS = "COS"
    SIGN = "SIGN"
    ROUND = "ROUND"
    EQ = "EQ"
    NEQ = "NEQ"

    @property
    def arity(self) -> int:
        return 2 if self in _BINARY else 1

    @property
    def takes_scalar(self) -> bool:
        return self in _SCALAR

    @property
    def is_matmul(self) -> bool:
        return self is Opcode.MMUL

    @property
    def zero_preserving(self) -> bool:
        """True when the op maps zero pad cells to zero (given zero-pad inputs)."""
        return self in _ZERO_PRESERVING


_BINARY = {Opcode.MADD, Opcode.MSUB, Opcode.MMUL, Opcode.EMUL, Opcode.EDIV,
           Opcode.EPOW, Opcode.EQ, Opcode.NEQ}
_SCALAR = {Opcode.SADD, Opcode.SSUB, Opcode.SMUL, Opcode.MOD}
# EDiv/EPow/Eq/Neq/SAdd/SSub/Cos/Mod can turn zero pads nonzero (0/0, 0^0,
# 0==0, 0+c, cos 0, ...); their result pads are re-zeroed after the kernel.
_ZERO_PRESERVING = {Opcode.MADD, Opcode.MSUB, Opcode.MMUL, Opcode.EMUL,
                    Opcode.SMUL, Opcode.ABS, Opcode.SIN, Opcode.SIGN,
                    Opcode.ROUND}


def pad_dims(n: int, m: int, divisor: int) -> tuple[int, int]:
    """Smallest multiples of `divisor` that are >= n, m."""
    if n < 1 or m < 1:
        raise ShapeError(f"matrix dims must be positive, got {n}x{m}")
    if divisor < 1:
        raise ConfigError(f"divisor must be >= 1, got {divisor}")
    return (-(-n // divisor) * divisor, -(-m // divisor) * divisor)


@dataclass(frozen=True)
class BlockView:
    """A rectangular window into a padded matrix, in element units."""
    row_start: int
    row_count: int
    col_start: int
    col_count: int


@dataclass(frozen=True)
class Matrix:
    """Immutable dense matrix: logical n x m inside a zero-padded buffer."""
    precision: Precision
    n: int
    m: int
    data: np.ndarray = field(repr=False)

    @property
    def padded_rows(self) -> int:
        return self.data.shape[0]

    @property
    def padded_cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.m)

    def logical(self) -> np.ndarray:
        """Read-only view of the logical region."""
        return self.data[:self.n, :self.m]

    def block(self, view: BlockView) -> np.ndarray:
        return self.data[view.row_start:view.row_start + view.row_count,
                         view.col_start:view.col_start + view.col_count]


def make_matrix(precision: Precision, n: int, m: int, divisor: int,
                elements) -> Matrix:
    """Build a Matrix from row-major logical values, zeroing the pads."""
    flat = np.asarray(elements, dtype=precision.dtype).reshape(-1)
    if flat.size != n * m:
        raise ShapeError(f"expected {n * m} elements for {n}x{m}, got {flat.size}")
    np_, mp_ = pad_dims(n, m, divisor)
    buf = np.zeros((np_, mp_), dtype=precision.dtype)
    buf[:n, :m] = flat.reshape(n, m)
    buf.setflags(write=False)
    return Matrix(precision, n, m, buf)


def from_logical(precision: Precision, arr: np.ndarray, divisor: int) -> Matrix:
    """Wrap a 2-D array of logical values into padded storage."""
    arr = np.asarray(arr, dtype=precision.dtype)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got ndim={arr.ndim}")
    return make_matrix(precision, arr.shape[0], arr.shape[1], divisor, arr)


def result_shape(op: Opcode, shapes: list[tuple[int, int]]) -> tuple[int, int]:
    """Shape of op's result; raises ShapeError on operand mismatch."""
    if len(shapes) != op.arity:
        raise ShapeError(f"{op.value} takes {op.arity} matrix operand(s), "
                         f"got {len(shapes)}")
    if op.is_matmul:
        (n, k1), (k2, m) = shapes
        if k1 != k2:
            raise ShapeError(f"MMUL inner dims differ: {n}x{k1} * {k2}x{m}")
        return (n, m)
    if op.arity == 2 and shapes[0] != shapes[1]:
        raise ShapeError(f"{op.value} operands must match: "
                         f"{shapes[0]} vs {shapes[1]}")
    return shapes[0]


def round_half_away(x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Round halves away from zero (matrix-language convention, not banker's)."""
    if out is None:
        out = np.empty_like(x)
    np.fabs(x, out=out)
    np.add(out, 0.5, out=out)
    np.floor(out, out=out)
    return np.copysign(out, x, out=out)
