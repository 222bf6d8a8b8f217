"""Per-stage cost models for block instructions, fit by ordinary least squares.

One shared transfer model covers data fetch and write back (fetch cost is the
sum of per-operand transfer estimates); each opcode gets its own execute model.
Bases follow the published polynomial forms: transfers are affine in block
rows/cols, element-wise execution is affine in the element count, and matrix
multiplication adds a row-overhead term to the fused n1*n2*n3 term.
"""
from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass

import numpy as np

from .matrix import Opcode


class Stage(enum.Enum):
    DF = "df"
    EX = "ex"
    WB = "wb"


TRANSFER = "transfer"


class FitError(ValueError):
    """Raised when a model class has too few or degenerate samples."""


@dataclass(frozen=True)
class ProfileSample:
    """Measured per-stage durations of one block instruction execution."""
    opcode: Opcode
    nvec: tuple[int, ...]           # (n1, n2) or (n1, n2, n3) for matmul
    df_ns: float
    ex_ns: float
    wb_ns: float


def ex_class(opcode: Opcode) -> str:
    return f"ex:{opcode.value}"


def basis(opcode: Opcode, stage: Stage, nvec: tuple[int, ...]) -> list[float]:
    """Basis term values g_k(n) for one instruction and stage."""
    if stage is Stage.EX:
        if opcode.is_matmul:
            n1, n2, n3 = nvec
            return [1.0, float(n1), float(n1) * n2 * n3]
        n1, n2 = nvec[0], nvec[1]
        return [1.0, float(n1) * n2]
    # df and wb share the transfer basis over one block's dims
    n1, n2 = nvec[0], nvec[1]
    return [1.0, float(n1), float(n2)]


def operand_dims(opcode: Opcode, nvec: tuple[int, ...]) -> list[tuple[int, int]]:
    if opcode.is_matmul:
        n1, n2, n3 = nvec
        return [(n1, n2), (n2, n3)]
    dims = (nvec[0], nvec[1])
    return [dims] * opcode.arity


def result_dims(opcode: Opcode, nvec: tuple[int, ...]) -> tuple[int, int]:
    if opcode.is_matmul:
        return (nvec[0], nvec[2])
    return (nvec[0], nvec[1])


def _transfer_row(dims: list[tuple[int, int]]) -> list[float]:
    # sum of per-operand affine transfer costs stays linear in (a0, a1, a2)
    return [float(len(dims)),
            float(sum(d[0] for d in dims)),
            float(sum(d[1] for d in dims))]


class TimeModel:
    """Fitted coefficients per model class; estimates are clamped to >= 0."""

    def __init__(self, coeffs: dict[str, np.ndarray],
                 residuals: dict[str, float] | None = None):
        self.coeffs = {k: np.asarray(v, dtype=np.float64) for k, v in coeffs.items()}
        self.residuals = dict(residuals or {})

    def transfer_estimate(self, dims: list[tuple[int, int]]) -> float:
        a = self.coeffs.get(TRANSFER)
        if a is None:
            raise FitError("no transfer model fitted")
        row = _transfer_row(dims)
        return max(0.0, float(a[0] * row[0] + a[1] * row[1] + a[2] * row[2]))

    def estimate(self, opcode: Opcode, stage: Stage,
                 nvec: tuple[int, ...]) -> float:
        if stage is Stage.DF:
            return self.transfer_estimate(operand_dims(opcode, nvec))
        if stage is Stage.WB:
            return self.transfer_estimate([result_dims(opcode, nvec)])
        key = ex_class(opcode)
        a = self.coeffs.get(key)
        if a is None:
            raise FitError(f"no execute model fitted for class {key}")
        return max(0.0, float(np.dot(a, basis(opcode, stage, nvec))))

    def to_json(self) -> str:
        payload = {}
        term_names = {2: ["1", "n1*n2"], 3: None}
        for key, a in sorted(self.coeffs.items()):
            if key == TRANSFER:
                entry = {"basis": ["1", "n1", "n2"], "a": list(map(float, a)),
                         "residual": self.residuals.get(key, 0.0)}
                payload[key] = {"df": entry, "wb": entry}
            else:
                names = (["1", "n1", "n1*n2*n3"] if key == ex_class(Opcode.MMUL)
                         else ["1", "n1*n2"])
                payload[key] = {"ex": {"basis": names, "a": list(map(float, a)),
                                       "residual": self.residuals.get(key, 0.0)}}
        return json.dumps(payload, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "TimeModel":
        raw = json.loads(text)
        coeffs, residuals = {}, {}
        for key, stages in raw.items():
            entry = next(iter(stages.values()))
            coeffs[key] = np.asarray(entry["a"], dtype=np.float64)
            residuals[key] = float(entry.get("residual", 0.0))
        return cls(coeffs, residuals)


def _drop_max_per_group(rows):
    """Per (opcode, nvec, stage), drop the single largest repetition."""
    groups: dict[tuple, list[int]] = {}
    for idx, (op, nvec, stage, dur) in enumerate(rows):
        groups.setdefault((op, nvec, stage), []).append(idx)
    drop = set()
    for idxs in groups.values():
        if len(idxs) > 1:
            drop.add(max(idxs, key=lambda i: rows[i][3]))
    return [r for i, r in enumerate(rows) if i not in drop]


def _solve_ols(rows_x: list[list[float]], y: list[float], label: str):
    x = np.asarray(rows_x, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    if x.shape[0] < x.shape[1]:
        raise FitError(f"{label}: {x.shape[0]} samples for {x.shape[1]} terms")
    if np.linalg.matrix_rank(x) < x.shape[1]:
        raise FitError(f"{label}: design matrix is rank deficient "
                       "(profile more than one block size)")
    xtx = x.T @ x
    a = np.linalg.solve(xtx, x.T @ yv)
    resid = float(np.sum((x @ a - yv) ** 2))
    return a, resid


def fit(samples: list[ProfileSample], drop_outliers: bool = True) -> TimeModel:
    """OLS fit of the transfer model and one execute model per opcode."""
    flat = []
    for s in samples:
        flat.append((s.opcode, s.nvec, Stage.DF, s.df_ns))
        flat.append((s.opcode, s.nvec, Stage.EX, s.ex_ns))
        flat.append((s.opcode, s.nvec, Stage.WB, s.wb_ns))
    if drop_outliers:
        flat = _drop_max_per_group(flat)

    transfer_x, transfer_y = [], []
    ex_x: dict[str, list[list[float]]] = {}
    ex_y: dict[str, list[float]] = {}
    for (op, nvec, stage, dur) in flat:
        if stage is Stage.DF:
            transfer_x.append(_transfer_row(operand_dims(op, nvec)))
            transfer_y.append(dur)
        elif stage is Stage.WB:
            transfer_x.append(_transfer_row([result_dims(op, nvec)]))
            transfer_y.append(dur)
        else:
            key = ex_class(op)
            ex_x.setdefault(key, []).append(basis(op, stage, nvec))
            ex_y.setdefault(key, []).append(dur)

    coeffs, residuals = {}, {}
    if transfer_x:
        coeffs[TRANSFER], residuals[TRANSFER] = _solve_ols(
            transfer_x, transfer_y, f"{TRANSFER}/df+wb")
    for key in sorted(ex_x):
        coeffs[key], residuals[key] = _solve_ols(ex_x[key], ex_y[key], f"{key}/ex")
    if not coeffs:
        raise FitError("no samples to fit")
    return TimeModel(coeffs, residuals)


CSV_HEADER = ["opcode", "stage", "n1", "n2", "n3", "duration_ns"]


def write_samples_csv(path: str, samples: list[ProfileSample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for s in samples:
            n3 = s.nvec[2] if len(s.nvec) > 2 else ""
            for stage, dur in ((Stage.DF, s.df_ns), (Stage.EX, s.ex_ns),
                               (Stage.WB, s.wb_ns)):
                w.writerow([s.opcode.value, stage.value, s.nvec[0], s.nvec[1],
                            n3, f"{dur:.1f}"])


def read_samples_csv(path: str) -> list[ProfileSample]:
    pending: dict[tuple, dict[str, float]] = {}
    order: list[tuple] = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        for rownum, row in enumerate(r):
            op = Opcode(row[0])
            nvec = (int(row[2]), int(row[3])) if row[4] == "" else \
                   (int(row[2]), int(row[3]), int(row[4]))
            key = (op, nvec, rownum // 3)
            if key not in pending:
                pending[key] = {}
                order.append(key)
            pending[key][row[1]] = float(row[5])
    samples = []
    for key in order:
        (op, nvec, _) = key
        stages = pending[key]
        samples.append(ProfileSample(op, nvec, stages.get("df", 0.0),
                                     stages.get("ex", 0.0), stages.get("wb", 0.0)))
    return samples


def sweep_sizes(divisor: int, cap: int, stride: int) -> list[int]:
    """Block side lengths from the divisor up to the cap, strided."""
    sizes = list(range(divisor, cap + 1, stride))
    if sizes[-1] != cap:
        sizes.append(cap)
    return sizes
