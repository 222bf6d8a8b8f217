"""Random trace-script generator and an eager reference interpreter.

Generated programs exercise every opcode while staying numerically tame:
element-wise power always sees a positive base, divisions see denominators
bounded away from zero, and discontinuous ops (EQ/NEQ/SIGN/ROUND/MOD) only
consume values that are bit-reproducible between the block engine and the
dense oracle (anything not downstream of a matrix product, whose summation
order legitimately differs between the two).
"""
from __future__ import annotations

import numpy as np

from .matrix import Matrix, Opcode, Precision, from_logical, make_matrix
from .reference import reference_eval
from .script import (LiteralBind, OpBind, PrintStmt, RandBind, Statement,
                     parse_script)

CONT_UNARY = [Opcode.ABS, Opcode.SIN, Opcode.COS]
DISC_UNARY = [Opcode.SIGN, Opcode.ROUND]
CONT_SCALAR = [Opcode.SADD, Opcode.SSUB, Opcode.SMUL]
EW_CONT = [Opcode.MADD, Opcode.MSUB, Opcode.EMUL, Opcode.EDIV, Opcode.EPOW]
EW_DISC = [Opcode.EQ, Opcode.NEQ]


def random_program(seed: int, n_ops: int = 8, max_dim: int = 300,
                   min_dim: int = 1, matmul_weight: float = 0.25) -> str:
    """Generate script text with roughly `n_ops` operation statements."""
    rng = np.random.default_rng(seed)
    names: list[str] = []
    shapes: dict[str, tuple[int, int]] = {}
    exact: dict[str, bool] = {}
    lines: list[str] = []
    counter = 0

    def fresh() -> str:
        nonlocal counter
        counter += 1
        return f"v{counter}"

    def dim() -> int:
        # mostly small matrices, occasionally large ones
        if rng.random() < 0.25:
            return int(rng.integers(min_dim, max_dim + 1))
        return int(rng.integers(min_dim, min(40, max_dim) + 1))

    def new_rand(n: int, m: int) -> str:
        name = fresh()
        lines.append(f"{name} = RAND({n}, {m});")
        names.append(name)
        shapes[name] = (n, m)
        exact[name] = True
        return name

    def record(name: str, shape, is_exact: bool) -> None:
        names.append(name)
        shapes[name] = shape
        exact[name] = is_exact

    def pick(shape=None, need_exact=False) -> str:
        pool = [nm for nm in names
                if (shape is None or shapes[nm] == shape)
                and (not need_exact or exact[nm])]
        if not pool:
            return new_rand(*(shape or (dim(), dim())))
        return pool[int(rng.integers(len(pool)))]

    for _ in range(int(rng.integers(1, 4))):
        new_rand(dim(), dim())

    ops_emitted = 0
    while ops_emitted < n_ops:
        r = rng.random()
        if r < matmul_weight:
            op = Opcode.MMUL
        else:
            group = [CONT_UNARY, DISC_UNARY, CONT_SCALAR, [Opcode.MOD],
                     EW_CONT, EW_DISC][int(rng.integers(6))]
            op = group[int(rng.integers(len(group)))]
        name = fresh()
        if op is Opcode.MMUL:
            a = pick()
            n, k = shapes[a]
            partners = [nm for nm in names if shapes[nm][0] == k]
            b = partners[int(rng.integers(len(partners)))] if partners \
                else new_rand(k, dim())
            lines.append(f"{name} = MMUL({a}, {b});")
            record(name, (n, shapes[b][1]), False)
        elif op in (Opcode.EDIV, Opcode.EPOW):
            a = pick()
            shape = shapes[a]
            raw = pick(shape)
            absd = fresh()
            lines.append(f"{absd} = ABS({raw});")
            record(absd, shape, exact[raw])
            safe = fresh()
            lines.append(f"{safe} = SADD({absd}, 0.5);")
            record(safe, shape, exact[absd])
            if op is Opcode.EPOW:
                # bounded exponent keeps base**exp inside float range
                expn = fresh()
                lines.append(f"{expn} = SIN({a});")
                record(expn, shape, exact[a])
                lines.append(f"{name} = EPOW({safe}, {expn});")
                record(name, shape, exact[expn] and exact[safe])
            else:
                lines.append(f"{name} = EDIV({a}, {safe});")
                record(name, shape, exact[a] and exact[safe])
        elif op in EW_DISC:
            a = pick(need_exact=True)
            b = pick(shapes[a], need_exact=True)
            lines.append(f"{name} = {op.value}({a}, {b});")
            record(name, shapes[a], True)
        elif op.arity == 2:
            a = pick()
            b = pick(shapes[a])
            lines.append(f"{name} = {op.value}({a}, {b});")
            record(name, shapes[a], exact[a] and exact[b])
        elif op.takes_scalar:
            need = op is Opcode.MOD
            a = pick(need_exact=need)
            if op is Opcode.MOD:
                scalar = float(rng.choice([2.0, 3.0, 4.5]))
            else:
                scalar = round(float(rng.uniform(-2, 2)), 3)
            lines.append(f"{name} = {op.value}({a}, {scalar});")
            record(name, shapes[a], exact[a])
        else:
            need = op in DISC_UNARY
            a = pick(need_exact=need)
            lines.append(f"{name} = {op.value}({a});")
            record(name, shapes[a], exact[a])
        ops_emitted += 1

    tail = names[-6:]
    k = max(1, min(3, len(tail)))
    for nm in rng.choice(tail, size=k, replace=False):
        lines.append(f"PRINT({nm})")
    return "\n".join(lines) + "\n"


def chain_program(chains: int, length: int, dim: int = 96) -> str:
    """Independent matmul chains (the synthetic scaling workload)."""
    lines = []
    for c in range(chains):
        lines.append(f"m{c} = RAND({dim}, {dim});")
        lines.append(f"x{c}_0 = RAND({dim}, {dim});")
        for k in range(length):
            lines.append(f"x{c}_{k+1} = MMUL(x{c}_{k}, m{c});")
    for c in range(chains):
        lines.append(f"PRINT(x{c}_{length})")
    return "\n".join(lines) + "\n"


def eval_program_reference(stmts: list[Statement], precision: Precision,
                           seed: int, divisor: int) -> list[tuple[str, Matrix]]:
    """Eagerly interpret statements with the dense oracle; returns PRINTs.

    Draws RAND values from the same seeded generator scheme as Session so
    both interpreters see identical inputs.
    """
    rng = np.random.default_rng(seed)
    env: dict[str, Matrix] = {}
    printed: list[tuple[str, Matrix]] = []
    for stmt in stmts:
        if isinstance(stmt, LiteralBind):
            rows = stmt.rows
            env[stmt.name] = make_matrix(precision, len(rows), len(rows[0]),
                                         divisor, [v for r in rows for v in r])
        elif isinstance(stmt, RandBind):
            data = rng.random((stmt.n, stmt.m), dtype=np.float64)
            env[stmt.name] = from_logical(precision,
                                          data.astype(precision.dtype), divisor)
        elif isinstance(stmt, OpBind):
            operands = [env[a] for a in stmt.args]
            env[stmt.name] = reference_eval(stmt.opcode, operands, stmt.scalar,
                                            divisor)
        elif isinstance(stmt, PrintStmt):
            printed.append((stmt.name, env[stmt.name]))
    return printed


def parse_and_eval_reference(text: str, precision: Precision, seed: int,
                             divisor: int) -> list[tuple[str, Matrix]]:
    return eval_program_reference(parse_script(text), precision, seed, divisor)
