"""Parser and interpreter for the trace script language.

One statement per line (`#` starts a comment); matrix literals may continue
across lines while their bracket is open. There is no control flow.

    A = [1, 2; 3, 4];
    B = RAND(100, 100);
    C = MADD(A, B);
    PRINT(C)
"""
from __future__ import annotations

from dataclasses import dataclass

from .matrix import Opcode, make_matrix
from .trace import Handle, Session


class ScriptError(ValueError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {msg}")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class LiteralBind:
    name: str
    rows: tuple[tuple[float, ...], ...]
    line: int


@dataclass(frozen=True)
class RandBind:
    name: str
    n: int
    m: int
    line: int


@dataclass(frozen=True)
class OpBind:
    name: str
    opcode: Opcode
    args: tuple[str, ...]
    scalar: float | None
    line: int


@dataclass(frozen=True)
class PrintStmt:
    name: str
    line: int


Statement = LiteralBind | RandBind | OpBind | PrintStmt

_FUNCS = {op.value: op for op in Opcode}


class _Cursor:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def advance(self) -> str:
        ch = self.text[self.pos]
        self.pos += 1
        if ch == "\n":
            self.line += 1
            self.col = 1
        else:
            self.col += 1
        return ch

    def error(self, msg: str):
        raise ScriptError(msg, self.line, self.col)

    def skip_ws(self, newlines: bool = False) -> None:
        while self.pos < len(self.text):
            ch = self.peek()
            if ch == "#":
                while self.pos < len(self.text) and self.peek() != "\n":
                    self.advance()
            elif ch in " \t\r" or (newlines and ch == "\n"):
                self.advance()
            else:
                return

    def at_end(self) -> bool:
        return self.pos >= len(self.text)


def _ident(c: _Cursor) -> str:
    c.skip_ws()
    start = c.pos
    if not (c.peek().isalpha() or c.peek() == "_"):
        c.error(f"expected identifier, found {c.peek()!r}")
    while c.peek().isalnum() or c.peek() == "_":
        c.advance()
    return c.text[start:c.pos]


def _number(c: _Cursor) -> float:
    c.skip_ws()
    start = c.pos
    if c.peek() in "+-":
        c.advance()
    digits = False
    while c.peek().isdigit():
        c.advance()
        digits = True
    if c.peek() == ".":
        c.advance()
        while c.peek().isdigit():
            c.advance()
            digits = True
    if c.peek() in "eE":
        c.advance()
        if c.peek() in "+-":
            c.advance()
        while c.peek().isdigit():
            c.advance()
    if not digits:
        c.error("expected a number")
    return float(c.text[start:c.pos])


def _expect(c: _Cursor, ch: str) -> None:
    c.skip_ws()
    if c.peek() != ch:
        c.error(f"expected {ch!r}, found {c.peek()!r}")
    c.advance()


def _literal(c: _Cursor) -> tuple[tuple[float, ...], ...]:
    _expect(c, "[")
    rows: list[tuple[float, ...]] = []
    row: list[float] = []
    while True:
        c.skip_ws(newlines=True)
        row.append(_number(c))
        c.skip_ws(newlines=True)
        ch = c.peek()
        if ch == ",":
            c.advance()
        elif ch == ";":
            c.advance()
            rows.append(tuple(row))
            row = []
        elif ch == "]":
            c.advance()
            rows.append(tuple(row))
            break
        else:
            c.error(f"expected ',', ';' or ']', found {ch!r}")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        c.error("literal rows have unequal lengths")
    return tuple(rows)


def _call(c: _Cursor, name: str, line: int, target: str) -> Statement:
    if name == "RAND":
        _expect(c, "(")
        n = _number(c)
        _expect(c, ",")
        m = _number(c)
        _expect(c, ")")
        if n != int(n) or m != int(m) or n < 1 or m < 1:
            c.error("RAND dims must be positive integers")
        return RandBind(target, int(n), int(m), line)
    op = _FUNCS.get(name)
    if op is None:
        c.error(f"unknown function {name!r}")
    _expect(c, "(")
    first = _ident(c)
    c.skip_ws()
    args: list[str] = [first]
    scalar = None
    if c.peek() == ",":
        c.advance()
        c.skip_ws()
        if c.peek().isalpha() or c.peek() == "_":
            args.append(_ident(c))
        else:
            scalar = _number(c)
    _expect(c, ")")
    nargs = len(args)
    if op.takes_scalar:
        if scalar is None or nargs != 1:
            c.error(f"{name} takes (matrix, scalar)")
    elif op.arity == 2:
        if nargs != 2 or scalar is not None:
            c.error(f"{name} takes two matrix arguments")
    else:
        if nargs != 1 or scalar is not None:
            c.error(f"{name} takes one matrix argument")
    return OpBind(target, op, tuple(args), scalar, line)


def parse_script(text: str) -> list[Statement]:
    """Parse a script; raises ScriptError with line/column on bad input."""
    c = _Cursor(text)
    stmts: list[Statement] = []
    defined: set[str] = set()
    while True:
        c.skip_ws(newlines=True)
        if c.at_end():
            break
        line = c.line
        name = _ident(c)
        c.skip_ws()
        if name == "PRINT":
            _expect(c, "(")
            target = _ident(c)
            _expect(c, ")")
            if target not in defined:
                c.error(f"undefined identifier {target!r}")
            stmts.append(PrintStmt(target, line))
        else:
            _expect(c, "=")
            c.skip_ws()
            ch = c.peek()
            if ch == "[":
                stmts.append(LiteralBind(name, _literal(c), line))
            else:
                fn = _ident(c)
                stmt = _call(c, fn, line, name)
                if isinstance(stmt, OpBind):
                    for arg in stmt.args:
                        if arg not in defined:
                            c.error(f"undefined identifier {arg!r}")
                stmts.append(stmt)
            defined.add(name)
        c.skip_ws()
        if c.peek() == ";":
            c.advance()
            c.skip_ws()
        if not c.at_end() and c.peek() != "\n":
            c.error(f"unexpected trailing input {c.peek()!r}")
    return stmts


def format_matrix(name: str, mat) -> str:
    """Row-major text: a header line then one line per logical row."""
    lines = [f"# {name} {mat.n}x{mat.m}"]
    log = mat.logical()
    for i in range(mat.n):
        lines.append(" ".join(repr(float(v)) for v in log[i]))
    return "\n".join(lines)


def run_program(stmts: list[Statement], session: Session, out) -> None:
    """Execute parsed statements against a session; PRINT forces and emits."""
    env: dict[str, Handle] = {}
    for stmt in stmts:
        if isinstance(stmt, LiteralBind):
            rows = stmt.rows
            mat = make_matrix(session.config.precision, len(rows),
                              len(rows[0]), session.config.resolved_divisor,
                              [v for r in rows for v in r])
            env[stmt.name] = session.constant(mat)
        elif isinstance(stmt, RandBind):
            env[stmt.name] = session.rand(stmt.n, stmt.m)
        elif isinstance(stmt, OpBind):
            handles = [env[a] for a in stmt.args]
            env[stmt.name] = session.apply(stmt.opcode, handles, stmt.scalar)
        else:
            mat = session.force(env[stmt.name])
            out.write(format_matrix(stmt.name, mat))
            out.write("\n")
