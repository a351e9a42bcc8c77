"""A tiny arithmetic language for writing dynamics componentwise.

Grammar (``^`` binds tighter than unary minus, which binds tighter than
``* /``, which bind tighter than ``+ -``)::

    sum    := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ['^' atom]          # exponent: non-negative integer literal
    atom   := NUMBER | VAR | '(' sum ')'

Variables are ``x1..xn`` (state) and ``u1..um`` (control).  System files are
line oriented::

    dims 3 1
    f1 = -x1 + x3 + u1^2/2
    f2 = x1*x3 - x2
    f3 = x3 + u1^2/2
    finv1 = -x1 + x3          # optional, all n or none
    ...
    ubox1 = -5 5              # optional, per control coordinate

Problem files append ``phi = <expr>`` (state only) and optionally
``c = <expr>`` (state and control).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

from .errors import DimensionMismatch, ExprSyntaxError, NonIntegerExponent


# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    kind: str  # "x" or "u"
    index: int  # 1-based, as written

    @property
    def name(self):
        return f"{self.kind}{self.index}"


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


Expr = Union[Num, Var, Neg, BinOp]


# --------------------------------------------------------------------------
# tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<var>[xu]\d+)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


def _tokenize(text, line=None):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", line, pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, line=None):
        self.text = text
        self.line = line
        self.tokens = _tokenize(text, line)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, msg, tok=None, cls=ExprSyntaxError):
        tok = tok or self.peek()
        return cls(msg, self.line, tok[2])

    def parse(self):
        if self.peek()[0] == "end":
            raise self.error("empty expression")
        e = self.sum()
        if self.peek()[0] != "end":
            raise self.error(f"unexpected token {self.peek()[1]!r}")
        return e

    def sum(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.term())
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.unary())
        return e

    def unary(self):
        if self.peek()[1] == "-" and self.peek()[0] == "op":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            tok = self.peek()
            exponent = self.atom()
            if not (isinstance(exponent, Num) and float(exponent.value).is_integer()
                    and exponent.value >= 0):
                raise self.error("exponent must be a non-negative integer literal",
                                 tok, NonIntegerExponent)
            if self.peek()[1] == "^":
                raise self.error("chained '^' is ambiguous; add parentheses")
            return BinOp("^", base, Num(float(exponent.value)))
        return base

    def atom(self):
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "var":
            index = int(text[1:])
            if index < 1:
                raise ExprSyntaxError(f"variable index must start at 1: {text}",
                                      self.line, pos)
            return Var(text[0], index)
        if text == "(":
            e = self.sum()
            if self.peek()[1] != ")":
                raise self.error("expected ')'")
            self.take()
            return e
        if kind == "end":
            raise ExprSyntaxError("unexpected end of expression", self.line, pos)
        raise ExprSyntaxError(f"unexpected token {text!r}", self.line, pos)


def parse_expr(text: str, n: int | None = None, m: int | None = None,
               line: int | None = None) -> Expr:
    """Parse one expression; with ``n``/``m`` given, check variable bounds."""
    e = _Parser(text, line).parse()
    if n is not None or m is not None:
        check_bounds(e, n if n is not None else 0, m if m is not None else 0, line)
    return e


def variables(e: Expr) -> set:
    if isinstance(e, Var):
        return {e}
    if isinstance(e, Num):
        return set()
    if isinstance(e, Neg):
        return variables(e.arg)
    return variables(e.left) | variables(e.right)


def check_bounds(e, n, m, line=None):
    for v in variables(e):
        limit = n if v.kind == "x" else m
        if v.index > limit:
            raise DimensionMismatch(
                f"{'line %d: ' % line if line else ''}variable {v.name} "
                f"out of range (n={n}, m={m})")


# --------------------------------------------------------------------------
# printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}
_UNARY = 3
_POWER = 4
_ATOM = 5


def _prec(e):
    if isinstance(e, BinOp):
        return _POWER if e.op == "^" else _PREC[e.op]
    if isinstance(e, Neg):
        return _UNARY
    if isinstance(e, Num) and math.copysign(1.0, e.value) < 0:
        return _UNARY  # printed with a leading minus
    return _ATOM


def format_number(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return "-0" if v == 0 and math.copysign(1.0, v) < 0 else str(int(v))
    return repr(float(v))


def to_text(e: Expr) -> str:
    """Render with the minimal parentheses that re-parse to the same tree."""
    if isinstance(e, Num):
        return format_number(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        inner = to_text(e.arg)
        if _prec(e.arg) < _UNARY:
            inner = f"({inner})"
        return f"-{inner}"
    if e.op == "^":
        base = to_text(e.left)
        if _prec(e.left) < _ATOM:
            base = f"({base})"
        return f"{base}^{format_number(e.right.value)}"
    p = _PREC[e.op]
    left = to_text(e.left)
    if _prec(e.left) < p:
        left = f"({left})"
    right = to_text(e.right)
    if _prec(e.right) <= p:
        right = f"({right})"
    return f"{left} {e.op} {right}"


def to_python(e: Expr, xname="x", uname="u") -> str:
    """Fully parenthesised Python source; variables become 0-based indexing."""
    if isinstance(e, Num):
        return f"({float(e.value)!r})"
    if isinstance(e, Var):
        return f"{xname if e.kind == 'x' else uname}[{e.index - 1}]"
    if isinstance(e, Neg):
        return f"(-{to_python(e.arg, xname, uname)})"
    if e.op == "^":
        return f"({to_python(e.left, xname, uname)} ** {int(e.right.value)})"
    return f"({to_python(e.left, xname, uname)} {e.op} {to_python(e.right, xname, uname)})"


# --------------------------------------------------------------------------
# evaluation


def evaluate(e: Expr, x: Sequence, u: Sequence = ()):
    """Evaluate over any scalar type closed under + - * / and int powers."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return x[e.index - 1] if e.kind == "x" else u[e.index - 1]
    if isinstance(e, Neg):
        return -evaluate(e.arg, x, u)
    a = evaluate(e.left, x, u)
    if e.op == "^":
        return a ** int(e.right.value)
    b = evaluate(e.right, x, u)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    return a / b


def substitute(e: Expr, mapping: dict) -> Expr:
    """Replace variables by expressions; ``mapping`` keys are ``Var`` nodes."""
    if isinstance(e, Var):
        return mapping.get(e, e)
    if isinstance(e, Num):
        return e
    if isinstance(e, Neg):
        return Neg(substitute(e.arg, mapping))
    return BinOp(e.op, substitute(e.left, mapping), substitute(e.right, mapping))


def compile_exprs(exprs: Sequence[Expr], name="fn"):
    """Compile a list of expressions into ``fn(x, u) -> list``.

    The generated code performs exactly the operations of :func:`evaluate`
    in the same order, so results agree bit for bit.
    """
    body = ", ".join(to_python(e) for e in exprs)
    src = f"def {name}(x, u):\n    return [{body}]\n"
    ns: dict = {}
    exec(compile(src, f"<dtctrl:{name}>", "exec"), ns)
    fn = ns[name]
    fn.source = src
    return fn


# --------------------------------------------------------------------------
# system and problem files


@dataclass(frozen=True)
class SystemFile:
    n: int
    m: int
    dynamics: tuple
    inverse: tuple | None = None
    u_box: tuple | None = None  # ((lo, hi), ...) per control coordinate


@dataclass(frozen=True)
class ProblemFile:
    system: SystemFile
    phi: Expr
    c: Expr | None = None


_ASSIGN_RE = re.compile(r"^\s*([A-Za-z]+)(\d*)\s*=\s*(.*)$")


def _strip_comment(line):
    i = line.find("#")
    return line if i < 0 else line[:i]


def _parse_lines(text):
    lines = [(k + 1, _strip_comment(raw).strip()) for k, raw in enumerate(text.splitlines())]
    return [(no, s) for no, s in lines if s]


def _parse_dims(lines):
    if not lines:
        raise ExprSyntaxError("empty system file: expected 'dims <n> <m>'")
    no, first = lines[0]
    parts = first.split()
    if len(parts) != 3 or parts[0] != "dims":
        raise ExprSyntaxError("first line must be 'dims <n> <m>'", no)
    try:
        n, m = int(parts[1]), int(parts[2])
    except ValueError:
        raise ExprSyntaxError("dims must be integers", no) from None
    if n < 1 or m < 1:
        raise DimensionMismatch(f"line {no}: dims must be positive, got {n} {m}")
    return n, m


def _parse_body(text, allowed_extra=()):
    lines = _parse_lines(text)
    n, m = _parse_dims(lines)
    f: dict = {}
    finv: dict = {}
    box: dict = {}
    extra: dict = {}
    for no, s in lines[1:]:
        mt = _ASSIGN_RE.match(s)
        if mt is None:
            raise ExprSyntaxError(f"cannot parse line {s!r}", no)
        key, idx, rhs = mt.groups()
        if key in allowed_extra and idx == "":
            if key in extra:
                raise ExprSyntaxError(f"duplicate '{key}'", no)
            extra[key] = (no, rhs)
            continue
        if key not in ("f", "finv", "ubox") or idx == "":
            raise ExprSyntaxError(f"unknown key {key}{idx!s}", no)
        i = int(idx)
        target = {"f": f, "finv": finv, "ubox": box}[key]
        bound = m if key == "ubox" else n
        if not 1 <= i <= bound:
            raise DimensionMismatch(f"line {no}: {key}{i} out of range (n={n}, m={m})")
        if i in target:
            raise ExprSyntaxError(f"duplicate {key}{i}", no)
        if key == "ubox":
            try:
                lo, hi = (float(t) for t in rhs.split())
            except ValueError:
                raise ExprSyntaxError("ubox needs two numbers '<lo> <hi>'", no) from None
            if not lo < hi:
                raise DimensionMismatch(f"line {no}: empty control interval [{lo}, {hi}]")
            target[i] = (lo, hi)
        else:
            target[i] = parse_expr(rhs, n, m, line=no)
    if len(f) != n:
        missing = sorted(set(range(1, n + 1)) - set(f))
        raise DimensionMismatch(f"dynamics need {n} components; missing f{missing}")
    if finv and len(finv) != n:
        raise DimensionMismatch(f"inverse needs all {n} components, got {len(finv)}")
    if box and len(box) != m:
        raise DimensionMismatch(f"ubox needs all {m} coordinates, got {len(box)}")
    sf = SystemFile(
        n=n,
        m=m,
        dynamics=tuple(f[i] for i in range(1, n + 1)),
        inverse=tuple(finv[i] for i in range(1, n + 1)) if finv else None,
        u_box=tuple(box[i] for i in range(1, m + 1)) if box else None,
    )
    return sf, extra


def parse(text: str) -> SystemFile:
    """Parse a system file."""
    return _parse_body(text)[0]


def parse_problem(text: str) -> ProblemFile:
    """Parse a system file followed by ``phi = ...`` and optional ``c = ...``."""
    sf, extra = _parse_body(text, allowed_extra=("phi", "c"))
    if "phi" not in extra:
        raise ExprSyntaxError("problem file needs a 'phi = <expr>' line")
    no, rhs = extra["phi"]
    phi = parse_expr(rhs, sf.n, 0, line=no)
    c = None
    if "c" in extra:
        no, rhs = extra["c"]
        c = parse_expr(rhs, sf.n, sf.m, line=no)
    return ProblemFile(sf, phi, c)


def format_system(sf: SystemFile) -> str:
    out = [f"dims {sf.n} {sf.m}"]
    out += [f"f{i} = {to_text(e)}" for i, e in enumerate(sf.dynamics, 1)]
    if sf.inverse:
        out += [f"finv{i} = {to_text(e)}" for i, e in enumerate(sf.inverse, 1)]
    if sf.u_box:
        out += [f"ubox{i} = {format_number(lo)} {format_number(hi)}"
                for i, (lo, hi) in enumerate(sf.u_box, 1)]
    return "\n".join(out) + "\n"
