"""Expression trees over the phase-space variables ``r, theta, pr, ptheta``.

Trees are immutable. :func:`parse_expr` reads infix text, :func:`diff_expr`
differentiates exactly, :func:`evaluate` works on floats or numpy arrays and
:func:`compile_program` flattens one or more trees into a register program
that the integration core executes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Union

import numpy as np

VARIABLES = ("r", "theta", "pr", "ptheta")
FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at byte offset {offset}")
        self.name = name
        self.offset = offset


class ExprDomainError(ExprError, ArithmeticError):
    """Raised when an expression is evaluated outside its domain."""


@dataclass(frozen=True)
class Expr:
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, as_expr(exponent))

    def __str__(self):
        return format_expr(self)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float


@dataclass(frozen=True, eq=True)
class Var(Expr):
    name: str


@dataclass(frozen=True, eq=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Pow(Expr):
    """``base ** exponent`` with an integer or half-integer exponent."""

    base: Expr
    exponent: Fraction


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True, eq=True)
class Sin(Expr):
    arg: Expr


@dataclass(frozen=True, eq=True)
class Cos(Expr):
    arg: Expr


@dataclass(frozen=True, eq=True)
class Exp(Expr):
    arg: Expr


@dataclass(frozen=True, eq=True)
class Log(Expr):
    arg: Expr


@dataclass(frozen=True, eq=True)
class Sqrt(Expr):
    arg: Expr


_UNARY = {"sin": Sin, "cos": Cos, "exp": Exp, "log": Log, "sqrt": Sqrt}
_BINARY = (Add, Sub, Mul, Div)

Number = Union[int, float]

ZERO = Const(0.0)
ONE = Const(1.0)


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, str):
        return parse_expr(x)
    return Const(float(x))


def _is_const(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


# -- constructors with constant folding -------------------------------------


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    if _is_const(a, 0.0) and not _is_const(b, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    return Div(a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def unary(name: str, a: Expr) -> Expr:
    cls = _UNARY[name]
    if isinstance(a, Const):
        try:
            return Const(float(_eval_unary(name, a.value)))
        except (ValueError, FloatingPointError, ExprDomainError):
            pass
    return cls(a)


def power(base: Expr, exponent: Expr) -> Expr:
    """Build ``base ** exponent``.

    Integer and half-integer constant exponents give a :class:`Pow` node;
    anything else is rewritten as ``exp(exponent * log(base))``.
    """
    if isinstance(exponent, Const):
        v = exponent.value
        if isinstance(base, Const):
            try:
                folded = base.value**v
            except (ZeroDivisionError, OverflowError):
                folded = None
            if isinstance(folded, float):
                return Const(folded)
        if float(v).is_integer():
            return pow_frac(base, Fraction(int(v)))
        if float(2 * v).is_integer():
            return pow_frac(base, Fraction(int(2 * v), 2))
    return Exp(mul(exponent, Log(base)))


def pow_frac(base: Expr, n: Fraction) -> Expr:
    if n == 0:
        return ONE
    if n == 1:
        return base
    if isinstance(base, Const) and (n.denominator == 1 or base.value >= 0):
        try:
            return Const(float(base.value ** float(n)))
        except (ZeroDivisionError, OverflowError):
            pass
    return Pow(base, n)


# -- parser --------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def offset(self, pos: int | None = None) -> int:
        return len(self.text[: self.pos if pos is None else pos].encode("utf-8"))

    def error(self, message: str, pos: int | None = None):
        raise ExprSyntaxError(message, self.offset(pos))

    def skip(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self, ch: str):
        if self.peek() != ch:
            found = repr(self.peek()) if self.peek() else "end of input"
            self.error(f"expected {ch!r}, found {found}")
        self.pos += 1

    def parse(self) -> Expr:
        if not self.peek():
            self.error("empty expression")
        e = self.expr()
        if self.peek():
            self.error(f"unexpected {self.peek()!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek() in ("+", "-"):
            op = self.text[self.pos]
            self.pos += 1
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek() in ("*", "/"):
            op = self.text[self.pos]
            self.pos += 1
            rhs = self.unary()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def unary(self) -> Expr:
        ch = self.peek()
        if ch == "-":
            self.pos += 1
            return neg(self.unary())
        if ch == "+":
            self.pos += 1
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek() == "^":
            self.pos += 1
            return power(base, self.unary())
        return base

    def atom(self) -> Expr:
        ch = self.peek()
        start = self.pos
        if not ch:
            self.error("unexpected end of input")
        if ch == "(":
            self.pos += 1
            e = self.expr()
            if self.peek() != ")":
                self.error("unbalanced parenthesis", start)
            self.pos += 1
            return e
        if ch.isdigit() or ch == ".":
            return self.number()
        if ch.isalpha() or ch == "_":
            while self.pos < len(self.text) and (
                self.text[self.pos].isalnum() or self.text[self.pos] == "_"
            ):
                self.pos += 1
            name = self.text[start : self.pos]
            if name in FUNCTIONS:
                if self.peek() != "(":
                    self.error(f"expected '(' after {name}")
                open_pos = self.pos
                self.pos += 1
                arg = self.expr()
                if self.peek() != ")":
                    self.error("unbalanced parenthesis", open_pos)
                self.pos += 1
                return unary(name, arg)
            if name in VARIABLES:
                return Var(name)
            raise UnknownIdentifierError(name, self.offset(start))
        self.error(f"unexpected {ch!r}")

    def number(self) -> Expr:
        start = self.pos
        text = self.text
        n = len(text)
        while self.pos < n and (text[self.pos].isdigit() or text[self.pos] == "."):
            self.pos += 1
        if self.pos < n and text[self.pos] in "eE":
            save = self.pos
            self.pos += 1
            if self.pos < n and text[self.pos] in "+-":
                self.pos += 1
            if self.pos < n and text[self.pos].isdigit():
                while self.pos < n and text[self.pos].isdigit():
                    self.pos += 1
            else:
                self.pos = save
        literal = text[start : self.pos]
        try:
            return Const(float(literal))
        except ValueError:
            self.error(f"malformed number {literal!r}", start)


def parse_expr(text: str) -> Expr:
    """Parse infix text into an expression tree.

    ``^`` binds tighter than unary minus, which binds tighter than ``*`` and
    ``/``; ``^`` is right-associative.

    >>> parse_expr("r^2*cos(theta)")
    Mul(left=Pow(base=Var(name='r'), exponent=Fraction(2, 1)), right=Cos(arg=Var(name='theta')))
    """
    return _Parser(text).parse()


def format_expr(e: Expr) -> str:
    """Fully parenthesised text that :func:`parse_expr` reads back to ``e``."""
    if isinstance(e, Const):
        return f"({e.value!r})" if e.value < 0 else repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, _BINARY):
        op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(e)]
        return f"({format_expr(e.left)} {op} {format_expr(e.right)})"
    if isinstance(e, Pow):
        n = e.exponent
        expo = str(n.numerator) if n.denominator == 1 else f"({n.numerator}/{n.denominator})"
        if n < 0:
            expo = f"({expo})"
        return f"({format_expr(e.base)}^{expo})"
    if isinstance(e, Neg):
        return f"(-{format_expr(e.arg)})"
    name = type(e).__name__.lower()
    return f"{name}({format_expr(e.arg)})"


# -- differentiation ---------------------------------------------------------------


def diff_expr(e: Expr, var: str) -> Expr:
    """Exact derivative of ``e`` with respect to ``var``.

    The result is only constant-folded, so it may be larger than necessary.
    Shared subtrees are differentiated once.
    """
    if var not in VARIABLES:
        raise UnknownIdentifierError(var, 0)
    memo: dict[int, Expr] = {}

    def d(x: Expr) -> Expr:
        key = id(x)
        if key in memo:
            return memo[key]
        if isinstance(x, Const):
            out = ZERO
        elif isinstance(x, Var):
            out = ONE if x.name == var else ZERO
        elif isinstance(x, Add):
            out = add(d(x.left), d(x.right))
        elif isinstance(x, Sub):
            out = sub(d(x.left), d(x.right))
        elif isinstance(x, Neg):
            out = neg(d(x.arg))
        elif isinstance(x, Mul):
            out = add(mul(d(x.left), x.right), mul(x.left, d(x.right)))
        elif isinstance(x, Div):
            da, db = d(x.left), d(x.right)
            if _is_const(db, 0.0):
                out = div(da, x.right)
            else:
                out = div(sub(mul(da, x.right), mul(x.left, db)), pow_frac(x.right, Fraction(2)))
        elif isinstance(x, Pow):
            db = d(x.base)
            n = x.exponent
            out = mul(mul(Const(float(n)), pow_frac(x.base, n - 1)), db)
        else:
            da = d(x.arg)
            if _is_const(da, 0.0):
                out = ZERO
            elif isinstance(x, Sin):
                out = mul(Cos(x.arg), da)
            elif isinstance(x, Cos):
                out = neg(mul(Sin(x.arg), da))
            elif isinstance(x, Exp):
                out = mul(x, da)
            elif isinstance(x, Log):
                out = div(da, x.arg)
            elif isinstance(x, Sqrt):
                out = div(da, mul(Const(2.0), x))
            else:  # pragma: no cover
                raise TypeError(f"unknown node {type(x).__name__}")
        memo[key] = out
        return out

    return d(e)


def free_variables(e: Expr) -> set[str]:
    out: set[str] = set()
    stack = [e]
    while stack:
        x = stack.pop()
        if isinstance(x, Var):
            out.add(x.name)
        elif isinstance(x, _BINARY):
            stack += [x.left, x.right]
        elif isinstance(x, Pow):
            stack.append(x.base)
        elif not isinstance(x, Const):
            stack.append(x.arg)
    return out


# -- evaluation -----------------------------------------------------------------------


def _eval_unary(name: str, v):
    if name == "sin":
        return np.sin(v)
    if name == "cos":
        return np.cos(v)
    if name == "exp":
        return np.exp(v)
    if name == "log":
        if np.any(np.asarray(v) <= 0):
            raise ExprDomainError("log of a non-positive value")
        return np.log(v)
    if np.any(np.asarray(v) < 0):
        raise ExprDomainError("sqrt of a negative value")
    return np.sqrt(v)


def _eval_pow(v, n: Fraction):
    if n.denominator == 1:
        k = n.numerator
        if k < 0 and np.any(np.asarray(v) == 0):
            raise ExprDomainError("division by zero in power")
        return v**k
    if np.any(np.asarray(v) < 0):
        raise ExprDomainError("half-integer power of a negative value")
    return np.sqrt(v) ** n.numerator


def evaluate(e: Expr, env: Mapping[str, Number | np.ndarray]):
    """Evaluate ``e`` with variable values taken from ``env``.

    Values may be floats or broadcastable numpy arrays. Domain violations
    (log of a non-positive number, division by zero, ...) raise
    :class:`ExprDomainError`.
    """
    memo: dict[int, object] = {}

    def ev(x: Expr):
        key = id(x)
        if key in memo:
            return memo[key]
        if isinstance(x, Const):
            out = x.value
        elif isinstance(x, Var):
            try:
                out = env[x.name]
            except KeyError:
                raise UnknownIdentifierError(x.name, 0) from None
        elif isinstance(x, Add):
            out = ev(x.left) + ev(x.right)
        elif isinstance(x, Sub):
            out = ev(x.left) - ev(x.right)
        elif isinstance(x, Mul):
            out = ev(x.left) * ev(x.right)
        elif isinstance(x, Div):
            den = ev(x.right)
            if np.any(np.asarray(den) == 0):
                raise ExprDomainError("division by zero")
            out = ev(x.left) / den
        elif isinstance(x, Neg):
            out = -ev(x.arg)
        elif isinstance(x, Pow):
            out = _eval_pow(ev(x.base), x.exponent)
        else:
            out = _eval_unary(type(x).__name__.lower(), ev(x.arg))
        memo[key] = out
        return out

    with np.errstate(over="ignore"):
        out = ev(e)
    if isinstance(out, np.ndarray) and out.ndim == 0:
        out = float(out)
    elif isinstance(out, np.floating):
        out = float(out)
    return out


# -- register programs ---------------------------------------------------------------

OP_CONST, OP_VAR, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_NEG = range(7)
OP_POWI, OP_POWH, OP_SIN, OP_COS, OP_EXP, OP_LOG, OP_SQRT = range(7, 14)

_UNARY_OPS = {Neg: OP_NEG, Sin: OP_SIN, Cos: OP_COS, Exp: OP_EXP, Log: OP_LOG, Sqrt: OP_SQRT}
_BINARY_OPS = {Add: OP_ADD, Sub: OP_SUB, Mul: OP_MUL, Div: OP_DIV}


@dataclass(frozen=True)
class Program:
    """Straight-line register program.

    Instruction ``k`` writes slot ``k`` from slots ``a[k]``/``b[k]``; constants
    and power exponents live in ``c``. ``outputs`` lists the result slots.
    """

    ops: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    outputs: np.ndarray

    def __len__(self):
        return len(self.ops)

    def run(self, state: Iterable[float]) -> np.ndarray:
        """Evaluate all outputs at ``state = (r, theta, pr, ptheta)`` in pure Python."""
        x = [float(v) for v in state]
        slots = [0.0] * len(self.ops)
        ops, a, b, c = self.ops.tolist(), self.a.tolist(), self.b.tolist(), self.c.tolist()
        for k, op in enumerate(ops):
            slots[k] = _step(op, slots, a[k], b[k], c[k], x)
        return np.array([slots[i] for i in self.outputs.tolist()])


def _step(op, s, a, b, c, x):
    if op == OP_CONST:
        return c
    if op == OP_VAR:
        return x[a]
    if op == OP_ADD:
        return s[a] + s[b]
    if op == OP_SUB:
        return s[a] - s[b]
    if op == OP_MUL:
        return s[a] * s[b]
    if op == OP_DIV:
        return s[a] / s[b] if s[b] != 0.0 else math.copysign(math.inf, s[a]) if s[a] else math.nan
    if op == OP_NEG:
        return -s[a]
    if op == OP_POWI:
        v = s[a]
        n = int(c)
        if v == 0.0 and n < 0:
            return math.inf
        return v**n
    if op == OP_POWH:
        v = s[a]
        return math.sqrt(v) ** int(c) if v >= 0 else math.nan
    if op == OP_SIN:
        return math.sin(s[a])
    if op == OP_COS:
        return math.cos(s[a])
    if op == OP_EXP:
        try:
            return math.exp(s[a])
        except OverflowError:
            return math.inf
    if op == OP_LOG:
        return math.log(s[a]) if s[a] > 0 else math.nan
    if op == OP_SQRT:
        return math.sqrt(s[a]) if s[a] >= 0 else math.nan
    raise ValueError(f"bad opcode {op}")


def compile_program(outputs: Iterable[Expr]) -> Program:
    """Flatten expression trees into one program with common subexpressions shared."""
    ops: list[int] = []
    a: list[int] = []
    b: list[int] = []
    c: list[float] = []
    cse: dict[tuple, int] = {}
    by_id: dict[int, int] = {}

    def emit(key: tuple) -> int:
        slot = cse.get(key)
        if slot is None:
            slot = len(ops)
            op, ia, ib, cv = key
            ops.append(op)
            a.append(ia)
            b.append(ib)
            c.append(cv)
            cse[key] = slot
        return slot

    def visit(x: Expr) -> int:
        hit = by_id.get(id(x))
        if hit is not None:
            return hit
        if isinstance(x, Const):
            slot = emit((OP_CONST, 0, 0, float(x.value)))
        elif isinstance(x, Var):
            slot = emit((OP_VAR, VARIABLES.index(x.name), 0, 0.0))
        elif type(x) in _BINARY_OPS:
            slot = emit((_BINARY_OPS[type(x)], visit(x.left), visit(x.right), 0.0))
        elif isinstance(x, Pow):
            n = x.exponent
            if n.denominator == 1:
                slot = emit((OP_POWI, visit(x.base), 0, float(n.numerator)))
            else:
                slot = emit((OP_POWH, visit(x.base), 0, float(n.numerator)))
        else:
            slot = emit((_UNARY_OPS[type(x)], visit(x.arg), 0, 0.0))
        by_id[id(x)] = slot
        return slot

    outs = [visit(e) for e in outputs]
    return Program(
        ops=np.asarray(ops, dtype=np.int32),
        a=np.asarray(a, dtype=np.int32),
        b=np.asarray(b, dtype=np.int32),
        c=np.asarray(c, dtype=np.float64),
        outputs=np.asarray(outs, dtype=np.int32),
    )
