"""Small arithmetic expression language for problem coefficients.

Coefficient entries A(t), f(t,x), g(t,x) are written as text in the
variables ``t`` and ``x1..xn``.  Grammar (ASCII):

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right-associative
    atom   := NUMBER | IDENT | '(' expr ')' | FUNC '(' expr ')'

so ``^`` binds tighter than unary minus, which binds tighter than
``*``/``/``, which bind tighter than ``+``/``-``.  Numbers are decimal
with an optional exponent.  Functions: sin, cos, exp, sqrt, abs, log,
sign (the last two exist so every expression has a representable
partial derivative).

Trees are immutable; ``evaluate`` is the checked scalar interpreter
(domain violations raise, never produce NaN), ``compile_entry`` emits a
fast numpy-vectorized callable for the simulation hot path.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "sqrt", "abs", "log", "sign")


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Union[Const, Var, Neg, BinOp, Call]


class ParseError(ValueError):
    """Malformed source; carries the byte position and what was expected."""

    def __init__(self, position: int, expected: str, found: str):
        super().__init__(f"at position {position}: expected {expected}, found {found}")
        self.position = position
        self.expected = expected
        self.found = found


class UnknownVariableError(ParseError):
    def __init__(self, position: int, name: str, n: int):
        ValueError.__init__(
            self, f"at position {position}: unknown variable '{name}' (legal: t, x1..x{n})"
        )
        self.position = position
        self.expected = f"t or x1..x{n}"
        self.found = name
        self.name = name


class EvalDomainError(ArithmeticError):
    """Evaluation left the real domain (division by zero, sqrt of a negative, ...)."""

    def __init__(self, reason: str, subexpr: "Expr"):
        super().__init__(f"{reason} in '{to_source(subexpr)}'")
        self.reason = reason
        self.subexpr = subexpr


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(source: str):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            # skip leading whitespace manually to report the right offset
            stripped = source[pos:].lstrip()
            at = len(source) - len(stripped)
            raise ParseError(at, "a token", repr(stripped[:1]))
        if m.lastgroup == "num":
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.lastgroup == "ident":
            tokens.append(("ident", m.group("ident"), m.start("ident")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


_VAR_RE = re.compile(r"x([1-9]\d*)$")


class _Parser:
    def __init__(self, source: str, n: int):
        self.tokens = _tokenize(source)
        self.n = n
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, symbol: str):
        kind, text, pos = self.peek()
        if kind == "op" and text == symbol:
            return self.advance()
        raise ParseError(pos, f"'{symbol}'", repr(text) if text else "end of input")

    def parse_expr(self) -> Expr:
        node = self.parse_term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                node = BinOp(text, node, self.parse_term())
            else:
                return node

    def parse_term(self) -> Expr:
        node = self.parse_unary()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                node = BinOp(text, node, self.parse_unary())
            else:
                return node

    def parse_unary(self) -> Expr:
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return Neg(self.parse_unary())
        return self.parse_power()

    def parse_power(self) -> Expr:
        base = self.parse_atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            return BinOp("^", base, self.parse_unary())
        return base

    def parse_atom(self) -> Expr:
        kind, text, pos = self.advance()
        if kind == "num":
            return Const(float(text))
        if kind == "ident":
            nxt_kind, nxt_text, _ = self.peek()
            if nxt_kind == "op" and nxt_text == "(":
                if text not in FUNCTIONS:
                    raise ParseError(pos, f"one of {', '.join(FUNCTIONS)}", repr(text))
                self.advance()
                arg = self.parse_expr()
                self.expect_op(")")
                return Call(text, arg)
            if text == "t":
                return Var("t")
            m = _VAR_RE.fullmatch(text)
            if m and 1 <= int(m.group(1)) <= self.n:
                return Var(text)
            raise UnknownVariableError(pos, text, self.n)
        if kind == "op" and text == "(":
            inner = self.parse_expr()
            self.expect_op(")")
            return inner
        raise ParseError(pos, "a number, variable or '('", repr(text) if text else "end of input")


def parse(source: str, n: int) -> Expr:
    """Parse ``source`` over variables t, x1..xn."""
    if n < 1:
        raise ValueError("n must be >= 1")
    p = _Parser(source, n)
    node = p.parse_expr()
    kind, text, pos = p.peek()
    if kind != "end":
        raise ParseError(pos, "end of input", repr(text))
    return node


# precedence levels used by the printer; mirror the grammar
_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return {"+": _PREC_ADD, "-": _PREC_ADD, "*": _PREC_MUL, "/": _PREC_MUL, "^": _PREC_POW}[e.op]
    if isinstance(e, Neg):
        return _PREC_NEG
    if isinstance(e, Const) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return _PREC_NEG
    return _PREC_ATOM


def _fmt(e: Expr, min_prec: int) -> str:
    if isinstance(e, Const):
        text = repr(e.value)
        if text.endswith(".0"):
            text = text[:-2]
    elif isinstance(e, Var):
        text = e.name
    elif isinstance(e, Neg):
        text = "-" + _fmt(e.operand, _PREC_NEG)
    elif isinstance(e, Call):
        return f"{e.func}({_fmt(e.arg, 0)})"
    else:
        if e.op in "+-":
            text = f"{_fmt(e.left, _PREC_ADD)}{e.op}{_fmt(e.right, _PREC_ADD + 1)}"
        elif e.op in "*/":
            text = f"{_fmt(e.left, _PREC_MUL)}{e.op}{_fmt(e.right, _PREC_MUL + 1)}"
        else:
            text = f"{_fmt(e.left, _PREC_ATOM)}^{_fmt(e.right, _PREC_NEG)}"
    if _prec(e) < min_prec:
        return f"({text})"
    return text


def to_source(e: Expr) -> str:
    """Pretty-print so that ``parse(to_source(e), n)`` rebuilds the same tree."""
    return _fmt(e, 0)


def free_variables(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Const):
        return set()
    if isinstance(e, Neg):
        return free_variables(e.operand)
    if isinstance(e, Call):
        return free_variables(e.arg)
    return free_variables(e.left) | free_variables(e.right)


def evaluate(e: Expr, t: float, x) -> float:
    """Checked scalar evaluation; raises EvalDomainError instead of NaN/inf."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        if e.name == "t":
            return float(t)
        return float(x[int(e.name[1:]) - 1])
    if isinstance(e, Neg):
        return -evaluate(e.operand, t, x)
    if isinstance(e, Call):
        v = evaluate(e.arg, t, x)
        try:
            if e.func == "sin":
                return math.sin(v)
            if e.func == "cos":
                return math.cos(v)
            if e.func == "exp":
                return math.exp(v)
            if e.func == "sqrt":
                if v < 0.0:
                    raise EvalDomainError("square root of a negative number", e)
                return math.sqrt(v)
            if e.func == "abs":
                return abs(v)
            if e.func == "log":
                if v <= 0.0:
                    raise EvalDomainError("logarithm of a non-positive number", e)
                return math.log(v)
            return float(np.sign(v))  # sign
        except OverflowError:
            raise EvalDomainError("overflow", e) from None
    left = evaluate(e.left, t, x)
    if e.op == "+":
        return left + evaluate(e.right, t, x)
    if e.op == "-":
        return left - evaluate(e.right, t, x)
    if e.op == "*":
        result = left * evaluate(e.right, t, x)
    elif e.op == "/":
        right = evaluate(e.right, t, x)
        if right == 0.0:
            raise EvalDomainError("division by zero", e)
        result = left / right
    else:  # ^
        right = evaluate(e.right, t, x)
        try:
            result = math.pow(left, right)
        except (ValueError, OverflowError):
            raise EvalDomainError("power outside the real domain", e) from None
    if not math.isfinite(result):
        raise EvalDomainError("overflow", e)
    return result


def _add(a: Expr, b: Expr) -> Expr:
    if a == Const(0.0):
        return b
    if b == Const(0.0):
        return a
    return BinOp("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if b == Const(0.0):
        return a
    if a == Const(0.0):
        return Neg(b)
    return BinOp("-", a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    if a == Const(0.0) or b == Const(0.0):
        return Const(0.0)
    if a == Const(1.0):
        return b
    if b == Const(1.0):
        return a
    return BinOp("*", a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if a == Const(0.0):
        return Const(0.0)
    if b == Const(1.0):
        return a
    return BinOp("/", a, b)


def differentiate(e: Expr, var: str) -> Expr:
    """Symbolic partial derivative with respect to ``var``.

    abs differentiates to sign (so the derivative is 0 at the kink by the
    sign(0)=0 convention), sign differentiates to 0.  Trees come back only
    lightly folded; contracts on the result are semantic.
    """
    if isinstance(e, Const):
        return Const(0.0)
    if isinstance(e, Var):
        return Const(1.0) if e.name == var else Const(0.0)
    if isinstance(e, Neg):
        inner = differentiate(e.operand, var)
        return Const(0.0) if inner == Const(0.0) else Neg(inner)
    if isinstance(e, Call):
        du = differentiate(e.arg, var)
        if e.func == "sin":
            outer: Expr = Call("cos", e.arg)
        elif e.func == "cos":
            outer = Neg(Call("sin", e.arg))
        elif e.func == "exp":
            outer = Call("exp", e.arg)
        elif e.func == "sqrt":
            outer = _div(Const(1.0), _mul(Const(2.0), Call("sqrt", e.arg)))
        elif e.func == "abs":
            outer = Call("sign", e.arg)
        elif e.func == "log":
            outer = _div(Const(1.0), e.arg)
        else:  # sign: flat almost everywhere
            return Const(0.0)
        return _mul(outer, du)
    dl = differentiate(e.left, var)
    dr = differentiate(e.right, var)
    if e.op == "+":
        return _add(dl, dr)
    if e.op == "-":
        return _sub(dl, dr)
    if e.op == "*":
        return _add(_mul(dl, e.right), _mul(e.left, dr))
    if e.op == "/":
        return _div(_sub(_mul(dl, e.right), _mul(e.left, dr)), BinOp("^", e.right, Const(2.0)))
    # power: u^c with c free of var uses the power rule; otherwise go
    # through u^v = exp(v*log(u))
    if var not in free_variables(e.right):
        down = BinOp("^", e.left, _sub(e.right, Const(1.0)))
        return _mul(_mul(e.right, down), dl)
    return _mul(e, _add(_mul(dr, Call("log", e.left)), _mul(e.right, _div(dl, e.left))))


_NUMPY_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "log": np.log,
    "sign": np.sign,
}


def _codegen(e: Expr) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        if e.name == "t":
            return "t"
        return f"X[..., {int(e.name[1:]) - 1}]"
    if isinstance(e, Neg):
        return f"(-{_codegen(e.operand)})"
    if isinstance(e, Call):
        return f"_{e.func}({_codegen(e.arg)})"
    if e.op == "^":
        exponent = e.right
        if isinstance(exponent, Const) and float(exponent.value).is_integer():
            return f"({_codegen(e.left)}**{int(exponent.value)})"
        return f"({_codegen(e.left)}**{_codegen(e.right)})"
    return f"({_codegen(e.left)}{e.op}{_codegen(e.right)})"


def compile_entry(e: Expr) -> Callable:
    """Compile to ``fn(t, X)`` where X indexes states along the last axis.

    Vectorizes over leading axes of X (and/or an array t).  No domain
    checks: out-of-domain inputs propagate as inf/NaN for the caller's
    guards to catch.  Constant expressions return scalars; callers that
    need full shapes must broadcast.
    """
    namespace = {f"_{name}": fn for name, fn in _NUMPY_FUNCS.items()}
    return eval(compile(f"lambda t, X: ({_codegen(e)})", "<exprlang>", "eval"), namespace)
