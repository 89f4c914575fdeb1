"""Scalar expressions over ``x`` and ``y`` used by scenario files.

Grammar (see ``docs/scenario-format.md`` for the full EBNF)::

    expr  := term (("+" | "-") term)*
    term  := unary (("*" | "/") unary)*
    unary := "-" unary | power
    power := atom ["^" ["-"] INTEGER]
    atom  := NUMBER | "x" | "y" | "pi" | "sqrt3"
           | ("sin" | "cos" | "sqrt" | "abs") "(" expr ")" | "(" expr ")"

Exponents are integer literals so that differentiation never needs ``log``.
Expressions are immutable; :meth:`Expr.fn` returns a cached compiled callable
used on the hot integration paths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ExprEvalError, ExprSyntaxError, NonDifferentiableError, UnknownIdentifierError

NAMED_CONSTANTS = {"pi": math.pi, "sqrt3": math.sqrt(3.0)}
FUNCTIONS = ("sin", "cos", "sqrt", "abs")
VARIABLES = ("x", "y")

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


class Expr:
    __slots__ = ()

    prec = _PREC_ATOM

    # -- evaluation ---------------------------------------------------------
    def fn(self):
        """Compiled ``f(x, y)``; raises native arithmetic errors."""
        cached = _COMPILED.get(self)
        if cached is None:
            src = f"lambda x, y: {self.py()}"
            cached = eval(src, dict(_PY_ENV))  # noqa: S307 - source is generated from the AST
            _COMPILED[self] = cached
        return cached

    def eval(self, pt) -> float:
        try:
            return float(self.fn()(float(pt[0]), float(pt[1])))
        except ZeroDivisionError as exc:
            raise ExprEvalError(f"division by zero in {self}") from exc
        except (ValueError, OverflowError) as exc:
            raise ExprEvalError(f"{exc} in {self}") from exc

    # -- structure ----------------------------------------------------------
    def py(self) -> str:
        raise NotImplementedError

    def diff(self, var: str) -> "Expr":
        raise NotImplementedError

    def subs(self, mapping: dict[str, "Expr"]) -> "Expr":
        raise NotImplementedError

    def contains_abs(self) -> bool:
        return False

    def is_zero(self) -> bool:
        return isinstance(self, Const) and self.value == 0.0

    def __str__(self) -> str:
        return self.pretty()

    def pretty(self) -> str:
        raise NotImplementedError

    def _wrap(self, min_prec: int) -> str:
        s = self.pretty()
        return f"({s})" if self.prec < min_prec else s


_COMPILED: dict[Expr, object] = {}
_PY_ENV = {"__builtins__": {}, "_sin": math.sin, "_cos": math.cos, "_sqrt": math.sqrt, "_abs": abs}


@dataclass(frozen=True, slots=True)
class Const(Expr):
    value: float

    @property
    def prec(self):
        return _PREC_NEG if self.value < 0 or str(self.value).startswith("-") else _PREC_ATOM

    def py(self):
        return f"({self.value!r})"

    def diff(self, var):
        return ZERO

    def subs(self, mapping):
        return self

    def pretty(self):
        v = self.value
        if v == int(v) and abs(v) < 1e16:
            return str(int(v)) if not (v == 0 and math.copysign(1, v) < 0) else "0"
        return repr(v)


@dataclass(frozen=True, slots=True)
class Var(Expr):
    name: str

    def py(self):
        return self.name

    def diff(self, var):
        return ONE if var == self.name else ZERO

    def subs(self, mapping):
        return mapping.get(self.name, self)

    def pretty(self):
        return self.name


@dataclass(frozen=True, slots=True)
class Named(Expr):
    name: str

    @property
    def value(self) -> float:
        return NAMED_CONSTANTS[self.name]

    def py(self):
        return f"({self.value!r})"

    def diff(self, var):
        return ZERO

    def subs(self, mapping):
        return self

    def pretty(self):
        return self.name


@dataclass(frozen=True, slots=True)
class Neg(Expr):
    arg: Expr
    prec = _PREC_NEG

    def py(self):
        return f"(-{self.arg.py()})"

    def diff(self, var):
        return neg(self.arg.diff(var))

    def subs(self, mapping):
        return neg(self.arg.subs(mapping))

    def contains_abs(self):
        return self.arg.contains_abs()

    def pretty(self):
        return "-" + self.arg._wrap(_PREC_NEG)


@dataclass(frozen=True, slots=True)
class Func(Expr):
    name: str
    arg: Expr

    def py(self):
        return f"_{self.name}({self.arg.py()})"

    def diff(self, var):
        u = self.arg
        du = u.diff(var)
        if self.name == "abs":
            raise NonDifferentiableError("abs(...) is not differentiable")
        if du.is_zero():
            return ZERO
        if self.name == "sin":
            return mul(Func("cos", u), du)
        if self.name == "cos":
            return neg(mul(Func("sin", u), du))
        # sqrt
        return div(du, mul(Const(2.0), Func("sqrt", u)))

    def subs(self, mapping):
        return Func(self.name, self.arg.subs(mapping))

    def contains_abs(self):
        return self.name == "abs" or self.arg.contains_abs()

    def pretty(self):
        return f"{self.name}({self.arg.pretty()})"


@dataclass(frozen=True, slots=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    @property
    def prec(self):
        return _PREC_ADD if self.op in "+-" else _PREC_MUL

    def py(self):
        return f"({self.left.py()} {self.op} {self.right.py()})"

    def diff(self, var):
        a, b = self.left, self.right
        da, db = a.diff(var), b.diff(var)
        if self.op == "+":
            return add(da, db)
        if self.op == "-":
            return sub(da, db)
        if self.op == "*":
            return add(mul(da, b), mul(a, db))
        # quotient rule
        return div(sub(mul(da, b), mul(a, db)), pow_(b, 2))

    def subs(self, mapping):
        return _BUILD[self.op](self.left.subs(mapping), self.right.subs(mapping))

    def contains_abs(self):
        return self.left.contains_abs() or self.right.contains_abs()

    def pretty(self):
        p = self.prec
        return f"{self.left._wrap(p)}{self.op}{self.right._wrap(p + 1)}"


@dataclass(frozen=True, slots=True)
class Pow(Expr):
    base: Expr
    exp: int
    prec = _PREC_POW

    def py(self):
        return f"({self.base.py()} ** {self.exp})"

    def diff(self, var):
        db = self.base.diff(var)
        if self.exp == 0 or db.is_zero():
            return ZERO
        return mul(mul(Const(float(self.exp)), pow_(self.base, self.exp - 1)), db)

    def subs(self, mapping):
        return pow_(self.base.subs(mapping), self.exp)

    def contains_abs(self):
        return self.base.contains_abs()

    def pretty(self):
        return f"{self.base._wrap(_PREC_ATOM)}^{self.exp}"


ZERO = Const(0.0)
ONE = Const(1.0)
X = Var("x")
Y = Var("y")


# -- folding constructors (constant folding only; no general simplification) --

def _c(e: Expr):
    return e.value if isinstance(e, Const) else None


def add(a: Expr, b: Expr) -> Expr:
    ca, cb = _c(a), _c(b)
    if ca is not None and cb is not None:
        return Const(ca + cb)
    if ca == 0.0:
        return b
    if cb == 0.0:
        return a
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    ca, cb = _c(a), _c(b)
    if ca is not None and cb is not None:
        return Const(ca - cb)
    if cb == 0.0:
        return a
    if ca == 0.0:
        return neg(b)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    ca, cb = _c(a), _c(b)
    if ca is not None and cb is not None:
        return Const(ca * cb)
    if ca == 0.0 or cb == 0.0:
        return ZERO
    if ca == 1.0:
        return b
    if cb == 1.0:
        return a
    if ca == -1.0:
        return neg(b)
    if cb == -1.0:
        return neg(a)
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    ca, cb = _c(a), _c(b)
    if ca == 0.0 and cb != 0.0:
        return ZERO
    if cb == 1.0:
        return a
    if ca is not None and cb is not None and cb != 0.0:
        return Const(ca / cb)
    return BinOp("/", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value) if a.value != 0.0 else ZERO
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def pow_(a: Expr, n: int) -> Expr:
    if n == 0:
        return ONE
    if n == 1:
        return a
    ca = _c(a)
    if ca is not None and (ca != 0.0 or n > 0):
        return Const(ca ** n)
    return Pow(a, n)


_BUILD = {"+": add, "-": sub, "*": mul, "/": div}


def differentiate(e: Expr, var: str) -> Expr:
    if var not in VARIABLES:
        raise ValueError(f"can only differentiate with respect to x or y, got {var!r}")
    if e.contains_abs():
        raise NonDifferentiableError(f"abs(...) is not differentiable: {e}")
    return e.diff(var)


def gradient(e: Expr) -> tuple[Expr, Expr]:
    return differentiate(e, "x"), differentiate(e, "y")


def affine_subs(e: Expr, dx: float, sy: int, dy: float) -> Expr:
    """``e`` composed with ``(x, y) -> (x + dx, sy*y + dy)``."""
    if dx == 0.0 and sy == 1 and dy == 0.0:
        return e
    xs = add(X, Const(dx)) if dx else X
    ys = Y if sy == 1 else neg(Y)
    if dy:
        ys = add(ys, Const(dy))
    return e.subs({"x": xs, "y": ys})


# -- parsing -----------------------------------------------------------------

@dataclass
class _Tok:
    kind: str  # NUM, ID, OP, END
    text: str
    pos: int  # character index


@dataclass
class _Parser:
    src: str
    toks: list = field(default_factory=list)
    i: int = 0

    def byte_offset(self, char_index: int) -> int:
        return len(self.src[:char_index].encode("utf-8"))

    def error(self, msg, tok: _Tok, expected=()):
        raise ExprSyntaxError(msg, self.byte_offset(tok.pos), set(expected))

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text):
        t = self.peek()
        if t.text != text or t.kind == "END":
            self.error(f"unexpected {_describe(t)}", t, {repr(text)})
        return self.take()

    def parse_expr(self) -> Expr:
        left = self.parse_term()
        while self.peek().kind == "OP" and self.peek().text in "+-":
            op = self.take().text
            left = BinOp(op, left, self.parse_term())
        return left

    def parse_term(self) -> Expr:
        left = self.parse_unary()
        while self.peek().kind == "OP" and self.peek().text in "*/":
            op = self.take().text
            left = BinOp(op, left, self.parse_unary())
        return left

    def parse_unary(self) -> Expr:
        if self.peek().kind == "OP" and self.peek().text == "-":
            self.take()
            return Neg(self.parse_unary())
        return self.parse_power()

    def parse_power(self) -> Expr:
        base = self.parse_atom()
        if self.peek().kind == "OP" and self.peek().text == "^":
            self.take()
            sign = 1
            if self.peek().kind == "OP" and self.peek().text == "-":
                self.take()
                sign = -1
            t = self.peek()
            if t.kind != "NUM" or not t.text.isdigit():
                self.error(f"exponent must be an integer literal, got {_describe(t)}", t, {"INTEGER"})
            self.take()
            base = Pow(base, sign * int(t.text))
            nxt = self.peek()
            if nxt.kind == "OP" and nxt.text == "^":
                self.error("chained exponents need parentheses", nxt, {"'+'", "'-'", "'*'", "'/'", "')'", "END"})
        return base

    def parse_atom(self) -> Expr:
        t = self.peek()
        atom_start = {"NUMBER", "IDENT", "'('", "'-'"}
        if t.kind == "NUM":
            self.take()
            return Const(float(t.text))
        if t.kind == "ID":
            self.take()
            if t.text in VARIABLES:
                return Var(t.text)
            if t.text in NAMED_CONSTANTS:
                return Named(t.text)
            if t.text in FUNCTIONS:
                self.expect("(")
                arg = self.parse_expr()
                self.expect(")")
                return Func(t.text, arg)
            raise UnknownIdentifierError(f"unknown identifier {t.text!r}", self.byte_offset(t.pos))
        if t.kind == "OP" and t.text == "(":
            self.take()
            e = self.parse_expr()
            self.expect(")")
            return e
        self.error(f"unexpected {_describe(t)}", t, atom_start)


def _describe(t: _Tok) -> str:
    return "end of input" if t.kind == "END" else repr(t.text)


def _tokenize(src: str, p: _Parser) -> list[_Tok]:
    toks = []
    i, n = 0, len(src)
    while i < n:
        ch = src[i]
        if ch in " \t\r\n":
            i += 1
        elif ch.isascii() and (ch.isdigit() or (ch == "." and i + 1 < n and src[i + 1].isdigit())):
            j = i
            while j < n and src[j].isascii() and src[j].isdigit():
                j += 1
            if j < n and src[j] == ".":
                j += 1
                while j < n and src[j].isascii() and src[j].isdigit():
                    j += 1
            if j < n and src[j] in "eE":
                k = j + 1
                if k < n and src[k] in "+-":
                    k += 1
                if k < n and src[k].isascii() and src[k].isdigit():
                    while k < n and src[k].isascii() and src[k].isdigit():
                        k += 1
                    j = k
            toks.append(_Tok("NUM", src[i:j], i))
            i = j
        elif ch.isascii() and (ch.isalpha() or ch == "_"):
            j = i
            while j < n and src[j].isascii() and (src[j].isalnum() or src[j] == "_"):
                j += 1
            toks.append(_Tok("ID", src[i:j], i))
            i = j
        elif ch in "+-*/^()":
            toks.append(_Tok("OP", ch, i))
            i += 1
        else:
            raise ExprSyntaxError(f"unexpected character {ch!r}", p.byte_offset(i),
                                  {"NUMBER", "IDENT", "OPERATOR", "'('", "')'"})
    toks.append(_Tok("END", "", n))
    return toks


def parse(src: str) -> Expr:
    p = _Parser(src)
    p.toks = _tokenize(src, p)
    e = p.parse_expr()
    t = p.peek()
    if t.kind != "END":
        p.error(f"unexpected {_describe(t)}", t, {"'+'", "'-'", "'*'", "'/'", "'^'", "END"})
    return e


def pretty(e: Expr) -> str:
    return e.pretty()
