"""A small expression language for complex data functions f(z, x).

Expressions are built from complex constants (``i``, ``pi``, ``e`` and
decimal literals), the variables ``z`` and ``x1 .. xd``, the operators
``+ - * /``, integer powers ``^`` and the entire functions ``exp``,
``sin``, ``cos``, ``sinh`` and ``cosh``.  Branch-cut functions are left
out on purpose: the first argument of f must stay entire.
"""
from __future__ import annotations

import cmath
import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

FUNCTIONS = ("exp", "sin", "cos", "sinh", "cosh")
NAMED_CONSTANTS = {"i": 1j, "pi": math.pi, "e": math.e}


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class EvaluationError(ExprError, ArithmeticError):
    pass


class EntirenessWarning(UserWarning):
    """A division by a z-dependent quantity may break entireness in z."""


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: complex
    pos: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class Var:
    name: str
    pos: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    pos: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int
    pos: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class Func:
    name: str  # one of FUNCTIONS or "neg"
    arg: "Expr"
    pos: int = field(default=0, compare=False, repr=False)


Expr = Union[Const, Var, BinOp, Pow, Func]


def const(v) -> Const:
    return Const(complex(v))


def depends_on(e: Expr, name: str) -> bool:
    if isinstance(e, Var):
        return e.name == name
    if isinstance(e, Const):
        return False
    if isinstance(e, BinOp):
        return depends_on(e.left, name) or depends_on(e.right, name)
    if isinstance(e, Pow):
        return depends_on(e.base, name)
    return depends_on(e.arg, name)


def variables(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Const):
        return set()
    if isinstance(e, BinOp):
        return variables(e.left) | variables(e.right)
    if isinstance(e, Pow):
        return variables(e.base)
    return variables(e.arg)


def has_complex_constant(e: Expr) -> bool:
    if isinstance(e, Const):
        return e.value.imag != 0.0
    if isinstance(e, Var):
        return False
    if isinstance(e, BinOp):
        return has_complex_constant(e.left) or has_complex_constant(e.right)
    if isinstance(e, Pow):
        return has_complex_constant(e.base)
    return has_complex_constant(e.arg)


def z_divisions(e: Expr) -> list[Expr]:
    """Subexpressions that divide by (or raise to a negative power) something in z."""
    found = []
    if isinstance(e, BinOp):
        if e.op == "/" and depends_on(e.right, "z"):
            found.append(e)
        found += z_divisions(e.left) + z_divisions(e.right)
    elif isinstance(e, Pow):
        if e.exponent < 0 and depends_on(e.base, "z"):
            found.append(e)
        found += z_divisions(e.base)
    elif isinstance(e, Func):
        found += z_divisions(e.arg)
    return found


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
""", re.VERBOSE)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos + 1)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos + 1))
        pos = m.end()
    tokens.append(("end", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text: str, dim: int):
        self.tokens = _tokenize(text)
        self.k = 0
        self.allowed = {"z"} | {f"x{j}" for j in range(1, dim + 1)}

    @property
    def tok(self):
        return self.tokens[self.k]

    def take(self):
        t = self.tokens[self.k]
        self.k += 1
        return t

    def expect(self, value):
        kind, text, pos = self.tok
        if text != value or kind == "end":
            what = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {what}", pos)
        self.k += 1

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, pos = self.tok
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {text!r}", pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.tok[1] in ("+", "-") and self.tok[0] == "op":
            _, op, pos = self.take()
            e = BinOp(op, e, self.term(), pos)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.tok[1] in ("*", "/") and self.tok[0] == "op":
            _, op, pos = self.take()
            e = BinOp(op, e, self.unary(), pos)
        return e

    def unary(self) -> Expr:
        kind, text, pos = self.tok
        if kind == "op" and text == "-":
            self.take()
            return Func("neg", self.unary(), pos)
        if kind == "op" and text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.tok[1] == "^" and self.tok[0] == "op":
            _, _, pos = self.take()
            sign = 1
            kind, text, epos = self.tok
            if kind == "op" and text in "+-":
                sign = -1 if text == "-" else 1
                self.take()
                kind, text, epos = self.tok
            if kind != "num" or not re.fullmatch(r"\d+", text):
                if kind == "end":
                    raise ExprSyntaxError("expected integer exponent, found end of input", epos)
                raise ExprSyntaxError("power with non-integer exponent", epos)
            self.take()
            return Pow(base, sign * int(text), pos)
        return base

    def atom(self) -> Expr:
        kind, text, pos = self.take()
        if kind == "num":
            return Const(complex(float(text)), pos)
        if kind == "name":
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Func(text, arg, pos)
            if self.tok[1] == "(" and self.tok[0] == "op":
                raise ExprSyntaxError(f"unknown function {text!r}", pos)
            if text in NAMED_CONSTANTS:
                return Const(complex(NAMED_CONSTANTS[text]), pos)
            if text in self.allowed:
                return Var(text, pos)
            raise ExprSyntaxError(f"unknown identifier {text!r}", pos)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect(")")
            return e
        what = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {what}", pos)


def parse_expr(text: str, dim: int) -> Expr:
    """Parse ``text`` over the variables ``z, x1 .. x{dim}``.

    Positions in error messages are 1-based character offsets; an error at
    the end of input reports ``len(text) + 1``.
    """
    return _Parser(text, dim).parse()


# --------------------------------------------------------------------------
# Printing
# --------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _fmt_real(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _fmt_const(c: complex) -> str:
    if c.imag == 0:
        return _fmt_real(c.real)
    if c.real == 0:
        return "i" if c.imag == 1 else f"{_fmt_real(c.imag)}*i"
    return f"({_fmt_real(c.real)} + {_fmt_real(c.imag)}*i)"


def to_string(e: Expr) -> str:
    """Print an expression so that ``parse_expr`` gives back an equal tree."""
    return _show(e, 0)


def _show(e: Expr, ctx: int) -> str:
    # ctx: binding strength required by the parent (0 loosest .. 4 atom)
    if isinstance(e, Const):
        s = _fmt_const(e.value)
        return f"({s})" if s.startswith("-") and ctx > 0 else s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        s = f"{_show(e.left, p)} {e.op} {_show(e.right, p + 1)}"
        return f"({s})" if p < ctx else s
    if isinstance(e, Pow):
        s = f"{_show(e.base, 4)}^{e.exponent}"
        return f"({s})" if ctx >= 4 else s
    if e.name == "neg":
        s = f"-{_show(e.arg, 3)}"
        return f"({s})" if ctx > 2 else s
    return f"{e.name}({_show(e.arg, 0)})"


# --------------------------------------------------------------------------
# Simplification and differentiation
# --------------------------------------------------------------------------

def _is(e: Expr, v: complex) -> bool:
    return isinstance(e, Const) and e.value == v


_CFUNCS = {"exp": cmath.exp, "sin": cmath.sin, "cos": cmath.cos,
           "sinh": cmath.sinh, "cosh": cmath.cosh, "neg": lambda a: -a}


def simplify(e: Expr) -> Expr:
    """Constant folding plus the neutral-element rules for 0 and 1."""
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Func):
        a = simplify(e.arg)
        if isinstance(a, Const):
            return Const(_CFUNCS[e.name](a.value))
        if e.name == "neg" and isinstance(a, Func) and a.name == "neg":
            return a.arg
        return Func(e.name, a, e.pos)
    if isinstance(e, Pow):
        b = simplify(e.base)
        if e.exponent == 0:
            return Const(1 + 0j)
        if e.exponent == 1:
            return b
        if isinstance(b, Const) and not (b.value == 0 and e.exponent < 0):
            return Const(b.value ** e.exponent)
        return Pow(b, e.exponent, e.pos)
    a, b = simplify(e.left), simplify(e.right)
    op = e.op
    if isinstance(a, Const) and isinstance(b, Const) and not (op == "/" and b.value == 0):
        return Const({"+": a.value + b.value, "-": a.value - b.value,
                      "*": a.value * b.value, "/": a.value / b.value if op == "/" else 0}[op])
    if op == "+":
        if _is(a, 0):
            return b
        if _is(b, 0):
            return a
    elif op == "-":
        if _is(b, 0):
            return a
        if _is(a, 0):
            return simplify(Func("neg", b))
    elif op == "*":
        if _is(a, 0) or _is(b, 0):
            return Const(0j)
        if _is(a, 1):
            return b
        if _is(b, 1):
            return a
    elif op == "/":
        if _is(b, 1):
            return a
        if _is(a, 0) and not _is(b, 0):
            return Const(0j)
    return BinOp(op, a, b, e.pos)


def _d(e: Expr, var: str) -> Expr:
    if isinstance(e, Const):
        return Const(0j)
    if isinstance(e, Var):
        return Const(1 + 0j if e.name == var else 0j)
    if isinstance(e, BinOp):
        da, db = _d(e.left, var), _d(e.right, var)
        if e.op in "+-":
            return BinOp(e.op, da, db)
        if e.op == "*":
            return BinOp("+", BinOp("*", da, e.right), BinOp("*", e.left, db))
        # quotient rule
        return BinOp("/", BinOp("-", BinOp("*", da, e.right), BinOp("*", e.left, db)),
                     Pow(e.right, 2))
    if isinstance(e, Pow):
        n = e.exponent
        return BinOp("*", BinOp("*", Const(complex(n)), Pow(e.base, n - 1)), _d(e.base, var))
    inner = _d(e.arg, var)
    outer = {
        "neg": lambda a: Const(-1 + 0j),
        "exp": lambda a: Func("exp", a),
        "sin": lambda a: Func("cos", a),
        "cos": lambda a: Func("neg", Func("sin", a)),
        "sinh": lambda a: Func("cosh", a),
        "cosh": lambda a: Func("sinh", a),
    }[e.name](e.arg)
    return BinOp("*", outer, inner)


def differentiate(e: Expr, var: str) -> Expr:
    return simplify(_d(e, var))


def differentiate_z(e: Expr) -> Expr:
    """Symbolic derivative in z; the x variables are held constant."""
    return differentiate(e, "z")


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

_NPFUNCS = {"exp": np.exp, "sin": np.sin, "cos": np.cos, "sinh": np.sinh,
            "cosh": np.cosh, "neg": np.negative}


def evaluate(e: Expr, z, x):
    """Evaluate ``e`` at complex ``z`` and real point(s) ``x``.

    ``z`` may be a scalar or an array of shape ``(n,)``; ``x`` a point of
    shape ``(d,)`` or a batch ``(n, d)``.  Returns a complex scalar or array.
    """
    zz = np.asarray(z, dtype=complex)
    xx = np.asarray(x, dtype=float)
    scalar = zz.ndim == 0 and xx.ndim <= 1
    if xx.ndim == 0:
        xx = xx.reshape(1)
    cols = xx.T if xx.ndim == 2 else xx
    with np.errstate(all="ignore"):
        out = _ev(e, zz, cols)
    out = np.asarray(out, dtype=complex)
    if scalar:
        return complex(out)
    if out.ndim == 0:
        n = zz.shape[0] if zz.ndim else xx.shape[0]
        out = np.full(n, complex(out))
    return out


def _ev(e: Expr, z, cols):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        if e.name == "z":
            return z
        return cols[int(e.name[1:]) - 1]
    if isinstance(e, BinOp):
        a = _ev(e.left, z, cols)
        b = _ev(e.right, z, cols)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if np.any(np.asarray(b) == 0):
            raise EvaluationError(f"division by zero in '/' at position {e.pos}")
        return np.asarray(a, dtype=complex) / b
    if isinstance(e, Pow):
        b = _ev(e.base, z, cols)
        if e.exponent < 0:
            if np.any(np.asarray(b) == 0):
                raise EvaluationError(f"division by zero in '^' at position {e.pos}")
            b = 1.0 / np.asarray(b, dtype=complex)
        return _ipow(b, abs(e.exponent))
    return _NPFUNCS[e.name](np.asarray(_ev(e.arg, z, cols), dtype=complex))


def _ipow(b, n: int):
    # repeated multiplication keeps complex integer powers exact for small n
    result = 1.0 + 0j
    base = b
    while n:
        if n & 1:
            result = result * base
        n >>= 1
        if n:
            base = base * base
    return result


# --------------------------------------------------------------------------
# Code generation for real-valued coefficient functions
# --------------------------------------------------------------------------

def to_python_real(e: Expr) -> str:
    """Source text of ``e`` as real arithmetic over an array ``x`` (for numba)."""
    if isinstance(e, Const):
        if e.value.imag != 0:
            raise ExprError("complex constant in a real-valued coefficient")
        return repr(float(e.value.real))
    if isinstance(e, Var):
        if e.name == "z":
            raise ExprError("coefficient expressions may not reference z")
        return f"x[{int(e.name[1:]) - 1}]"
    if isinstance(e, BinOp):
        return f"({to_python_real(e.left)} {e.op} {to_python_real(e.right)})"
    if isinstance(e, Pow):
        return f"({to_python_real(e.base)} ** {float(e.exponent)!r})"
    if e.name == "neg":
        return f"(-{to_python_real(e.arg)})"
    return f"math.{e.name}({to_python_real(e.arg)})"


_COMPILED: dict[str, Callable] = {}


def compile_filler(exprs: list[Expr], name: str = "fill"):
    """njit function ``fill(x, out)`` writing ``out.flat[k] = exprs[k](x)``."""
    body = "\n".join(f"    out[{k}] = {to_python_real(e)}" for k, e in enumerate(exprs))
    src = f"def {name}(x, out):\n{body}\n"
    if src not in _COMPILED:
        from numba import njit
        ns = {"math": math}
        exec(src, ns)
        _COMPILED[src] = njit(nogil=True, inline="always")(ns[name])
    return _COMPILED[src]


def compile_level(e: Expr):
    """njit function ``level(x) -> float`` for a real expression."""
    src = f"def level(x):\n    return {to_python_real(e)}\n"
    if src not in _COMPILED:
        from numba import njit
        ns = {"math": math}
        exec(src, ns)
        _COMPILED[src] = njit(nogil=True, inline="always")(ns["level"])
    return _COMPILED[src]


def warn_if_not_entire(e: Expr, label: str = "f") -> bool:
    """Emit an EntirenessWarning when ``e`` divides by a z-dependent term."""
    bad = z_divisions(e)
    if bad:
        warnings.warn(f"{label}: division by a z-dependent subexpression "
                      f"({to_string(bad[0])}); entireness in z is not guaranteed",
                      EntirenessWarning, stacklevel=3)
    return bool(bad)
