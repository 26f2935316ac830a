"""Complexified data functions f(z, x) and their z-derivatives."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import expr as ex
from .expr import BinOp, Const, Expr, Func, Pow, Var


def cauchy_derivative(f, z: complex, x, rho: float = 1e-2, m: int = 32) -> complex:
    """Holomorphic derivative of ``f(., x)`` at ``z`` from a circle of radius ``rho``.

    Uses the trapezoidal rule on ``f'(z) = (1/m) sum_k f(z + rho w_k) / (rho w_k)``,
    ``w_k = exp(2 pi i k / m)``, which converges geometrically for entire f.
    ``f`` is either an :class:`Expr` or a callable ``f(z_array, x_batch)``.
    """
    if m < 8:
        raise ValueError("m must be at least 8")
    w = np.exp(2j * np.pi * np.arange(m) / m)
    zs = z + rho * w
    xb = np.broadcast_to(np.asarray(x, dtype=float), (m, np.size(x)))
    vals = ex.evaluate(f, zs, xb) if not callable(f) else np.asarray(f(zs, xb))
    return complex(np.mean(vals / w) / rho)


@dataclass(frozen=True)
class DataFunction:
    """f(z, x) together with its derivative in z.

    Build from expression strings with :meth:`parse`, from trees with
    :meth:`from_expr`, or from vectorised callables with
    :meth:`from_callables` (the derivative is then mandatory).
    """

    dim: int
    f: Optional[Expr]
    df_dz: Optional[Expr]
    reflection_symmetric: bool
    f_call: Optional[Callable] = field(default=None, compare=False, repr=False)
    df_call: Optional[Callable] = field(default=None, compare=False, repr=False)

    @classmethod
    def parse(cls, text: str, dim: int, df_dz: Optional[str] = None) -> "DataFunction":
        f = ex.parse_expr(text, dim)
        d = ex.parse_expr(df_dz, dim) if df_dz is not None else None
        return cls.from_expr(f, dim, d)

    @classmethod
    def from_expr(cls, f: Expr, dim: int, df_dz: Optional[Expr] = None) -> "DataFunction":
        ex.warn_if_not_entire(f)
        if df_dz is None:
            df_dz = ex.differentiate_z(f)
        else:
            _check_derivative(lambda z, x: ex.evaluate(f, z, x),
                              lambda z, x: ex.evaluate(df_dz, z, x), dim)
        sym = _reflection_probe(lambda z, x: ex.evaluate(f, z, x), dim,
                                np.full(dim, -1.0), np.full(dim, 1.0))
        return cls(dim, f, df_dz, sym)

    @classmethod
    def from_callables(cls, f: Callable, df_dz: Callable, dim: int) -> "DataFunction":
        """Wrap vectorised ``f(z, x)`` / ``df_dz(z, x)``; z has shape (n,), x (n, d)."""
        _check_derivative(f, df_dz, dim)
        sym = _reflection_probe(f, dim, np.full(dim, -1.0), np.full(dim, 1.0))
        return cls(dim, None, None, sym, f, df_dz)

    @property
    def has_expr(self) -> bool:
        return self.f is not None

    @property
    def depends_on_z(self) -> bool:
        if self.f is None:
            return True
        return ex.depends_on(self.f, "z")

    def __call__(self, z, x):
        if self.f is not None:
            return ex.evaluate(self.f, z, x)
        return _call_batched(self.f_call, z, x)

    def dz(self, z, x):
        if self.df_dz is not None:
            return ex.evaluate(self.df_dz, z, x)
        return _call_batched(self.df_call, z, x)

    def __str__(self):
        return ex.to_string(self.f) if self.f is not None else repr(self.f_call)


def _call_batched(fn, z, x):
    zz = np.asarray(z, dtype=complex)
    xx = np.asarray(x, dtype=float)
    if zz.ndim == 0 and xx.ndim <= 1:
        return complex(np.asarray(fn(zz.reshape(1), xx.reshape(1, -1)))[0])
    n = zz.shape[0] if zz.ndim else xx.shape[0]
    zz = np.broadcast_to(zz, (n,))
    xx = np.broadcast_to(xx.reshape(-1, xx.shape[-1]), (n, xx.shape[-1]))
    return np.asarray(fn(zz, xx), dtype=complex)


def _probe_points(dim, lo, hi, n, seed):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-1, 1, n) + 1j * rng.uniform(-1, 1, n)
    x = rng.uniform(lo, hi, size=(n, dim))
    return z, x


def _check_derivative(f, df, dim, rtol=1e-8):
    z, x = _probe_points(dim, -1.0, 1.0, 20, 20240)
    for zk, xk in zip(z, x):
        ref = cauchy_derivative(f, zk, xk)
        got = complex(np.asarray(df(np.array([zk]), xk[None, :])).ravel()[0])
        if abs(got - ref) > rtol * max(abs(ref), abs(got), 1.0):
            raise ValueError(f"supplied df/dz disagrees with the Cauchy derivative at "
                             f"z={zk:.3g}, x={xk}: {got} vs {ref}")


def _reflection_probe(f, dim, lo, hi, n=100) -> bool:
    z, x = _probe_points(dim, lo, hi, n, 7)
    a = np.asarray(f(np.conj(z), x), dtype=complex)
    b = np.asarray(f(z, x), dtype=complex)
    return bool(np.all(np.abs(a - np.conj(b)) < 1e-12 * (1 + np.abs(b))))


def check_reflection_symmetry(f: DataFunction, dom) -> bool:
    """True iff f(conj z, x) == conj f(z, x) on 100 probes over the domain's box."""
    lo, hi = dom.bounding_box()
    return _reflection_probe(f, f.dim, lo, hi)


def augment_velocity(f: DataFunction, phi, dom=None) -> DataFunction:
    """Return f1(z, x) = f(z, x) + z * phi(x).

    The added term is zero at z = 0, so the initial position is unchanged
    while the initial velocity gains ``phi``.  ``phi`` should vanish on the
    boundary; this is checked on 100 boundary points when ``dom`` is given.
    """
    if f.f is None:
        raise TypeError("augment_velocity needs an expression-backed DataFunction")
    if isinstance(phi, str):
        phi = ex.parse_expr(phi, f.dim)
    if ex.depends_on(phi, "z"):
        raise ValueError("phi must not depend on z")
    if dom is not None:
        pts = dom.boundary_points(100, seed=11)
        vals = ex.evaluate(phi, np.zeros(len(pts)), pts)
        worst = float(np.max(np.abs(vals)))
        if worst > 1e-10:
            warnings.warn(f"phi does not vanish on the boundary (max |phi| = {worst:.3g})",
                          stacklevel=2)
    f1 = ex.simplify(BinOp("+", f.f, BinOp("*", Var("z"), phi)))
    d1 = ex.simplify(BinOp("+", f.df_dz, phi))
    return DataFunction(f.dim, f1, d1,
                        _reflection_probe(lambda z, x: ex.evaluate(f1, z, x), f.dim,
                                          np.full(f.dim, -1.0), np.full(f.dim, 1.0)))


# --------------------------------------------------------------------------
# Separable decomposition: f = sum_j g_j(x) * h_j(z), h_j in {z^n, exp(a z)}
# --------------------------------------------------------------------------

class NotSeparable(ValueError):
    pass


@dataclass(frozen=True)
class Term:
    """``coef(x) * z**power`` if kind == "poly", ``coef(x) * exp(rate * z)`` if "exp"."""

    coef: Expr
    kind: str
    power: int = 0
    rate: complex = 0j


def _mul_terms(a: Term, b: Term) -> Term:
    coef = BinOp("*", a.coef, b.coef)
    a_poly = a.kind == "poly"
    b_poly = b.kind == "poly"
    if a_poly and b_poly:
        return Term(coef, "poly", power=a.power + b.power)
    if not a_poly and not b_poly:
        return Term(coef, "exp", rate=a.rate + b.rate)
    p, e = (a, b) if a_poly else (b, a)
    if p.power != 0:
        raise NotSeparable("product of a power of z with an exponential in z")
    return Term(coef, "exp", rate=e.rate)


def _scale(terms, c: Expr):
    return [Term(BinOp("*", c, t.coef), t.kind, t.power, t.rate) for t in terms]


def _affine_in_z(e: Expr):
    """Split ``e`` as ``a * z + c(x)`` with constant ``a``; raise otherwise."""
    slope = 0j
    rest = []
    for t in _separate(e):
        if t.kind == "poly" and t.power == 0:
            rest.append(t.coef)
        elif t.kind == "poly" and t.power == 1 and not ex.variables(t.coef):
            slope += complex(ex.evaluate(t.coef, 0j, np.zeros(1)))
        else:
            raise NotSeparable(f"argument {ex.to_string(e)} is not affine in z "
                               "with a constant slope")
    c = Const(0j)
    for r in rest:
        c = BinOp("+", c, r)
    return slope, ex.simplify(c)


def _separate(e: Expr) -> list[Term]:
    if not ex.depends_on(e, "z"):
        return [Term(e, "poly", power=0)]
    if isinstance(e, Var):
        return [Term(Const(1 + 0j), "poly", power=1)]
    if isinstance(e, BinOp):
        if e.op in "+-":
            left = _separate(e.left)
            right = _separate(e.right)
            if e.op == "-":
                right = _scale(right, Const(-1 + 0j))
            return left + right
        if e.op == "*":
            return [_mul_terms(a, b) for a in _separate(e.left) for b in _separate(e.right)]
        if ex.depends_on(e.right, "z"):
            raise NotSeparable("division by a z-dependent expression")
        inv = BinOp("/", Const(1 + 0j), e.right)
        return _scale(_separate(e.left), inv)
    if isinstance(e, Pow):
        if e.exponent < 0:
            raise NotSeparable("negative power of a z-dependent expression")
        terms = [Term(Const(1 + 0j), "poly", power=0)]
        base = _separate(e.base)
        for _ in range(e.exponent):
            terms = [_mul_terms(a, b) for a in terms for b in base]
        return terms
    if e.name == "neg":
        return _scale(_separate(e.arg), Const(-1 + 0j))
    a, c = _affine_in_z(e.arg)
    if e.name == "exp":
        return [Term(Func("exp", c), "exp", rate=a)]
    # sin, cos, sinh, cosh through exponentials of +-(a z + c)
    ep, em = Func("exp", c), Func("exp", Func("neg", c))
    if e.name in ("sin", "cos"):
        ep = Func("exp", BinOp("*", Const(1j), c))
        em = Func("exp", BinOp("*", Const(-1j), c))
        ra, rb = 1j * a, -1j * a
        wa, wb = ((1 / 2j), (-1 / 2j)) if e.name == "sin" else (0.5, 0.5)
    else:
        ra, rb = a, -a
        wa, wb = (0.5, -0.5) if e.name == "sinh" else (0.5, 0.5)
    return [Term(BinOp("*", Const(complex(wa)), ep), "exp", rate=ra),
            Term(BinOp("*", Const(complex(wb)), em), "exp", rate=rb)]


def separate_z(f: DataFunction) -> list[Term]:
    """Write f as a sum of x-only coefficients times z**n or exp(a z).

    Terms with the same z-factor are merged.  Raises :class:`NotSeparable`
    when the tree does not fit the pattern.
    """
    if f.f is None:
        raise NotSeparable("callable data functions cannot be decomposed")
    merged: dict[tuple, Expr] = {}
    for t in _separate(f.f):
        key = (t.kind, t.power if t.kind == "poly" else t.rate)
        merged[key] = BinOp("+", merged[key], t.coef) if key in merged else t.coef
    out = []
    for (kind, p), coef in merged.items():
        if kind == "exp" and p == 0:
            kind, p = "poly", 0
        out.append(Term(ex.simplify(coef), kind,
                        power=p if kind == "poly" else 0,
                        rate=p if kind == "exp" else 0j))
    return out
