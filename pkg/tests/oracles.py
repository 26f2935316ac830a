"""Independent reference values for the test suite.

Nothing here imports the package under test.  Expressions are generated
as small nested tuples which are rendered to text for the package parser
and walked directly with ``cmath`` for the reference value, so the two
evaluators share no code.
"""
from __future__ import annotations

import cmath
import math
import random

import numpy as np

FUNCS = {"exp": cmath.exp, "sin": cmath.sin, "cos": cmath.cos,
         "sinh": cmath.sinh, "cosh": cmath.cosh}


# --------------------------------------------------------------------------
# random expressions
# --------------------------------------------------------------------------

def random_tree(rng: random.Random, dim: int, depth: int = 3, z_free_ok: bool = True,
                allow_div: bool = True):
    """Nested-tuple expression. Divisions only ever divide by x-only positive terms."""
    if depth == 0 or rng.random() < 0.25:
        roll = rng.random()
        if roll < 0.4:
            return ("z",)
        if roll < 0.75:
            return ("x", rng.randint(1, dim))
        return ("c", round(rng.uniform(-2, 2), 3))
    kind = rng.choice(["+", "-", "*", "*", "pow", "fn", "/"] if allow_div
                      else ["+", "-", "*", "*", "pow", "fn"])
    if kind == "pow":
        return ("pow", random_tree(rng, dim, depth - 1, allow_div=allow_div), rng.randint(0, 4))
    if kind == "fn":
        return ("fn", rng.choice(sorted(FUNCS)), random_tree(rng, dim, depth - 1, allow_div=allow_div))
    if kind == "/":
        # 1 + x_k^2 never vanishes and contains no z, so f stays entire in z
        den = ("+", ("c", 1.0), ("pow", ("x", rng.randint(1, dim)), 2))
        return ("/", random_tree(rng, dim, depth - 1, allow_div=allow_div), den)
    return (kind, random_tree(rng, dim, depth - 1, allow_div=allow_div),
            random_tree(rng, dim, depth - 1, allow_div=allow_div))


def has_z(tree) -> bool:
    if tree[0] == "z":
        return True
    return any(isinstance(a, tuple) and has_z(a) for a in tree[1:])


def random_z_tree(rng: random.Random, dim: int, depth: int = 3):
    while True:
        t = random_tree(rng, dim, depth)
        if has_z(t):
            return t


def render(tree) -> str:
    tag = tree[0]
    if tag == "z":
        return "z"
    if tag == "x":
        return f"x{tree[1]}"
    if tag == "c":
        return f"({tree[1]!r})"
    if tag == "pow":
        return f"({render(tree[1])})^{tree[2]}"
    if tag == "fn":
        return f"{tree[1]}({render(tree[2])})"
    return f"({render(tree[1])} {tag} {render(tree[2])})"


def walk(tree, z: complex, x) -> complex:
    tag = tree[0]
    if tag == "z":
        return complex(z)
    if tag == "x":
        return complex(x[tree[1] - 1])
    if tag == "c":
        return complex(tree[1])
    if tag == "pow":
        b = walk(tree[1], z, x)
        out = 1 + 0j
        for _ in range(tree[2]):
            out *= b
        return out
    if tag == "fn":
        return FUNCS[tree[1]](walk(tree[2], z, x))
    a, b = walk(tree[1], z, x), walk(tree[2], z, x)
    return {"+": a + b, "-": a - b, "*": a * b}[tag] if tag != "/" else a / b


def walk_dz(tree, z: complex, x) -> complex:
    """Forward-mode derivative in z, hand-coded chain rule."""
    tag = tree[0]
    if tag == "z":
        return 1 + 0j
    if tag in ("x", "c"):
        return 0j
    if tag == "pow":
        n = tree[2]
        if n == 0:
            return 0j
        b = walk(tree[1], z, x)
        return n * b ** (n - 1) * walk_dz(tree[1], z, x)
    if tag == "fn":
        u, du = walk(tree[2], z, x), walk_dz(tree[2], z, x)
        outer = {"exp": cmath.exp(u), "sin": cmath.cos(u), "cos": -cmath.sin(u),
                 "sinh": cmath.cosh(u), "cosh": cmath.sinh(u)}[tree[1]]
        return outer * du
    a, b = walk(tree[1], z, x), walk(tree[2], z, x)
    da, db = walk_dz(tree[1], z, x), walk_dz(tree[2], z, x)
    if tag == "+":
        return da + db
    if tag == "-":
        return da - db
    if tag == "*":
        return da * b + a * db
    return (da * b - a * db) / (b * b)


def magnitude_scale(tree, z: complex, x) -> float:
    """Sum of |intermediate| sizes; bounds the rounding error of a walk."""
    tag = tree[0]
    if tag in ("z", "x", "c"):
        return abs(walk(tree, z, x))
    if tag == "pow":
        return abs(walk(tree, z, x)) + magnitude_scale(tree[1], z, x)
    if tag == "fn":
        return abs(walk(tree, z, x)) * (1 + magnitude_scale(tree[2], z, x))
    return abs(walk(tree, z, x)) + magnitude_scale(tree[1], z, x) + magnitude_scale(tree[2], z, x)


# --------------------------------------------------------------------------
# closed forms
# --------------------------------------------------------------------------

def u_exp(t: float, x: float) -> float:
    """u for f = exp(x + z) with Brownian motion on (0, 1)."""
    return math.exp(x + t)


def mean_exit_interval(x: float, a: float = 0.0, b: float = 1.0) -> float:
    """E[tau] for standard BM on (a, b): solves g''/2 = -1 with zero ends."""
    return (x - a) * (b - x)


def mean_exit_ball(x, radius: float = 1.0) -> float:
    x = np.asarray(x, dtype=float)
    return (radius ** 2 - float(x @ x)) / x.size


def right_exit_probability(x: float, a: float = 0.0, b: float = 1.0) -> float:
    return (x - a) / (b - a)


def u_z2(t: float, x: float) -> float:
    """u for f = z^2: t^2 - E[tau]."""
    return t * t - mean_exit_interval(x)


def harmonic_1d(fa: float, fb: float, x: float, a: float = 0.0, b: float = 1.0) -> float:
    return (fa * (b - x) + fb * (x - a)) / (b - a)


def double_factorial(n: int) -> int:
    return 1 if n <= 0 else n * double_factorial(n - 2)


def gaussian_moment(k: int) -> int:
    return 0 if k % 2 else double_factorial(k - 1)


def poly_kernel_binomial(n: int, t: float, tau: float) -> complex:
    """E[(t + i sqrt(tau) Z)^n] from the binomial theorem and Gaussian moments."""
    s = 1j * math.sqrt(tau)
    return sum(math.comb(n, k) * t ** (n - k) * s ** k * gaussian_moment(k) for k in range(n + 1))


def kernel_quadrature(fn, t: float, tau: float, order: int = 80) -> complex:
    """E[fn(t + i sqrt(tau) Z)] by Gauss-Hermite (probabilists') quadrature."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    vals = np.array([fn(t + 1j * math.sqrt(tau) * n) for n in nodes])
    return complex(np.sum(weights * vals) / math.sqrt(2 * math.pi))


def sin_cos_wave(t: float, x: float) -> float:
    """u_tt = u_xx on (0,1), u(0)=sin(pi x), u_t(0)=0, zero ends."""
    return math.sin(math.pi * x) * math.cos(math.pi * t)


def ks_distance(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.sort(a), np.sort(b)
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))
