"""Bounded open domains: membership, segment/boundary intersection, bridge test."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numba import njit

from . import expr as ex

BOX, BALL, GENERIC = 0, 1, 2


class GeometryError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# jitted primitives (shared with the exit-time kernel)
# --------------------------------------------------------------------------

@njit(nogil=True)
def _always_inside(x):
    return True


@njit(nogil=True, inline="always")
def inside_box(lo, hi, tol, x):
    # single exit point: early returns defeat inlining
    ok = True
    for i in range(x.shape[0]):
        if not (lo[i] + tol < x[i] < hi[i] - tol):
            ok = False
    return ok


@njit(nogil=True, inline="always")
def inside_ball(c, r, tol, x):
    s = 0.0
    for i in range(x.shape[0]):
        s += (x[i] - c[i]) ** 2
    return math.sqrt(s) < r - tol


@njit(nogil=True)
def crossing_box(lo, hi, x, y, out):
    """Exit fraction of segment x -> y through the box faces; hit point in ``out``."""
    lam = 1.0
    axis = -1
    face = 0.0
    for i in range(x.shape[0]):
        dy = y[i] - x[i]
        if dy < 0.0:
            cand = (x[i] - lo[i]) / -dy
            if cand < lam:
                lam, axis, face = cand, i, lo[i]
        elif dy > 0.0:
            cand = (hi[i] - x[i]) / dy
            if cand < lam:
                lam, axis, face = cand, i, hi[i]
    for i in range(x.shape[0]):
        out[i] = x[i] + lam * (y[i] - x[i])
    if axis >= 0:
        out[axis] = face
    return lam


@njit(nogil=True)
def crossing_ball(c, r, x, y, out):
    a = 0.0
    b = 0.0
    cc = 0.0
    for i in range(x.shape[0]):
        v = y[i] - x[i]
        d = x[i] - c[i]
        a += v * v
        b += 2.0 * d * v
        cc += d * d
    cc -= r * r
    disc = b * b - 4.0 * a * cc
    if disc < 0.0:
        disc = 0.0
    den = b + math.sqrt(disc)
    lam = -2.0 * cc / den if den > 0.0 else 1.0
    if lam > 1.0:
        lam = 1.0
    if lam < 0.0:
        lam = 0.0
    s = 0.0
    for i in range(x.shape[0]):
        out[i] = x[i] + lam * (y[i] - x[i])
        s += (out[i] - c[i]) ** 2
    s = math.sqrt(s)
    if s > 0.0:
        for i in range(x.shape[0]):
            out[i] = c[i] + r * (out[i] - c[i]) / s
    return lam


@njit(nogil=True)
def crossing_generic(inside, tol, x, y, out):
    """Bisection on the indicator; returns -1.0 if it fails to converge."""
    length = 0.0
    for i in range(x.shape[0]):
        length += (y[i] - x[i]) ** 2
    length = math.sqrt(length)
    a, b = 0.0, 1.0
    it = 0
    while (b - a) * length > tol:
        it += 1
        if it > 100:
            return -1.0
        m = 0.5 * (a + b)
        for i in range(x.shape[0]):
            out[i] = x[i] + m * (y[i] - x[i])
        if inside(out):
            a = m
        else:
            b = m
    for i in range(x.shape[0]):
        out[i] = x[i] + b * (y[i] - x[i])
    return b


@njit(nogil=True, inline="always")
def bridge_box(lo, hi, x, y, sig, h):
    """Probability that a Brownian bridge x -> y left the box.

    ``sig`` is the flattened d x d diffusion matrix at x.  Each face is
    treated as an independent half-space.
    """
    d = x.shape[0]
    survive = 1.0
    for i in range(d):
        s2 = 0.0
        for j in range(d):
            s2 += sig[i * d + j] * sig[i * d + j]
        if s2 > 0.0:
            scale = 2.0 / (s2 * h)
            e = scale * (x[i] - lo[i]) * (y[i] - lo[i])
            if e < 40.0:
                survive *= 1.0 - math.exp(-e)
            e = scale * (hi[i] - x[i]) * (hi[i] - y[i])
            if e < 40.0:
                survive *= 1.0 - math.exp(-e)
    return 1.0 - survive


@njit(nogil=True)
def bridge_box_exit(lo, hi, x, y, sig, h, out):
    """Step midpoint moved onto the face with the largest crossing probability."""
    d = x.shape[0]
    best = -np.inf
    axis = 0
    face = lo[0]
    for i in range(d):
        s2 = 0.0
        for j in range(d):
            s2 += sig[i * d + j] * sig[i * d + j]
        if s2 > 0.0:
            scale = 2.0 / (s2 * h)
            e = scale * (x[i] - lo[i]) * (y[i] - lo[i])
            if -e > best:
                best = -e
                axis = i
                face = lo[i]
            e = scale * (hi[i] - x[i]) * (hi[i] - y[i])
            if -e > best:
                best = -e
                axis = i
                face = hi[i]
    for i in range(d):
        out[i] = 0.5 * (x[i] + y[i])
    out[axis] = face


@njit(nogil=True, inline="always")
def bridge_ball(c, r, x, y, sig, h):
    """Bridge crossing probability for the sphere, flattened to its tangent plane at x."""
    d = x.shape[0]
    rx = 0.0
    ry = 0.0
    for i in range(d):
        rx += (x[i] - c[i]) ** 2
        ry += (y[i] - c[i]) ** 2
    rx = math.sqrt(rx)
    ry = math.sqrt(ry)
    s2 = 0.0
    for j in range(d):
        acc = 0.0
        for i in range(d):
            acc += (x[i] - c[i]) * sig[i * d + j]
        s2 += acc * acc
    p = 0.0
    if rx > 0.0 and s2 > 0.0:
        e = 2.0 * (r - rx) * (r - ry) * rx * rx / (s2 * h)
        if e < 40.0:
            p = math.exp(-e)
    return p


@njit(nogil=True)
def bridge_ball_exit(c, r, x, y, out):
    """Step midpoint projected radially onto the sphere."""
    d = x.shape[0]
    rm = 0.0
    for i in range(d):
        out[i] = 0.5 * (x[i] + y[i])
        rm += (out[i] - c[i]) ** 2
    rm = math.sqrt(rm)
    for i in range(d):
        out[i] = c[i] + r * (out[i] - c[i]) / rm


# --------------------------------------------------------------------------
# Domain description
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainSpec:
    """A bounded open domain.

    Use the constructors :meth:`interval`, :meth:`box`, :meth:`ball` and
    :meth:`generic`.  Membership is strict: points within ``boundary_tol``
    of the boundary count as boundary points.
    """

    kind: int
    lo: tuple
    hi: tuple
    center: tuple
    radius: float = 0.0
    boundary_tol: float = 1e-12
    label: str = ""
    inside_fn: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        lo, hi = np.array(self.lo), np.array(self.hi)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size == 0:
            raise ValueError("bounding box corners must be non-empty vectors of equal length")
        if not np.all(lo < hi):
            raise ValueError("need lo < hi componentwise")
        if self.kind == BALL and not self.radius > 0:
            raise ValueError("ball radius must be positive")
        if self.boundary_tol <= 0:
            raise ValueError("boundary_tol must be positive")
        if not self.contains(np.array(self.center)):
            raise ValueError("the domain's representative point is not inside it")

    # constructors ---------------------------------------------------------

    @classmethod
    def interval(cls, a: float, b: float, boundary_tol: float = 1e-12) -> "DomainSpec":
        return cls(BOX, (float(a),), (float(b),), (0.5 * (a + b),),
                   boundary_tol=boundary_tol, label=f"interval({a}, {b})")

    @classmethod
    def box(cls, lo, hi, boundary_tol: float = 1e-12) -> "DomainSpec":
        lo = tuple(float(v) for v in lo)
        hi = tuple(float(v) for v in hi)
        c = tuple(0.5 * (a + b) for a, b in zip(lo, hi))
        return cls(BOX, lo, hi, c, boundary_tol=boundary_tol, label=f"box({list(lo)}, {list(hi)})")

    @classmethod
    def ball(cls, center, radius: float, boundary_tol: float = 1e-12) -> "DomainSpec":
        c = tuple(float(v) for v in np.atleast_1d(center))
        r = float(radius)
        return cls(BALL, tuple(v - r for v in c), tuple(v + r for v in c), c, r,
                   boundary_tol=boundary_tol, label=f"ball({list(c)}, {r})")

    @classmethod
    def generic(cls, indicator, lo, hi, interior=None, boundary_tol: float = 1e-12) -> "DomainSpec":
        """Domain given by an indicator and a bounding box.

        ``indicator`` is either an expression string over ``x1 .. xd`` (the
        domain is where it is negative) or a numba-compilable predicate
        ``inside(x) -> bool``.  Regularity and connectedness of the
        boundary are the caller's responsibility.
        """
        lo = tuple(float(v) for v in lo)
        hi = tuple(float(v) for v in hi)
        if isinstance(indicator, str):
            e = ex.parse_expr(indicator, len(lo))
            level = ex.compile_level(e)
            fn = _level_inside(level)
            label = f"generic({indicator})"
        else:
            from numba import njit as _nj
            fn = indicator if hasattr(indicator, "py_func") else _nj(nogil=True)(indicator)
            label = f"generic({getattr(indicator, '__name__', 'predicate')})"
        c = tuple(interior) if interior is not None else tuple(0.5 * (a + b) for a, b in zip(lo, hi))
        return cls(GENERIC, lo, hi, tuple(float(v) for v in c),
                   boundary_tol=boundary_tol, label=label, inside_fn=fn)

    # geometry -------------------------------------------------------------

    @property
    def dim(self) -> int:
        return len(self.lo)

    def arrays(self):
        return (np.array(self.lo), np.array(self.hi), np.array(self.center), float(self.radius))

    def bounding_box(self):
        return np.array(self.lo), np.array(self.hi)

    def diameter(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))

    def contains(self, x) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo, hi, c, r = self.arrays()
        if self.kind == BOX:
            return bool(inside_box(lo, hi, self.boundary_tol, x))
        if self.kind == BALL:
            return bool(inside_ball(c, r, self.boundary_tol, x))
        return bool(np.all(x > lo) and np.all(x < hi) and self.inside_fn(x))

    def distance_to_boundary(self, x) -> float:
        """Signed distance (positive inside); NaN for generic domains."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo, hi, c, r = self.arrays()
        if self.kind == BOX:
            return float(min(np.min(x - lo), np.min(hi - x)))
        if self.kind == BALL:
            return float(r - np.linalg.norm(x - c))
        return math.nan

    def on_boundary(self, x) -> bool:
        """True when ``x`` is in the closure but not strictly inside."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.contains(x):
            return False
        if self.kind == GENERIC:
            return True
        return self.distance_to_boundary(x) >= -self.boundary_tol

    def in_closure(self, x) -> bool:
        return self.contains(x) or self.on_boundary(x)

    def boundary_points(self, n: int, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        lo, hi, c, r = self.arrays()
        d = self.dim
        if self.kind == BALL:
            v = rng.standard_normal((n, d))
            return c + r * v / np.linalg.norm(v, axis=1, keepdims=True)
        if self.kind == BOX:
            pts = rng.uniform(lo, hi, size=(n, d))
            axes = rng.integers(0, d, n)
            sides = rng.integers(0, 2, n)
            pts[np.arange(n), axes] = np.where(sides == 0, lo[axes], hi[axes])
            return pts
        out = np.empty((n, d))
        for k in range(n):
            v = rng.standard_normal(d)
            v /= np.linalg.norm(v)
            far = c + v * float(np.linalg.norm(hi - lo))
            _, out[k] = boundary_crossing(self, c, far)
        return out


def _level_inside(level):
    @njit(nogil=True)
    def inside(x):
        return level(x) < 0.0
    return inside


def contains(dom: DomainSpec, x) -> bool:
    return dom.contains(x)


def boundary_crossing(dom: DomainSpec, x_in, x_out):
    """Fraction ``lam`` in (0, 1] and point where the segment x_in -> x_out leaves D."""
    x_in = np.atleast_1d(np.asarray(x_in, dtype=float))
    x_out = np.atleast_1d(np.asarray(x_out, dtype=float))
    out = np.empty_like(x_in)
    lo, hi, c, r = dom.arrays()
    if dom.kind == BOX:
        lam = crossing_box(lo, hi, x_in, x_out, out)
    elif dom.kind == BALL:
        lam = crossing_ball(c, r, x_in, x_out, out)
    else:
        lam = crossing_generic(dom.inside_fn, dom.boundary_tol, x_in, x_out, out)
        if lam < 0:
            raise GeometryError("bisection did not converge in 100 iterations")
    return float(lam), out


def bridge_exit_probability(d_in, d_next, sigma_eff, h):
    """Chance that a Brownian bridge between two interior points touched a flat boundary.

    ``exp(-2 d_in d_next / (sigma_eff**2 h))`` for distances ``d_in``,
    ``d_next`` to the boundary along its normal.
    """
    if np.any(np.asarray(sigma_eff) <= 0):
        raise ValueError("sigma_eff must be positive")
    return np.exp(-2.0 * np.asarray(d_in) * np.asarray(d_next) / (np.asarray(sigma_eff) ** 2 * h))
