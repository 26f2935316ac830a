"""Ito diffusions dX = b(X) dt + sigma(X) dB and their Euler-Maruyama step."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import expr as ex


class NumericalError(ArithmeticError):
    pass


def _as_expr(item, dim: int) -> ex.Expr:
    if isinstance(item, (int, float)):
        return ex.Const(complex(float(item)))
    e = ex.parse_expr(str(item), dim) if isinstance(item, str) else item
    if ex.depends_on(e, "z"):
        raise ex.ExprError("drift and diffusion may only depend on x1 .. xd")
    if ex.has_complex_constant(e):
        raise ex.ExprError("drift and diffusion must be real-valued")
    return e


@dataclass(frozen=True)
class SdeSpec:
    """Drift and diffusion of a d-dimensional diffusion, as real expressions.

    ``diffusion`` is the full d x d matrix sigma(x) stored row-major.
    """

    dim: int
    drift_exprs: tuple
    diffusion_exprs: tuple
    description: str = ""
    _fns: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be at least 1")
        if len(self.drift_exprs) != self.dim or len(self.diffusion_exprs) != self.dim ** 2:
            raise ValueError("drift needs d entries and diffusion d*d entries")

    @classmethod
    def from_strings(cls, dim: int, drift: Union[str, Sequence], diffusion: Union[str, Sequence],
                     description: str = "") -> "SdeSpec":
        """Build from expression strings.

        ``drift`` is one string per coordinate (a bare string is allowed for
        d = 1).  ``diffusion`` is either a scalar string s(x), meaning
        s(x) * identity, a list of d strings for a diagonal matrix, or a
        nested d x d list.
        """
        if isinstance(drift, (str, int, float)):
            if dim != 1:
                raise ValueError("a bare drift string is only allowed for d = 1")
            drift = [drift]
        drift_e = tuple(_as_expr(v, dim) for v in drift)
        zero = ex.Const(0j)
        if isinstance(diffusion, (str, int, float)):
            s = _as_expr(diffusion, dim)
            diff_e = tuple(s if i == j else zero for i in range(dim) for j in range(dim))
        elif all(isinstance(v, (str, int, float)) for v in diffusion):
            if len(diffusion) != dim:
                raise ValueError("diagonal diffusion needs d entries")
            diag = [_as_expr(v, dim) for v in diffusion]
            diff_e = tuple(diag[i] if i == j else zero for i in range(dim) for j in range(dim))
        else:
            rows = [list(r) for r in diffusion]
            if len(rows) != dim or any(len(r) != dim for r in rows):
                raise ValueError("diffusion matrix must be d x d")
            diff_e = tuple(_as_expr(v, dim) for r in rows for v in r)
        return cls(dim, drift_e, diff_e, description)

    @classmethod
    def brownian(cls, dim: int = 1, scale: float = 1.0) -> "SdeSpec":
        return cls.from_strings(dim, ["0"] * dim, repr(float(scale)), f"{scale} x Brownian motion")

    @classmethod
    def constant(cls, drift, sigma, description: str = "") -> "SdeSpec":
        drift = np.atleast_1d(np.asarray(drift, dtype=float))
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        d = drift.size
        return cls.from_strings(d, [repr(v) for v in drift],
                                [[repr(v) for v in row] for row in sigma], description)

    @classmethod
    def linear(cls, A, c, sigma, description: str = "") -> "SdeSpec":
        """Drift A x + c with constant diffusion matrix ``sigma``."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        c = np.atleast_1d(np.asarray(c, dtype=float))
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        d = c.size
        drift = []
        for i in range(d):
            parts = [f"{A[i, j]!r} * x{j + 1}" for j in range(d) if A[i, j] != 0.0]
            drift.append(" + ".join(parts + [repr(c[i])]))
        return cls.from_strings(d, drift, [[repr(v) for v in row] for row in sigma], description)

    # compiled coefficient functions -------------------------------------

    @property
    def drift_fn(self):
        if "drift" not in self._fns:
            self._fns["drift"] = ex.compile_filler(list(self.drift_exprs), "drift")
        return self._fns["drift"]

    @property
    def diffusion_fn(self):
        if "diffusion" not in self._fns:
            self._fns["diffusion"] = ex.compile_filler(list(self.diffusion_exprs), "diffusion")
        return self._fns["diffusion"]

    def drift(self, x) -> np.ndarray:
        out = np.empty(self.dim)
        self.drift_fn(np.atleast_1d(np.asarray(x, dtype=float)), out)
        return out

    def diffusion(self, x) -> np.ndarray:
        out = np.empty(self.dim * self.dim)
        self.diffusion_fn(np.atleast_1d(np.asarray(x, dtype=float)), out)
        return out.reshape(self.dim, self.dim)

    def covariance(self, x) -> np.ndarray:
        """a(x) = sigma sigma^T / 2, the second-order coefficient of the generator."""
        s = self.diffusion(x)
        return 0.5 * s @ s.T

    def validate_on(self, lo, hi, n: int = 64, seed: int = 0) -> None:
        """Check that b and sigma are finite on random points of a box."""
        pts = np.random.default_rng(seed).uniform(lo, hi, size=(n, self.dim))
        for p in np.vstack([pts, np.asarray(lo)[None], np.asarray(hi)[None]]):
            if not (np.all(np.isfinite(self.drift(p))) and np.all(np.isfinite(self.diffusion(p)))):
                raise NumericalError(f"drift or diffusion is not finite at x={p}")

    def __str__(self):
        b = ", ".join(ex.to_string(e) for e in self.drift_exprs)
        s = ", ".join(ex.to_string(e) for e in self.diffusion_exprs)
        return self.description or f"b=[{b}], sigma=[{s}]"


@dataclass(frozen=True)
class StepConfig:
    """Euler-Maruyama step size, step cap and Brownian-bridge exit test switch."""

    h: float
    max_steps: Optional[int] = None
    bridge_correction: bool = True

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.max_steps is None:
            object.__setattr__(self, "max_steps", default_max_steps(self.h))
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")


def default_max_steps(h: float) -> int:
    return max(1, int(min(1e8 / h, 1e9)))


def euler_step(x, spec: SdeSpec, h: float, xi) -> np.ndarray:
    """x + b(x) h + sigma(x) (sqrt(h) xi)."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if xi.size != spec.dim:
        raise ValueError(f"xi must have {spec.dim} entries")
    y = x + spec.drift(x) * h + spec.diffusion(x) @ (np.sqrt(h) * xi)
    bad = np.flatnonzero(~np.isfinite(y))
    if bad.size:
        raise NumericalError(f"Euler step overflowed in coordinate x{bad[0] + 1}")
    return y


def apply_generator(u, spec: SdeSpec, x, fd_step: Optional[float] = None, dom=None) -> float:
    """L u(x) = sum b_i d_i u + sum a_ij d_i d_j u by central differences.

    ``fd_step`` defaults to 1e-4 times the bounding-box diameter of ``dom``
    (or 1e-4 without a domain).
    """
    if fd_step is None:
        fd_step = 1e-4 * (dom.diameter() if dom is not None else 1.0)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = spec.dim
    hs = fd_step
    b = spec.drift(x)
    a = spec.covariance(x)
    eye = np.eye(d) * hs

    def U(p):
        v = float(np.real(u(p)))
        if not np.isfinite(v):
            raise NumericalError(f"u is not finite at {p}")
        return v

    u0 = U(x)
    total = 0.0
    for i in range(d):
        up, um = U(x + eye[i]), U(x - eye[i])
        total += b[i] * (up - um) / (2 * hs)
        total += a[i, i] * (up - 2 * u0 + um) / hs ** 2
        for j in range(i + 1, d):
            if a[i, j] == 0.0 and a[j, i] == 0.0:
                continue
            mixed = (U(x + eye[i] + eye[j]) - U(x + eye[i] - eye[j])
                     - U(x - eye[i] + eye[j]) + U(x - eye[i] - eye[j])) / (4 * hs ** 2)
            total += (a[i, j] + a[j, i]) * mixed
    return total
