"""Deterministic 1D oracles.

* :func:`solve_mean_exit_ode`: L g = -1 with g = 0 at both ends, the mean
  exit time of the diffusion.
* :func:`wave_fd_solve`: leapfrog for 1/2 u_tt = b u_x + a u_xx with
  Dirichlet sides.
* :func:`fd_continuation_check` and :func:`harmonic_check`: cross-checks of
  the Monte Carlo estimator against those solvers and closed forms.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded

from . import expr as ex
from .data_function import DataFunction
from .domain import BOX, DomainSpec
from .estimator import EstimatorConfig, estimate_dt_u, estimate_u
from .rng import derive_seed
from .sde import SdeSpec


class SingularSystemError(np.linalg.LinAlgError):
    pass


class CflError(ValueError):
    pass


def _interval(dom: DomainSpec):
    if dom.kind != BOX or dom.dim != 1:
        raise ValueError("reference solvers need a 1D interval domain")
    return dom.lo[0], dom.hi[0]


def _coefficients(spec: SdeSpec, x: np.ndarray):
    """Drift b and a = sigma^2 / 2 on the nodes x."""
    if spec.dim != 1:
        raise ValueError("reference solvers are one-dimensional")
    b = np.array([spec.drift(xi)[0] for xi in x])
    a = np.array([spec.covariance(xi)[0, 0] for xi in x])
    return b, a


# --------------------------------------------------------------------------
# two-point boundary value problem
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GridFunction:
    x: np.ndarray
    values: np.ndarray

    def __call__(self, xq):
        return np.interp(xq, self.x, self.values)


def solve_bvp(spec: SdeSpec, dom: DomainSpec, n_grid: int, rhs: Callable = lambda x: -1.0,
              left: float = 0.0, right: float = 0.0) -> GridFunction:
    """Second-order solution of b g' + a g'' = rhs with g(a) = left, g(b) = right."""
    if n_grid < 3:
        raise ValueError("n_grid must be at least 3")
    lo, hi = _interval(dom)
    x = np.linspace(lo, hi, n_grid)
    dx = x[1] - x[0]
    b, a = _coefficients(spec, x[1:-1])
    if np.min(a) <= 1e-14:
        raise SingularSystemError("diffusion vanishes inside the interval; system is singular")
    m = n_grid - 2
    ab = np.zeros((3, m))
    ab[0, 1:] = (a / dx ** 2 + b / (2 * dx))[:-1]       # super-diagonal
    ab[1, :] = -2 * a / dx ** 2
    ab[2, :-1] = (a / dx ** 2 - b / (2 * dx))[1:]       # sub-diagonal
    r = np.array([float(rhs(xi)) for xi in x[1:-1]])
    r[0] -= (a[0] / dx ** 2 - b[0] / (2 * dx)) * left
    r[-1] -= (a[-1] / dx ** 2 + b[-1] / (2 * dx)) * right
    g = np.empty(n_grid)
    g[0], g[-1] = left, right
    g[1:-1] = solve_banded((1, 1), ab, r)
    if not np.all(np.isfinite(g)):
        raise SingularSystemError("tridiagonal solve produced non-finite values")
    return GridFunction(x, g)


def solve_mean_exit_ode(spec: SdeSpec, dom: DomainSpec, n_grid: int = 1001) -> GridFunction:
    """E[tau] from x: b g' + a g'' = -1, g = 0 on the boundary."""
    return solve_bvp(spec, dom, n_grid)


def exit_probability_ode(spec: SdeSpec, dom: DomainSpec, n_grid: int = 1001) -> GridFunction:
    """P(exit at the right end): L g = 0, g(a) = 0, g(b) = 1."""
    return solve_bvp(spec, dom, n_grid, rhs=lambda x: 0.0, left=0.0, right=1.0)


# --------------------------------------------------------------------------
# leapfrog wave solver
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class WaveFdConfig:
    """Grid for the leapfrog solver.

    ``max_a`` (largest sigma^2 / 2 on the interval), when given, triggers
    the CFL check dt <= dx / sqrt(2 max_a) right here; otherwise it runs
    when the config meets an SDE in :func:`wave_fd_solve`.
    """

    nx: int
    dt: float
    T: float
    length: float = 1.0
    max_a: Optional[float] = None
    scheme: str = "leapfrog"

    def __post_init__(self):
        if self.nx < 3:
            raise ValueError("nx must be at least 3")
        if not (self.dt > 0 and self.T >= 0 and self.length > 0):
            raise ValueError("dt and length must be positive, T non-negative")
        if self.scheme != "leapfrog":
            raise ValueError("only the leapfrog scheme is available")
        if self.max_a is not None:
            check_cfl(self.dt, self.dx, self.max_a)

    @property
    def dx(self) -> float:
        return self.length / (self.nx - 1)

    @classmethod
    def for_problem(cls, spec: SdeSpec, dom: DomainSpec, nx: int, dt: float, T: float,
                    ) -> "WaveFdConfig":
        lo, hi = _interval(dom)
        _, a = _coefficients(spec, np.linspace(lo, hi, nx))
        return cls(nx, dt, T, hi - lo, float(np.max(a)))


def check_cfl(dt: float, dx: float, max_a: float) -> None:
    limit = dx / math.sqrt(2 * max_a) if max_a > 0 else math.inf
    if dt > limit * (1 + 1e-12):
        raise CflError(f"CFL violated: dt={dt:g} > dx/sqrt(2 max a)={limit:g}")


@dataclass(frozen=True)
class WaveData:
    """Side values u(t, a), u(t, b) and initial position / velocity (vectorised callables)."""

    left: Callable
    right: Callable
    position: Callable
    velocity: Callable

    @classmethod
    def zero(cls) -> "WaveData":
        z = lambda s: np.zeros_like(np.asarray(s, dtype=float))
        return cls(z, z, z, z)


@dataclass
class WaveSolution:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.t - t)))
        return self.u[k]


def _apply_l(u, b, a, dx):
    return (b * (u[2:] - u[:-2]) / (2 * dx)
            + a * (u[2:] - 2 * u[1:-1] + u[:-2]) / dx ** 2)


def wave_fd_solve(spec: SdeSpec, dom: DomainSpec, data: WaveData, cfg: WaveFdConfig,
                  t_start: float = 0.0, keep: bool = True) -> WaveSolution:
    """Leapfrog for u_tt = 2 (b u_x + a u_xx).

    u^{n+1} = 2 u^n - u^{n-1} + 2 dt^2 L_h u^n, started with
    u^1 = p + dt v + dt^2 L_h p.  ``t_start`` shifts the side data in time.
    The step is shrunk so that it divides T exactly.
    """
    lo, hi = _interval(dom)
    x = np.linspace(lo, hi, cfg.nx)
    dx = x[1] - x[0]
    b, a = _coefficients(spec, x[1:-1])
    nt = max(1, int(math.ceil(cfg.T / cfg.dt - 1e-9))) if cfg.T > 0 else 0
    dt = cfg.T / nt if nt else cfg.dt
    check_cfl(dt, dx, float(np.max(a)))
    ts = t_start + dt * np.arange(nt + 1)
    left = np.asarray(data.left(ts), dtype=float) * np.ones(nt + 1)
    right = np.asarray(data.right(ts), dtype=float) * np.ones(nt + 1)
    prev = np.asarray(data.position(x), dtype=float) * np.ones(cfg.nx)
    prev[0], prev[-1] = left[0], right[0]
    out = [prev.copy()] if keep else None
    if nt == 0:
        return WaveSolution(ts, x, np.array([prev]))
    vel = np.asarray(data.velocity(x), dtype=float) * np.ones(cfg.nx)
    cur = np.empty_like(prev)
    cur[1:-1] = prev[1:-1] + dt * vel[1:-1] + dt ** 2 * _apply_l(prev, b, a, dx)
    cur[0], cur[-1] = left[1], right[1]
    if keep:
        out.append(cur.copy())
    scale = max(1.0, float(np.max(np.abs(prev))), float(np.max(np.abs(cur))))
    for n in range(1, nt):
        nxt = np.empty_like(cur)
        nxt[1:-1] = 2 * cur[1:-1] - prev[1:-1] + 2 * dt ** 2 * _apply_l(cur, b, a, dx)
        nxt[0], nxt[-1] = left[n + 1], right[n + 1]
        if not np.all(np.abs(nxt) <= 1e10 * scale):
            raise CflError(f"leapfrog blew up at step {n + 1} (max |u| > 1e10); "
                           "reduce dt relative to dx")
        prev, cur = cur, nxt
        if keep:
            out.append(cur.copy())
    u = np.array(out) if keep else np.array([cur])
    return WaveSolution(ts if keep else ts[-1:], x, u)


# --------------------------------------------------------------------------
# cross-checks
# --------------------------------------------------------------------------

@dataclass
class ComparisonReport:
    name: str
    max_abs_error: float
    stderr_budget: float
    passed: bool
    grid: dict = field(default_factory=dict)
    points: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _real_f(f: DataFunction, t, x):
    return float(complex(f(complex(t), np.atleast_1d(float(x)))).real)


def fd_continuation_check(f: DataFunction, spec: SdeSpec, dom: DomainSpec, t0: float, t1: float,
                          mc_cfg: EstimatorConfig, fd_cfg: WaveFdConfig,
                          compare_x: Optional[Sequence[float]] = None,
                          rel_tol: float = 0.02, n_sigma: float = 5.0) -> ComparisonReport:
    """March Monte Carlo data at t0 to t1 with leapfrog and compare with Monte Carlo at t1.

    u(t0, .) and du/dt(t0, .) are estimated on the FD nodes (node j uses seed
    ``derive_seed(seed, 0, j)``) and the sides carry f(t, a), f(t, b).  The
    FD map is linear in the initial data, so the Monte Carlo error of the
    marched solution is propagated exactly through it.  The direct
    estimate at t1 uses ``derive_seed(seed, 1, j)``.  A point passes when
    the discrepancy is within max(n_sigma * stderr, rel_tol * |u|).
    """
    if not 0 < t0 < t1:
        raise ValueError("need 0 < t0 < t1")
    lo, hi = _interval(dom)
    fd = WaveFdConfig(fd_cfg.nx, fd_cfg.dt, t1 - t0, hi - lo)
    x = np.linspace(lo, hi, fd.nx)
    cfg = replace(mc_cfg, keep_samples=True)
    p = np.empty(fd.nx)
    v = np.empty(fd.nx)
    var_p = np.zeros(fd.nx)
    var_v = np.zeros(fd.nx)
    cov = np.zeros(fd.nx)
    p[0], p[-1] = _real_f(f, t0, lo), _real_f(f, t0, hi)
    v[0] = float(complex(f.dz(complex(t0), np.array([lo]))).real)
    v[-1] = float(complex(f.dz(complex(t0), np.array([hi]))).real)
    for j in range(1, fd.nx - 1):
        c = cfg.with_seed(derive_seed(mc_cfg.seed, 0, j))
        eu = estimate_u(f, spec, dom, t0, [x[j]], c)
        ed = estimate_dt_u(f, spec, dom, t0, [x[j]], c)
        p[j], v[j] = eu.mean.real, ed.mean.real
        n = eu.samples.size
        var_p[j] = eu.stderr_re ** 2
        var_v[j] = ed.stderr_re ** 2
        cov[j] = np.cov(eu.samples.real, ed.samples.real)[0, 1] / n

    data = WaveData(lambda s: np.array([_real_f(f, si, lo) for si in np.atleast_1d(s)]),
                    lambda s: np.array([_real_f(f, si, hi) for si in np.atleast_1d(s)]),
                    lambda xx: p, lambda xx: v)
    sol = wave_fd_solve(spec, dom, data, fd, t_start=t0, keep=False)
    u_fd = sol.u[-1]

    # sensitivities of the final slice to each interior initial value
    zero = WaveData.zero()
    sens_p = np.zeros((fd.nx, fd.nx))
    sens_v = np.zeros((fd.nx, fd.nx))
    for j in range(1, fd.nx - 1):
        e = np.zeros(fd.nx)
        e[j] = 1.0
        sens_p[:, j] = wave_fd_solve(spec, dom, WaveData(zero.left, zero.right, lambda xx: e,
                                                         zero.velocity), fd, keep=False).u[-1]
        sens_v[:, j] = wave_fd_solve(spec, dom, WaveData(zero.left, zero.right, zero.position,
                                                         lambda xx: e), fd, keep=False).u[-1]
    var_fd = sens_p ** 2 @ var_p + sens_v ** 2 @ var_v + 2 * (sens_p * sens_v) @ cov

    if compare_x is None:
        idx = list(range(1, fd.nx - 1))
        stride = max(1, len(idx) // 9)
        idx = idx[stride - 1::stride]
    else:
        idx = [int(np.argmin(np.abs(x - xc))) for xc in compare_x]
    points = []
    worst = 0.0
    budget = 0.0
    ok = True
    for j in idx:
        c = mc_cfg.with_seed(derive_seed(mc_cfg.seed, 1, j))
        e1 = estimate_u(f, spec, dom, t1, [x[j]], c)
        err = abs(u_fd[j] - e1.mean.real)
        se = math.sqrt(var_fd[j] + e1.stderr_re ** 2)
        allowed = max(n_sigma * se, rel_tol * abs(e1.mean.real))
        ok &= bool(err <= allowed)
        worst = max(worst, err)
        budget = max(budget, allowed)
        points.append({"x": float(x[j]), "u_fd": float(u_fd[j]), "u_mc": float(e1.mean.real),
                       "abs_error": float(err), "stderr": float(se), "allowed": float(allowed)})
    nt = int(math.ceil(fd.T / fd.dt - 1e-9))
    grid = {"nx": fd.nx, "dx": fd.dx, "dt": fd.T / nt,
            "t0": t0, "t1": t1, "n_samples": mc_cfg.n_samples, "h": mc_cfg.step.h}
    return ComparisonReport(f"fd_continuation[{f}]", worst, budget, ok, grid, points)


def _is_driftless_1d(spec: SdeSpec) -> bool:
    return spec.dim == 1 and all(not ex.variables(e) and complex(ex.evaluate(e, 0j, np.zeros(1))) == 0
                                 for e in spec.drift_exprs)


def harmonic_check(f: DataFunction, spec: SdeSpec, dom: DomainSpec, probes, cfg: EstimatorConfig,
                   t_values: Sequence[float] = (0.25, 0.5, 1.0), n_sigma: float = 3.0,
                   ) -> ComparisonReport:
    """z-free f: the estimate must not depend on t, and for a driftless 1D
    diffusion it must match the linear interpolant of the boundary values.
    """
    if f.depends_on_z:
        raise ValueError("harmonic_check needs a data function without z")
    probes = np.atleast_2d(np.asarray(probes, dtype=float).reshape(len(probes), -1))
    linear = _is_driftless_1d(spec) and dom.kind == BOX
    if linear:
        lo, hi = _interval(dom)
        fa, fb = _real_f(f, 0.0, lo), _real_f(f, 0.0, hi)
    points = []
    ok = True
    worst = 0.0
    budget = 0.0
    for xp in probes:
        ests = [estimate_u(f, spec, dom, t, xp, cfg) for t in t_values]
        same = all(e.mean == ests[0].mean and e.stderr_re == ests[0].stderr_re for e in ests)
        ok &= same
        row = {"x": xp.tolist(), "u_mc": ests[0].mean.real, "stderr": ests[0].stderr_re,
               "t_independent": same}
        if linear:
            target = fa * (hi - xp[0]) / (hi - lo) + fb * (xp[0] - lo) / (hi - lo)
            err = abs(ests[0].mean.real - target)
            allowed = n_sigma * ests[0].stderr_re
            passed = err <= allowed or (err == 0.0)
            ok &= bool(passed)
            worst = max(worst, err)
            budget = max(budget, allowed)
            row.update({"target": target, "abs_error": err, "allowed": allowed})
        points.append(row)
    grid = {"t_values": list(t_values), "n_samples": cfg.n_samples, "h": cfg.step.h,
            "linear_target": linear}
    return ComparisonReport(f"harmonic[{f}]", worst, budget, bool(ok), grid, points)
