"""Monte Carlo estimates of u(t, x) = E[f(t + i sqrt(tau) Z, X(tau))].

The exit pair (tau, X(tau)) of sample k comes from path stream ``(seed, k)``
and the Gaussian factor Z_k is the first normal of the weight sub-sequence
of the same stream, so the two are independent and any cell can be
recomputed in isolation.
"""
from __future__ import annotations

import math
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import expr as ex
from .data_function import DataFunction, NotSeparable, Term, separate_z
from .domain import DomainSpec
from .exits import ExitBatch, TruncationError, sample_exit_batch
from .rng import TAG_WEIGHT, derive_seed, normal_array
from .sde import SdeSpec, StepConfig

RB_MODES = ("off", "exp_family", "poly_family", "auto")


@dataclass(frozen=True)
class EstimatorConfig:
    """Sample size, variance reduction and stepping for one estimate.

    ``workers`` only changes wall time, never the numbers.
    """

    n_samples: int = 10_000
    antithetic: bool = False
    rao_blackwell: str = "off"
    seed: int = 0
    step: StepConfig = field(default_factory=lambda: StepConfig(1e-3))
    workers: int = 1
    keep_samples: bool = False
    truncation_limit: float = 1e-4

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be at least 2")
        if self.antithetic and self.n_samples % 2:
            raise ValueError("antithetic sampling needs an even n_samples")
        if self.rao_blackwell not in RB_MODES:
            raise ValueError(f"rao_blackwell must be one of {RB_MODES}")

    @property
    def n_exits(self) -> int:
        return self.n_samples // 2 if self.antithetic else self.n_samples

    def with_seed(self, seed: int) -> "EstimatorConfig":
        return _replace(self, seed=seed)


def _replace(cfg, **kw):
    from dataclasses import replace
    return replace(cfg, **kw)


@dataclass(frozen=True)
class Diagnostics:
    max_abs_f: float = 0.0
    excess_kurtosis: float = 0.0
    truncated_count: int = 0
    tail_flagged: bool = False
    rao_blackwell: bool = False


@dataclass(frozen=True)
class Estimate:
    """Complex mean with componentwise standard errors.

    ``samples`` holds the per-sample values (pair means when antithetic)
    if the config asked to keep them.
    """

    mean: complex
    stderr_re: float
    stderr_im: float
    n_effective: int
    tau_mean: float
    tau_max: float
    diag: Diagnostics = field(default_factory=Diagnostics)
    samples: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    @property
    def stderr(self) -> float:
        return math.hypot(self.stderr_re, self.stderr_im)

    @property
    def exact(self) -> bool:
        return self.stderr_re == 0.0 and self.stderr_im == 0.0


class IntegrabilityWarning(UserWarning):
    pass


# --------------------------------------------------------------------------
# exit samples, cached so that cells sharing (x, seed) reuse one batch
# --------------------------------------------------------------------------

_EXIT_CACHE: "OrderedDict[tuple, ExitBatch]" = OrderedDict()
EXIT_CACHE_SIZE = 32


def clear_exit_cache() -> None:
    _EXIT_CACHE.clear()


def exit_samples(spec: SdeSpec, dom: DomainSpec, x, step: StepConfig, seed: int, n: int,
                 workers: int = 1) -> ExitBatch:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    key = (spec, dom, id(dom.inside_fn), tuple(x.tolist()), step, int(seed), int(n))
    hit = _EXIT_CACHE.get(key)
    if hit is not None:
        _EXIT_CACHE.move_to_end(key)
        return hit
    batch = sample_exit_batch(spec, dom, x, step, seed, n, workers=workers)
    _EXIT_CACHE[key] = batch
    while len(_EXIT_CACHE) > EXIT_CACHE_SIZE:
        _EXIT_CACHE.popitem(last=False)
    return batch


def _usable(batch: ExitBatch, cfg: EstimatorConfig) -> np.ndarray:
    """Mask of non-truncated samples; rejects the run above the truncation limit."""
    bad = batch.truncated
    frac = bad.mean()
    if frac > cfg.truncation_limit:
        raise TruncationError(f"{int(bad.sum())} of {len(batch)} exit samples hit max_steps "
                              f"(fraction {frac:.3g} > {cfg.truncation_limit:g})")
    return ~bad


# --------------------------------------------------------------------------
# conditional expectations over Z given tau
# --------------------------------------------------------------------------

def conditional_kernel_exp(a: complex, t: float, tau):
    """E[exp(a (t + i sqrt(tau) Z)) | tau] = exp(a t - a^2 tau / 2)."""
    return np.exp(a * t - a * a * np.asarray(tau) / 2.0)


def conditional_kernel_poly(n: int, t: float, tau):
    """E[(t + i sqrt(tau) Z)^n | tau].

    Only even powers of Z survive:
    sum_j C(n, 2j) t^(n-2j) (-tau)^j (2j-1)!!.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if n > 30:
        raise ValueError("n > 30 is not supported (double factorial overflow guard)")
    tau = np.asarray(tau, dtype=float)
    out = np.zeros_like(tau, dtype=complex)
    dfact = 1
    for j in range(n // 2 + 1):
        if j > 0:
            dfact *= 2 * j - 1
        out = out + math.comb(n, 2 * j) * t ** (n - 2 * j) * dfact * (-tau) ** j
    return out if out.ndim else complex(out)


def _term_kernel(term: Term, t: float, tau):
    if term.kind == "exp":
        return conditional_kernel_exp(term.rate, t, tau)
    return conditional_kernel_poly(term.power, t, tau)


def _rb_terms(e: ex.Expr, mode: str):
    terms = separate_z(DataFunction(0, e, None, False))
    kinds = {t.kind for t in terms if not (t.kind == "poly" and t.power == 0)}
    if mode == "exp_family" and kinds - {"exp"}:
        raise NotSeparable("f has polynomial z-terms; use rao_blackwell='poly_family' or 'auto'")
    if mode == "poly_family" and kinds - {"poly"}:
        raise NotSeparable("f has exponential z-terms; use rao_blackwell='exp_family' or 'auto'")
    return terms


# --------------------------------------------------------------------------
# per-sample values and their summary
# --------------------------------------------------------------------------

def _naive_values(fn, t, tau, xexit, zs, antithetic):
    s = np.sqrt(tau)
    vals = fn(t + 1j * s * zs, xexit)
    if antithetic:
        vals = 0.5 * (vals + fn(t - 1j * s * zs, xexit))
    return np.asarray(vals, dtype=complex)


def _rb_values(terms, t, tau, xexit):
    vals = np.zeros(tau.shape[0], dtype=complex)
    zero = np.zeros(tau.shape[0])
    for term in terms:
        g = np.broadcast_to(ex.evaluate(term.coef, zero, xexit), tau.shape)
        vals = vals + g * _term_kernel(term, t, tau)
    return vals


def tail_diagnostics(samples) -> dict:
    """Heavy-tail proxy for E|f| < infinity.

    Reports max|f| / mean|f|, the excess kurtosis of |f| and the share of
    the total |f| mass held by the largest 1% of samples; flags the run when
    that share exceeds one half.
    """
    a = np.abs(np.asarray(samples, dtype=complex))
    if a.size < 100:
        raise ValueError("tail diagnostics need at least 100 samples")
    total = a.sum()
    mean = a.mean()
    ratio = float(a.max() / mean) if mean > 0 else 1.0
    var = a.var()
    kurt = float(np.mean((a - mean) ** 4) / var ** 2 - 3.0) if var > 0 else 0.0
    k = max(1, int(math.ceil(0.01 * a.size)))
    top = float(np.sort(a)[-k:].sum() / total) if total > 0 else 0.0
    return {"max_over_mean": ratio, "excess_kurtosis": kurt, "top1_share": top,
            "flagged": bool(top > 0.5)}


def _summarise(vals, batch, mask, cfg, rb=False) -> Estimate:
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise ex.EvaluationError(f"f is not finite on sample {int(np.flatnonzero(mask)[bad[0]])}")
    n = vals.size
    mean = complex(vals.mean())
    se_re = float(vals.real.std(ddof=1) / math.sqrt(n))
    se_im = float(vals.imag.std(ddof=1) / math.sqrt(n))
    if n >= 100:
        tail = tail_diagnostics(vals)
    else:
        tail = {"excess_kurtosis": 0.0, "flagged": False}
    if tail["flagged"]:
        warnings.warn("integrability suspect: the top 1% of |f| carries over half the mass",
                      IntegrabilityWarning, stacklevel=3)
    tau = batch.tau[mask]
    diag = Diagnostics(float(np.abs(vals).max()), tail["excess_kurtosis"],
                       batch.truncated_count, tail["flagged"], rb)
    return Estimate(mean, se_re, se_im, n, float(tau.mean()), float(tau.max()), diag,
                    vals if cfg.keep_samples else None)


def _exact(value: complex, cfg: EstimatorConfig) -> Estimate:
    n = cfg.n_exits
    samples = np.full(n, value, dtype=complex) if cfg.keep_samples else None
    return Estimate(complex(value), 0.0, 0.0, n, 0.0, 0.0, Diagnostics(abs(value)), samples)


def _check_args(f: DataFunction, spec: SdeSpec, dom: DomainSpec, t: float, x):
    if not t >= 0:
        raise ValueError(f"t must be non-negative (got {t})")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not (f.dim == spec.dim == dom.dim == x.size):
        raise ValueError("dimension mismatch between f, SDE, domain and x")
    if not dom.in_closure(x):
        raise ValueError(f"x={x} is outside the closure of the domain")
    return float(t), x


def _estimate(fn_expr, fn, f, spec, dom, t, x, cfg, exact_fn) -> Estimate:
    t, x = _check_args(f, spec, dom, t, x)
    if t == 0.0 or dom.on_boundary(x):
        return _exact(complex(exact_fn(t, x)), cfg)
    batch = exit_samples(spec, dom, x, cfg.step, cfg.seed, cfg.n_exits, cfg.workers)
    mask = _usable(batch, cfg)
    tau = batch.tau[mask]
    xexit = batch.x_exit[mask]
    terms = None
    if cfg.rao_blackwell != "off":
        if fn_expr is None:
            if cfg.rao_blackwell != "auto":
                raise NotSeparable("callable data functions cannot be Rao-Blackwellised")
        else:
            try:
                terms = _rb_terms(fn_expr, cfg.rao_blackwell)
            except NotSeparable:
                if cfg.rao_blackwell != "auto":
                    raise
    if terms is not None:
        vals = _rb_values(terms, t, tau, xexit)
    else:
        zs = normal_array(cfg.seed, 0, cfg.n_exits, TAG_WEIGHT)[mask]
        vals = _naive_values(fn, t, tau, xexit, zs, cfg.antithetic)
    return _summarise(vals, batch, mask, cfg, rb=terms is not None)


def estimate_u(f: DataFunction, spec: SdeSpec, dom: DomainSpec, t: float, x,
               cfg: EstimatorConfig) -> Estimate:
    """u(t, x) as the mean of f(t + i sqrt(tau_k) Z_k, X_k(tau_k)).

    t = 0 and boundary x are returned exactly (tau = 0 there).  With
    ``cfg.antithetic`` each exit sample is used with Z and -Z.  A
    Rao-Blackwell mode other than "off" integrates Z out analytically.
    """
    return _estimate(f.f, f, f, spec, dom, t, x, cfg, lambda t, x: f(complex(t), x))


def estimate_dt_u(f: DataFunction, spec: SdeSpec, dom: DomainSpec, t: float, x,
                  cfg: EstimatorConfig) -> Estimate:
    """d/dt u(t, x) = E[f'(t + i sqrt(tau) Z, X(tau))], f' the z-derivative."""
    return _estimate(f.df_dz, f.dz, f, spec, dom, t, x, cfg, lambda t, x: f.dz(complex(t), x))


def estimate_u_rao_blackwell(f: DataFunction, spec: SdeSpec, dom: DomainSpec, t: float, x,
                             cfg: EstimatorConfig) -> Estimate:
    """Conditional estimator for f = sum_j g_j(x) h_j(z), h_j in {exp(a z), z^n}.

    Raises :class:`NotSeparable` when f does not match the pattern.
    """
    mode = cfg.rao_blackwell if cfg.rao_blackwell != "off" else "auto"
    if f.f is None:
        raise NotSeparable("callable data functions cannot be Rao-Blackwellised")
    _rb_terms(f.f, mode)
    return estimate_u(f, spec, dom, t, x, _replace(cfg, rao_blackwell=mode, antithetic=False,
                                                   n_samples=cfg.n_exits))


def paired_naive_and_rb(f: DataFunction, spec: SdeSpec, dom: DomainSpec, t: float, x,
                        cfg: EstimatorConfig):
    """Naive and conditional per-sample values on the same exit samples."""
    t, x = _check_args(f, spec, dom, t, x)
    batch = exit_samples(spec, dom, x, cfg.step, cfg.seed, cfg.n_samples, cfg.workers)
    mask = _usable(batch, cfg)
    zs = normal_array(cfg.seed, 0, cfg.n_samples, TAG_WEIGHT)[mask]
    naive = _naive_values(f, t, batch.tau[mask], batch.x_exit[mask], zs, False)
    rb = _rb_values(_rb_terms(f.f, "auto"), t, batch.tau[mask], batch.x_exit[mask])
    return naive, rb, batch.tau[mask], batch.x_exit[mask]


# --------------------------------------------------------------------------
# grids
# --------------------------------------------------------------------------

@dataclass
class GridTable:
    """Estimates on t_grid x x_grid; ``cells[i][j]`` is (t_grid[i], x_grid[j])."""

    t_grid: np.ndarray
    x_grid: np.ndarray
    cells: list
    common_random_numbers: bool = False

    def __getitem__(self, ij) -> Estimate:
        i, j = ij
        return self.cells[i][j]

    def means(self) -> np.ndarray:
        return np.array([[c.mean for c in row] for row in self.cells])

    def stderrs(self) -> np.ndarray:
        return np.array([[c.stderr for c in row] for row in self.cells])

    def rows(self):
        for i, t in enumerate(self.t_grid):
            for j, x in enumerate(self.x_grid):
                yield float(t), x, self.cells[i][j]


def cell_seed(seed: int, t_index: int, x_index: int) -> int:
    return derive_seed(seed, t_index, x_index)


def grid_evaluate(f: DataFunction, spec: SdeSpec, dom: DomainSpec, t_grid: Sequence[float],
                  x_grid, cfg: EstimatorConfig, derivative: bool = False,
                  common_random_numbers: bool = False) -> GridTable:
    """Evaluate every (t, x) cell.

    Each cell uses seed ``derive_seed(cfg.seed, i, j)`` so cells are
    independent.  With ``common_random_numbers`` every cell uses
    ``cfg.seed`` instead: cells at the same x then share exit samples and
    weights (simulated once), which makes differences across the grid
    much less noisy and the whole table much cheaper.
    """
    t_grid = np.asarray(t_grid, dtype=float).ravel()
    xs = np.asarray(x_grid, dtype=float)
    xs = xs.reshape(-1, 1) if xs.ndim <= 1 else xs
    if t_grid.size == 0 or xs.shape[0] == 0:
        raise ValueError("grids must be non-empty")
    est = estimate_dt_u if derivative else estimate_u
    cells = []
    for i, t in enumerate(t_grid):
        row = []
        for j, x in enumerate(xs):
            seed = cfg.seed if common_random_numbers else cell_seed(cfg.seed, i, j)
            try:
                row.append(est(f, spec, dom, float(t), x, cfg.with_seed(seed)))
            except (TruncationError, ex.EvaluationError) as err:
                raise type(err)(f"cell (t={float(t)!r}, x={x.tolist()}): {err}") from err
        cells.append(row)
    return GridTable(t_grid, xs, cells, common_random_numbers)


# --------------------------------------------------------------------------
# consistency checks built on the estimator
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualCell:
    t: float
    x: float
    residual: float
    stderr: float


def pde_residual(table: GridTable, spec: SdeSpec) -> list[ResidualCell]:
    """Discrete residual 1/2 D_t^2 u - L_h u at interior cells of a 1D CRN grid.

    Second differences in t and central differences in x on uniform grids;
    the standard error comes from the per-sample residuals, which share
    random numbers across the stencil.  Needs ``keep_samples``.
    """
    if spec.dim != 1:
        raise ValueError("pde_residual handles d = 1 grids")
    if not table.common_random_numbers:
        raise ValueError("pde_residual needs a common-random-number grid")
    t = table.t_grid
    x = table.x_grid[:, 0]
    dt = np.diff(t)
    dx = np.diff(x)
    if not (np.allclose(dt, dt[0]) and np.allclose(dx, dx[0])):
        raise ValueError("pde_residual needs uniform grids")
    dt, dx = float(dt[0]), float(dx[0])
    out = []
    for i in range(1, t.size - 1):
        for j in range(1, x.size - 1):
            b = float(spec.drift(x[j:j + 1])[0])
            a = float(spec.covariance(x[j:j + 1])[0, 0])

            def s(ii, jj):
                c = table.cells[ii][jj]
                if c.samples is None:
                    raise ValueError("grid was computed without keep_samples")
                return c.samples.real

            per = (0.5 * (s(i + 1, j) - 2 * s(i, j) + s(i - 1, j)) / dt ** 2
                   - b * (s(i, j + 1) - s(i, j - 1)) / (2 * dx)
                   - a * (s(i, j + 1) - 2 * s(i, j) + s(i, j - 1)) / dx ** 2)
            out.append(ResidualCell(float(t[i]), float(x[j]), float(per.mean()),
                                    float(per.std(ddof=1) / math.sqrt(per.size))))
    return out


def velocity_report(f: DataFunction, spec: SdeSpec, dom: DomainSpec, x, cfg: EstimatorConfig,
                    deltas: Sequence[float] = (0.1, 0.05, 0.025)) -> dict:
    """Initial velocity at x: the formula value f'(0, x) next to one-sided
    differences (u(delta) - u(0)) / delta and the estimator of du/dt at delta.

    Purely descriptive; the numbers may legitimately disagree.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u0 = estimate_u(f, spec, dom, 0.0, x, cfg).mean
    rows = []
    for d in deltas:
        ud = estimate_u(f, spec, dom, d, x, cfg)
        dd = estimate_dt_u(f, spec, dom, d, x, cfg)
        rows.append({"delta": d, "one_sided": (ud.mean - u0).real / d,
                     "one_sided_stderr": ud.stderr_re / d, "dt_estimate": dd.mean.real,
                     "dt_stderr": dd.stderr_re})
    return {"x": x.tolist(), "formula": complex(f.dz(0j, x)).real, "rows": rows}
