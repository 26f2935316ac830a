"""Quick end-to-end checks of the closed-form and oracle-backed examples.

Sample sizes are kept small so the whole suite runs in well under a
minute; tolerances are the statistical ones (a few standard errors plus
the step-size bias budget).
"""
from __future__ import annotations

import math
import time
import warnings
from typing import Callable

import numpy as np

from . import expr as ex
from .data_function import DataFunction, augment_velocity, cauchy_derivative
from .domain import DomainSpec, boundary_crossing, bridge_exit_probability
from .estimator import (EstimatorConfig, conditional_kernel_exp, conditional_kernel_poly,
                        estimate_dt_u, estimate_u, tail_diagnostics)
from .exits import sample_exit, sample_exit_batch
from .reference import (WaveData, WaveFdConfig, harmonic_check, solve_mean_exit_ode,
                        wave_fd_solve)
from .rng import RngStream, gaussian_vector, stream_normals
from .sde import SdeSpec, StepConfig, apply_generator, euler_step

BIAS_BUDGET = 0.005

CHECKS: list[tuple[str, Callable[[], bool]]] = []


def check(fn):
    CHECKS.append((fn.__name__, fn))
    return fn


BM = SdeSpec.brownian(1)
UNIT = DomainSpec.interval(0.0, 1.0)


@check
def euler_identities():
    zero = SdeSpec.from_strings(1, "0", "0")
    drift = SdeSpec.from_strings(1, "1", "0")
    return (euler_step([0.5], zero, 0.1, [3.0])[0] == 0.5
            and math.isclose(euler_step([0.0], drift, 0.1, [1.0])[0], 0.1)
            and math.isclose(euler_step([0.0], BM, 0.04, [1.0])[0], 0.2))


@check
def generator_examples():
    bm2 = SdeSpec.brownian(2)
    return (abs(apply_generator(lambda x: 3.0, BM, [0.3])) < 1e-9
            and math.isclose(apply_generator(lambda x: x[0] ** 2, BM, [0.3]), 1.0, rel_tol=1e-6)
            and math.isclose(apply_generator(lambda x: x[0] ** 2 + x[1] ** 2, bm2, [0.2, 0.1]),
                             2.0, rel_tol=1e-6))


@check
def gaussian_moments():
    r = RngStream(42, 0)
    a = [r.normal() for _ in range(5)]
    b = gaussian_vector(RngStream(42, 0), 5)
    z = stream_normals(42, 0, 10 ** 6)
    return np.array_equal(a, b) and abs(z.mean()) < 0.01 and abs(z.var() - 1) < 0.01


@check
def geometry_examples():
    lam, hit = boundary_crossing(UNIT, [0.9], [1.1])
    lam2, hit2 = boundary_crossing(DomainSpec.box([0, 0], [1, 1]), [0.5, 0.9], [0.5, 1.3])
    p = float(bridge_exit_probability(1 / math.sqrt(2), 1 / math.sqrt(2), 1.0, 1.0))
    return (UNIT.contains([0.5]) and not UNIT.contains([1.0])
            and not DomainSpec.ball([0, 0], 1).contains([0.6, 0.8])
            and math.isclose(lam, 0.5) and hit[0] == 1.0
            and math.isclose(lam2, 0.25) and np.allclose(hit2, [0.5, 1.0])
            and math.isclose(p, math.exp(-1)))


@check
def exit_mean_and_side():
    step = StepConfig(1e-3)
    start = sample_exit(BM, UNIT, [1.0], step, RngStream(1, 0))
    b = sample_exit_batch(BM, UNIT, [0.5], step, 11, 20000)
    se = b.tau.std(ddof=1) / math.sqrt(len(b))
    right = (b.x_exit[:, 0] == 1.0).mean()
    g = solve_mean_exit_ode(BM, UNIT, 101)(0.5)
    return (start.tau == 0.0 and abs(b.tau.mean() - g) < 3 * se + BIAS_BUDGET
            and abs(right - 0.5) < 3 * math.sqrt(0.25 / len(b)))


@check
def exit_ball_center():
    b = sample_exit_batch(SdeSpec.brownian(2), DomainSpec.ball([0, 0], 1.0), [0, 0],
                          StepConfig(1e-3), 5, 4000)
    se = b.tau.std(ddof=1) / math.sqrt(len(b))
    return abs(b.tau.mean() - 0.5) < 3 * se + BIAS_BUDGET


@check
def parser_and_derivative():
    try:
        ex.parse_expr("exp(x1 +", 1)
        return False
    except ex.ExprSyntaxError as err:
        pos_ok = err.position == 9
    f = ex.parse_expr("sin(z * x1) + z^3 * exp(x1 - z)", 1)
    d = ex.differentiate_z(f)
    z, x = 0.3 + 0.7j, np.array([0.4])
    ref = cauchy_derivative(f, z, x)
    return pos_ok and abs(complex(ex.evaluate(d, z, x)) - ref) < 1e-8 * abs(ref)


@check
def velocity_augmentation():
    f = DataFunction.parse("exp(x1 + z)", 1)
    f1 = augment_velocity(f, "x1 * (1 - x1)", UNIT)
    x = np.array([0.3])
    return (f1(0j, x) == f(0j, x)
            and abs(f1.dz(0j, x) - (f.dz(0j, x) + 0.21)) < 1e-14)


def _cfg(n=20000, **kw):
    return EstimatorConfig(n, step=StepConfig(1e-3), seed=kw.pop("seed", 3), **kw)


@check
def estimator_closed_forms():
    c = estimate_u(DataFunction.parse("2", 1), BM, UNIT, 0.5, [0.5], _cfg(2000))
    z = estimate_u(DataFunction.parse("z", 1), BM, UNIT, 0.7, [0.5], _cfg())
    e = estimate_u(DataFunction.parse("exp(x1 + z)", 1), BM, UNIT, 0.5, [0.5], _cfg())
    q = estimate_u(DataFunction.parse("z^2", 1), BM, UNIT, 1.0, [0.5], _cfg())
    return (c.mean == 2 and c.stderr == 0
            and abs(z.mean.real - 0.7) <= 3 * z.stderr_re + 1e-15
            and abs(e.mean.real - math.e) <= max(4 * e.stderr_re, 0.01 * math.e)
            and abs(q.mean.real - 0.75) <= max(4 * q.stderr_re + BIAS_BUDGET, 0.02 * 0.75))


@check
def time_derivative():
    d1 = estimate_dt_u(DataFunction.parse("z", 1), BM, UNIT, 0.5, [0.5], _cfg(5000))
    de = estimate_dt_u(DataFunction.parse("exp(x1 + z)", 1), BM, UNIT, 0.5, [0.5], _cfg())
    return (abs(d1.mean.real - 1) <= 3 * d1.stderr_re + 1e-15
            and abs(de.mean.real - math.e) <= max(4 * de.stderr_re, 0.02 * math.e))


@check
def exact_recovery():
    f = DataFunction.parse("exp(x1 + z)", 1)
    a = estimate_u(f, BM, UNIT, 0.0, [0.3], _cfg(100))
    b = estimate_u(f, BM, UNIT, 0.4, [1.0], _cfg(100))
    return a.mean == complex(f(0j, [0.3])) and b.mean == complex(f(0.4 + 0j, [1.0])) \
        and a.stderr == b.stderr == 0


@check
def kernels():
    rng = np.random.default_rng(0)
    zs = rng.standard_normal(10 ** 6)
    t, tau = 1.0, 0.5
    mc = (t + 1j * math.sqrt(tau) * zs) ** 4
    se = mc.real.std() / math.sqrt(zs.size)
    return (math.isclose(abs(conditional_kernel_exp(1.0, 0.0, 2.0)), math.exp(-1))
            and conditional_kernel_poly(2, 0.7, 0.3) == 0.7 ** 2 - 0.3
            and abs(conditional_kernel_poly(4, t, tau).real - mc.real.mean()) < 3 * se)


@check
def rao_blackwell_exp():
    f = DataFunction.parse("exp(x1 + z)", 1)
    naive = estimate_u(f, BM, UNIT, 0.5, [0.5], _cfg())
    rb = estimate_u(f, BM, UNIT, 0.5, [0.5], _cfg(rao_blackwell="exp_family"))
    return (abs(rb.mean.real - math.e) <= max(4 * rb.stderr_re, 0.01 * math.e)
            and rb.stderr_re < naive.stderr_re and rb.diag.max_abs_f <= math.exp(2.0) + 1e-12)


@check
def tail_flags():
    flat = tail_diagnostics(np.ones(1000))
    spiky = np.ones(10 ** 4)
    spiky[0] = 1e6
    return not flat["flagged"] and flat["max_over_mean"] == 1.0 and tail_diagnostics(spiky)["flagged"]


@check
def mean_exit_oracle():
    g = solve_mean_exit_ode(BM, UNIT, 101)
    return abs(g(0.5) - 0.25) < 1e-10 and g.values[0] == 0.0 and g.values[-1] == 0.0


@check
def wave_closed_forms():
    cfg = WaveFdConfig(41, 0.0125, 1.0)
    zero = wave_fd_solve(BM, UNIT, WaveData.zero(), cfg)
    data = WaveData(np.exp, lambda t: np.exp(t + 1), np.exp, np.exp)
    sol = wave_fd_solve(BM, UNIT, data, cfg)
    err = np.abs(sol.u - np.exp(sol.x[None, :] + sol.t[:, None])).max()
    return not np.any(zero.u) and err < 1e-3


@check
def harmonic_reduction():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = harmonic_check(DataFunction.parse("x1^2", 1), BM, UNIT, [[0.3], [0.6]], _cfg(5000))
    return rep.passed


def run_selftest(verbose: bool = False) -> bool:
    ok = True
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            passed = bool(fn())
            note = ""
        except Exception as err:  # a crash is a failed check, not a crashed suite
            passed, note = False, f" ({type(err).__name__}: {err})"
        ok &= passed
        if verbose:
            print(f"{'PASS' if passed else 'FAIL'} {name} [{time.perf_counter() - t0:.1f}s]{note}")
    if verbose:
        print("selftest:", "all passed" if ok else "FAILED")
    return ok
