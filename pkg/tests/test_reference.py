import json
import math

import numpy as np
import pytest

import oracles
from wickfk.data_function import DataFunction
from wickfk.domain import DomainSpec
from wickfk.estimator import EstimatorConfig
from wickfk.reference import (CflError, SingularSystemError, WaveData, WaveFdConfig,
                              exit_probability_ode, fd_continuation_check, harmonic_check,
                              solve_bvp, solve_mean_exit_ode, wave_fd_solve)
from wickfk.sde import SdeSpec, StepConfig

BM = SdeSpec.brownian(1)
UNIT = DomainSpec.interval(0.0, 1.0)


def test_mean_exit_quadratic_is_exact():
    g = solve_mean_exit_ode(BM, UNIT, 101)
    assert abs(g(0.5) - 0.25) < 1e-10
    assert g.values[0] == 0.0 and g.values[-1] == 0.0
    assert np.allclose(g.values, [oracles.mean_exit_interval(x) for x in g.x], atol=1e-12)


def test_exit_probability_with_drift_second_order():
    mu = 1.5
    spec = SdeSpec.from_strings(1, str(mu), "1")

    def exact(x):
        return (1 - math.exp(-2 * mu * x)) / (1 - math.exp(-2 * mu))

    errs = []
    for n in (21, 41, 81):
        g = exit_probability_ode(spec, UNIT, n)
        errs.append(max(abs(v - exact(x)) for x, v in zip(g.x, g.values)))
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_mean_exit_with_drift_matches_closed_form():
    mu = 1.0
    spec = SdeSpec.from_strings(1, str(mu), "1")
    g = solve_mean_exit_ode(spec, UNIT, 2001)
    # mu g' + g''/2 = -1, g(0) = g(1) = 0  =>  g = (p(x) - x) / mu, p the exit-right probability
    p = (1 - np.exp(-2 * mu * g.x)) / (1 - math.exp(-2 * mu))
    assert np.max(np.abs(g.values - (p - g.x) / mu)) < 1e-6


def test_bvp_self_convergence_variable_coefficients():
    spec = SdeSpec.from_strings(1, "sin(3*x1)", "1 + x1^2")
    dom = DomainSpec.interval(0.0, 2.0)
    g = [solve_bvp(spec, dom, n, rhs=lambda x: math.cos(x)) for n in (41, 81, 161)]
    probe = np.linspace(0.1, 1.9, 19)
    e1 = np.max(np.abs(g[0](probe) - g[1](probe)))
    e2 = np.max(np.abs(g[1](probe) - g[2](probe)))
    assert e1 / e2 >= 3.5


def test_bvp_errors():
    with pytest.raises(SingularSystemError):
        solve_bvp(SdeSpec.from_strings(1, "0", "x1 - 0.5"), UNIT, 11)
    with pytest.raises(ValueError):
        solve_bvp(BM, UNIT, 2)
    with pytest.raises(ValueError):
        solve_bvp(BM, DomainSpec.ball([0, 0], 1), 11)


def test_wave_zero_data():
    sol = wave_fd_solve(BM, UNIT, WaveData.zero(), WaveFdConfig(41, 0.0125, 1.0))
    assert not np.any(sol.u)


def _exp_error(nx):
    dx = 1.0 / (nx - 1)
    data = WaveData(np.exp, lambda t: np.exp(t + 1), np.exp, np.exp)
    sol = wave_fd_solve(BM, UNIT, data, WaveFdConfig(nx, 0.5 * dx, 1.0))
    return np.abs(sol.u - np.exp(sol.x[None, :] + sol.t[:, None])).max()


def _sin_error(nx):
    dx = 1.0 / (nx - 1)
    z = lambda s: np.zeros_like(np.asarray(s, dtype=float))
    data = WaveData(z, z, lambda x: np.sin(np.pi * x), z)
    sol = wave_fd_solve(BM, UNIT, data, WaveFdConfig(nx, 0.5 * dx, 1.0))
    ref = np.vectorize(oracles.sin_cos_wave)(sol.t[:, None], sol.x[None, :])
    return np.abs(sol.u - ref).max()


@pytest.mark.parametrize("err", [_exp_error, _sin_error])
def test_wave_second_order(err):
    e1, e2 = err(21), err(41)
    assert e1 < 5e-3
    assert 3.5 < e1 / e2 < 4.5


def test_wave_solution_lookup():
    data = WaveData(np.exp, lambda t: np.exp(t + 1), np.exp, np.exp)
    sol = wave_fd_solve(BM, UNIT, data, WaveFdConfig(41, 0.0125, 1.0))
    assert np.allclose(sol.at(0.5), np.exp(sol.x + 0.5), atol=1e-3)
    assert sol.t[-1] == pytest.approx(1.0)


def test_cfl_checked_at_construction_and_solve():
    with pytest.raises(CflError):
        WaveFdConfig(11, 0.2, 1.0, max_a=0.5)
    with pytest.raises(CflError):
        WaveFdConfig.for_problem(BM, UNIT, 11, 0.2, 1.0)
    with pytest.raises(CflError):
        wave_fd_solve(BM, UNIT, WaveData.zero(), WaveFdConfig(11, 0.2, 1.0))
    WaveFdConfig.for_problem(BM, UNIT, 11, 0.1, 1.0)


def test_wave_config_validation():
    with pytest.raises(ValueError):
        WaveFdConfig(2, 0.1, 1.0)
    with pytest.raises(ValueError):
        WaveFdConfig(11, 0.05, 1.0, scheme="crank")


MC = EstimatorConfig(4000, step=StepConfig(1e-3), seed=5)
FD = WaveFdConfig(21, 0.025, 0.5)


@pytest.mark.parametrize("text", ["exp(x1 + z)", "z^2", "z"])
def test_fd_continuation_passes(text):
    rep = fd_continuation_check(DataFunction.parse(text, 1), BM, UNIT, 0.25, 0.75, MC, FD)
    assert rep.passed, rep.to_json()
    d = json.loads(rep.to_json())
    assert d["pass"] is True and len(d["points"]) >= 5


def test_fd_continuation_with_faster_diffusion():
    f = DataFunction.parse("exp(x1 + z)", 1)
    rep = fd_continuation_check(f, SdeSpec.brownian(1, scale=2.0), UNIT, 0.25, 0.75, MC,
                                WaveFdConfig(21, 0.0125, 0.5))
    assert rep.passed
    with pytest.raises(ValueError):
        fd_continuation_check(f, BM, UNIT, 0.5, 0.25, MC, FD)


def test_fd_continuation_budget_shrinks_with_samples():
    f = DataFunction.parse("exp(x1 + z)", 1)
    budgets = [fd_continuation_check(f, BM, UNIT, 0.25, 0.75,
                                     EstimatorConfig(n, seed=5, step=StepConfig(1e-3)),
                                     FD).stderr_budget
               for n in (500, 2000, 8000)]
    assert budgets[0] > budgets[1] > budgets[2]
    # stderr ~ n^-1/2, so quadrupling n roughly halves it
    assert 1.5 < budgets[0] / budgets[1] < 2.7


def test_harmonic_check():
    rep = harmonic_check(DataFunction.parse("x1^2", 1), BM, UNIT, [[0.3], [0.6]], MC)
    assert rep.passed
    assert all(p["t_independent"] for p in rep.points)
    assert harmonic_check(DataFunction.parse("1", 1), BM, UNIT, [[0.4]], MC).passed
    with pytest.raises(ValueError):
        harmonic_check(DataFunction.parse("z", 1), BM, UNIT, [[0.4]], MC)
