"""Property-based checks of the estimator invariants."""
import math
import random
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from wickfk.data_function import DataFunction, separate_z
from wickfk.domain import DomainSpec
from wickfk.estimator import (EstimatorConfig, clear_exit_cache, conditional_kernel_exp,
                              conditional_kernel_poly, estimate_u, grid_evaluate)
from wickfk.expr import evaluate
from wickfk.sde import SdeSpec, StepConfig

BM = SdeSpec.brownian(1)
UNIT = DomainSpec.interval(0.0, 1.0)
STEP = StepConfig(1e-2)

seeds = st.integers(0, 2 ** 32 - 1)
interior = st.floats(0.05, 0.95)


def random_f(seed, z_needed=True):
    rng = random.Random(seed)
    tree = oracles.random_z_tree(rng, 1, 3) if z_needed else oracles.random_tree(rng, 1, 3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return DataFunction.parse(oracles.render(tree), 1)


def bounded(f):
    """Skip expressions whose magnitude explodes on the sampled range."""
    z = np.linspace(-1, 2, 7) + 1j * np.linspace(-2, 2, 7)
    v = f(z, np.full((7, 1), 0.5))
    return bool(np.all(np.isfinite(v)) and np.max(np.abs(v)) < 1e6)


@given(seed=seeds, x=interior)
def test_time_zero_is_exact(seed, x):
    f = random_f(seed)
    e = estimate_u(f, BM, UNIT, 0.0, [x], EstimatorConfig(10, step=STEP))
    assert e.mean == f(0j, [x]) and e.stderr == 0


@given(seed=seeds, t=st.floats(0.01, 2), side=st.sampled_from([0.0, 1.0]))
def test_boundary_is_exact(seed, t, side):
    f = random_f(seed)
    e = estimate_u(f, BM, UNIT, t, [side], EstimatorConfig(10, step=STEP))
    assert e.mean == f(complex(t), [side]) and e.stderr == 0


@given(seed=seeds, x=interior, t=st.floats(0.05, 1.5), s=seeds)
@pytest.mark.filterwarnings("ignore::wickfk.estimator.IntegrabilityWarning")
def test_antithetic_estimate_is_real_for_real_coefficients(seed, x, t, s):
    # random trees only use real constants, so f(conj z) = conj f(z)
    f = random_f(seed)
    if not bounded(f):
        return
    assert f.reflection_symmetric
    e = estimate_u(f, BM, UNIT, t, [x], EstimatorConfig(200, antithetic=True, seed=s, step=STEP))
    assert abs(e.mean.imag) <= 1e-12 * (1 + abs(e.mean))


@given(seed=seeds, t1=st.floats(0.05, 2), t2=st.floats(0.05, 2), x=interior)
def test_z_free_data_ignores_time(seed, t1, t2, x):
    f = random_f(seed, z_needed=False)
    if f.depends_on_z:
        return
    cfg = EstimatorConfig(200, seed=seed, step=STEP)
    a = estimate_u(f, BM, UNIT, t1, [x], cfg)
    b = estimate_u(f, BM, UNIT, t2, [x], cfg)
    assert a.mean == b.mean and a.stderr_re == b.stderr_re


@given(seed=seeds, workers=st.sampled_from([2, 3, 8]))
@settings(max_examples=15)
def test_grid_is_schedule_independent(seed, workers):
    f = DataFunction.parse("exp(x1 + z) + z^2", 1)
    cfg = EstimatorConfig(300, seed=seed, step=STEP)
    clear_exit_cache()
    a = grid_evaluate(f, BM, UNIT, [0.0, 0.3, 0.9], [0.2, 0.7], cfg)
    clear_exit_cache()
    b = grid_evaluate(f, BM, UNIT, [0.0, 0.3, 0.9], [0.2, 0.7],
                      EstimatorConfig(300, seed=seed, step=STEP, workers=workers))
    assert np.array_equal(a.means(), b.means())


separable = st.builds(
    lambda c1, n, c2, a, k: f"{c1} * x1^{k} * z^{n} + {c2} * exp({a} * z + x1)",
    st.integers(-3, 3), st.integers(0, 6), st.integers(-3, 3),
    st.floats(-2, 2).map(lambda v: round(v, 3)), st.integers(0, 2))


@given(text=separable, t=st.floats(0, 2), tau=st.floats(0, 1.5), x=st.floats(0, 1))
def test_separated_kernels_match_quadrature(text, t, tau, x):
    f = DataFunction.parse(text, 1)
    terms = separate_z(f)
    total = 0j
    for term in terms:
        g = evaluate(term.coef, 0j, np.array([x]))
        k = (conditional_kernel_exp(term.rate, t, tau) if term.kind == "exp"
             else conditional_kernel_poly(term.power, t, tau))
        total += g * k
    ref = oracles.kernel_quadrature(lambda w: f(w, [x]), t, tau)
    assert abs(total - ref) <= 1e-9 * max(1.0, abs(ref))


@given(n=st.integers(0, 30), t=st.floats(-2, 2), tau=st.floats(0, 2))
def test_poly_kernel_matches_binomial_oracle(n, t, tau):
    got = conditional_kernel_poly(n, t, tau)
    ref = oracles.poly_kernel_binomial(n, t, tau)
    scale = sum(math.comb(n, k) * abs(t) ** (n - k) * tau ** (k / 2) * oracles.gaussian_moment(k)
                for k in range(n + 1))
    assert abs(got - ref) <= 1e-12 * max(1.0, scale)


@given(x=interior, s=seeds)
@settings(max_examples=10)
def test_rao_blackwell_mean_agrees_with_naive(x, s):
    f = DataFunction.parse("exp(x1 + z) + 2 * z^2", 1)
    base = EstimatorConfig(4000, seed=s, step=STEP, keep_samples=True)
    naive = estimate_u(f, BM, UNIT, 0.5, [x], base)
    rb = estimate_u(f, BM, UNIT, 0.5, [x], EstimatorConfig(4000, seed=s, step=STEP,
                                                           keep_samples=True,
                                                           rao_blackwell="auto"))
    diff = naive.samples.real - rb.samples.real
    assert abs(diff.mean()) <= 4.5 * diff.std(ddof=1) / math.sqrt(diff.size)
    assert rb.samples.real.var() <= 1.05 * naive.samples.real.var()
