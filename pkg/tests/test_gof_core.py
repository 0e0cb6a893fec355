import math

import numpy as np
import pytest
from scipy import stats

from smallnoise.coeff import ModelSpec, RegularityError
from smallnoise.gof_core import (
    TestReport,
    cvm_integral_values,
    cvm_plugin_values,
    cvm_values,
    decide,
    degenerate_start_values,
    ks_plugin_values,
    ks_values,
    stat_cvm,
    stat_cvm_integral,
    stat_ks,
)
from smallnoise.refdist import Distribution, QuantileTable, functional_samples
from smallnoise.simulate import TimeGrid, Trajectory, simulate_paths, solve_limit_ode

SPEC = ModelSpec("2+sin(x)", "1", 0.0, 1.0, 0.02)
GRID = TimeGrid(1.0, 10_000)


@pytest.fixture(scope="module")
def null_paths():
    return simulate_paths(SPEC, GRID, 2024, np.arange(2000))


@pytest.fixture(scope="module")
def sup_reference():
    return functional_samples(Distribution.SUP_ABS, 40_000, seed=9_002)


def test_zero_residual_gives_zero():
    x = solve_limit_ode(SPEC, GRID).values
    for fn in (cvm_values, ks_values, cvm_plugin_values, ks_plugin_values):
        assert fn(x, SPEC, GRID) == 0.0
    assert degenerate_start_values(np.full(GRID.n_steps + 1, SPEC.x0), SPEC, GRID) == 0.0


def test_arithmetic_examples():
    spec = ModelSpec("1", "1", 0.0, 1.0, 0.1)
    g = TimeGrid(1.0, 100)
    X = g.t + spec.epsilon  # (X - x)/eps = 1
    value, diag = stat_cvm(Trajectory(g, X), spec)
    assert value == pytest.approx(1.0) and diag["u_T"] == pytest.approx(1.0)
    assert stat_ks(Trajectory(g, X), spec)[0] == pytest.approx(1.0)


def test_residual_scaling():
    x = solve_limit_ode(SPEC, GRID).values
    r = np.sin(3 * GRID.t) * SPEC.epsilon
    lam = 2.5
    assert cvm_values(x + lam * r, SPEC, GRID) == pytest.approx(lam**2 * cvm_values(x + r, SPEC, GRID), rel=1e-12)
    assert ks_values(x + lam * r, SPEC, GRID) == pytest.approx(lam * ks_values(x + r, SPEC, GRID), rel=1e-12)


def test_integral_variant_noiseless_euler():
    spec = SPEC.with_epsilon(0.0)
    X = np.empty(GRID.n_steps + 1)
    X[0] = 0.0
    for i in range(GRID.n_steps):
        X[i + 1] = X[i] + (2 + math.sin(X[i])) * GRID.dt
    # residual is the Euler-vs-trapezoid quadrature gap, O(dt)
    resid = X - (spec.x0 + np.concatenate([[0], np.cumsum(0.5 * GRID.dt * ((2 + np.sin(X[1:])) + (2 + np.sin(X[:-1]))))]))
    assert np.max(np.abs(resid)) < 1e-3
    value = cvm_integral_values(X, SPEC, GRID)
    assert value < 1e-2


def test_integral_variant_pure_noise_is_int_w2():
    spec = ModelSpec("0", "1", 0.0, 1.0, 0.1)
    g = TimeGrid(1.0, 1000)
    X = simulate_paths(spec, g, 5, np.arange(3))
    w = (X - spec.x0) / spec.epsilon
    expected = np.sum(0.5 * (w[:, 1:] ** 2 + w[:, :-1] ** 2), axis=1) * g.dt
    assert np.allclose(cvm_integral_values(X, spec, g), expected, rtol=1e-12)
    v, diag = stat_cvm_integral(Trajectory(g, X[0]), spec)
    assert diag["tau_T"] == pytest.approx(1.0) and diag["tau_T_limit"] == pytest.approx(1.0)


def test_positivity_error():
    with pytest.raises(RegularityError):
        cvm_values(np.zeros(GRID.n_steps + 1), ModelSpec("x-0.5", "1", 0.0, 1.0, 0.02), GRID)


@pytest.mark.parametrize(
    "fn,dist",
    [
        (cvm_values, "int"),
        (ks_values, "sup"),
        (cvm_plugin_values, "int"),
        (ks_plugin_values, "sup"),
        (cvm_integral_values, "int"),
    ],
)
def test_null_law(fn, dist, null_paths, int_sq_reference, sup_reference):
    values = fn(null_paths, SPEC, GRID)
    ref = int_sq_reference if dist == "int" else sup_reference
    assert stats.ks_2samp(values, ref).statistic < 0.05


def test_plugin_gap_shrinks_with_eps():
    gaps = []
    for eps in (0.1, 0.02, 0.004):
        spec = SPEC.with_epsilon(eps)
        X = simulate_paths(spec, GRID, 6, np.arange(200))
        gaps.append(np.median(np.abs(cvm_values(X, spec, GRID) - cvm_plugin_values(X, spec, GRID))))
    assert gaps[0] > gaps[1] > gaps[2]


def test_degenerate_start_law_and_scaling(int_sq_reference):
    spec = ModelSpec("0", "1", 0.0, 1.0, 0.05)
    g = TimeGrid(1.0, 2000)
    v1 = degenerate_start_values(simulate_paths(spec, g, 7, np.arange(2000)), spec, g)
    assert stats.ks_2samp(v1, int_sq_reference).statistic < 0.05
    spec2 = ModelSpec("0", "1", 0.0, 2.0, 0.05)
    g2 = TimeGrid(2.0, 2000)
    v2 = degenerate_start_values(simulate_paths(spec2, g2, 8, np.arange(2000)), spec2, g2)
    # t = T s: int_0^T (W_t / T)^2 dt = int_0^1 w_s^2 ds in law, for any T
    assert stats.ks_2samp(v2, int_sq_reference).statistic < 0.05


def test_decide_strict_inequality():
    table = QuantileTable("int-sq-wiener", (0.05,), (1.5,), 1, 1, 0)
    assert not decide(0.0, table, 0.05, "cvm").reject
    assert decide(math.inf, table, 0.05, "cvm").reject
    assert not decide(1.5, table, 0.05, "cvm").reject
    with pytest.raises(KeyError):
        decide(1.0, table, 0.1, "cvm")
    r = decide(math.inf, table, 0.05, "cvm")
    assert '"inf"' in r.to_json() and "REJECT" in r.summary()


def test_consistency_fixed_drift(int_sq_table):
    c = int_sq_table.critical_value(0.05)
    from smallnoise.simulate import alternative_paths

    rates = []
    for eps in (0.1, 0.05, 0.02):
        spec = SPEC.with_epsilon(eps)
        X = alternative_paths(spec, "0.5", TimeGrid(1.0, 2000), 3, np.arange(300), "fixed_drift")
        rates.append(np.mean(cvm_values(X, spec, TimeGrid(1.0, 2000)) > c))
    assert rates[0] <= rates[1] <= rates[2] and rates[2] > 0.95


def test_report_fields():
    r = TestReport("cvm", 0.3, 1.6, 0.05, False, {"u_T": 0.2})
    assert "accept" in r.summary()
