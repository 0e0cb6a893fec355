import numpy as np
import pytest
from scipy import stats

from smallnoise.coeff import ModelSpec, RegularityError
from smallnoise.localtime import (
    LocalTimeCurve,
    SpaceGrid,
    auto_bins,
    bandwidth_rule,
    eta_process,
    local_time_occupation,
    local_time_tanaka,
    localtime_batch_values,
    localtime_values,
    occupation_lambda,
    stat_localtime,
    tanaka_lambda,
    tanaka_resolution,
    write_local_time_csv,
)
from smallnoise.simulate import TimeGrid, Trajectory, simulate_paths, simulate_sde, solve_limit_ode

GRID = TimeGrid(1.0, 10_000)
SPEC_A = ModelSpec("2+sin(x)", "1", 0.0, 1.0, 0.01)
SPEC_B = ModelSpec("1+0.5*x", "0.5+0.2*x", 0.0, 1.0, 0.01)


@pytest.fixture(scope="module")
def paths_b():
    return simulate_paths(SPEC_B, GRID, 77, np.arange(1000))


def test_constant_path():
    spec = ModelSpec("1", "2", 0.5, 3.0, 0.1)
    g = TimeGrid(3.0, 300)
    X = np.full(g.n_steps + 1, 0.5)
    nu = 0.05
    lam = occupation_lambda(X, 4.0, g.dt, spec.epsilon, np.array([0.5, 2.0]), nu)
    assert lam[0] == pytest.approx(spec.epsilon**2 * 3.0 * 4.0 / (2 * nu), rel=1e-12)
    assert lam[1] == 0.0


def test_tanaka_telescopes_outside_range():
    g = TimeGrid(1.0, 100)
    X = 1.0 + 2.0 * g.t  # increasing, drift only
    out = tanaka_lambda(X, np.array([-1.0, 0.5, 3.5, 10.0]))
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


def test_tanaka_matches_direct_sum():
    tr = simulate_sde(ModelSpec("1", "1", 0.0, 1.0, 0.1), TimeGrid(1.0, 2000), 4)
    X = tr.values
    pts = np.array([0.2, 0.5, 0.8, float(X[5])])
    direct = [abs(X[-1] - x) - abs(X[0] - x) - np.sum(np.sign(X[:-1] - x) * np.diff(X)) for x in pts]
    np.testing.assert_allclose(tanaka_lambda(X, pts), direct, rtol=1e-10, atol=1e-14)


def test_deterministic_limit():
    # Lambda / eps^2 -> sigma^2 / S0 = 1/2, away from the ends
    spec = ModelSpec("2", "1", 0.0, 1.0, 0.005)
    tr = simulate_sde(spec, TimeGrid(1.0, 20_000), 1)
    lt = local_time_occupation(tr, spec, SpaceGrid(0.0, 2.0, 400), nu=0.01)
    inner = (lt.x > 0.1) & (lt.x < 1.9)
    rel = lt.lam[inner] / spec.epsilon**2 / 0.5 - 1
    assert np.max(np.abs(rel)) < 0.10


def test_occupation_density_identity():
    spec = ModelSpec("2+sin(x)", "1+0.2*cos(x)", 0.0, 1.0, 0.05)
    g = TimeGrid(1.0, 20_000)
    X = simulate_sde(spec, g, 3).values
    sg = SpaceGrid(X.min() - 0.2, X.max() + 0.2, 4000)
    lt = local_time_occupation(Trajectory(g, X), spec, sg, nu=0.005)
    dens = lt.lam / (spec.epsilon**2 * spec.diffusion(sg.points) ** 2)
    assert np.all(lt.lam >= 0)
    assert np.trapezoid(dens, sg.points) == pytest.approx(1.0, rel=0.02)
    for f in (lambda x: x, lambda x: x * x):
        lhs = np.trapezoid(f(X), dx=g.dt)
        assert np.trapezoid(f(sg.points) * dens, sg.points) == pytest.approx(lhs, rel=0.02)


def _smoothed(values, lo, hi, nu, step=1e-4):
    fine = np.arange(lo - nu, hi + nu + step / 2, step)
    t = tanaka_lambda(values, fine)
    cs = np.concatenate([[0.0], np.cumsum(0.5 * (t[1:] + t[:-1]) * step)])
    k = int(round(nu / step))
    idx = np.arange(k, len(fine) - k, 50)
    return fine[idx], (cs[idx + k] - cs[idx - k]) / (2 * nu)


@pytest.mark.parametrize("n_steps, ok", [(400_000, True), (20_000, False)])
def test_tanaka_agrees_with_occupation_when_resolved(n_steps, ok):
    # The discrete Tanaka sum also collects the drift's S0^2 dt per step, so it
    # is only consistent when S0^2 dt / (eps sigma)^2 is small.
    spec = ModelSpec("1", "1", 0.0, 1.0, 0.01)
    tr = simulate_sde(spec, TimeGrid(1.0, n_steps), 5)
    nu = 0.02
    pts, smooth = _smoothed(tr.values, 0.1, 0.9, nu)
    occ = occupation_lambda(tr.values, 1.0, tr.grid.dt, spec.epsilon, pts, nu)
    gap = np.max(np.abs(smooth - occ) / occ)
    assert (gap < 0.15) == ok
    assert (tanaka_resolution(tr, spec) <= 0.025) == ok


def test_eta_vanishes_for_exact_limit():
    lim = solve_limit_ode(SPEC_B, GRID)
    sg = SpaceGrid.for_limit(lim, 300)
    p = sg.points
    lam = SPEC_B.epsilon**2 * SPEC_B.diffusion(p) ** 2 / SPEC_B.trend(p)
    lt = LocalTimeCurve(sg, lam)
    _, eta = eta_process(lt, SPEC_B, lim)
    np.testing.assert_allclose(eta, 0.0, atol=1e-12)
    assert stat_localtime(lt, SPEC_B, lim) == pytest.approx(0.0, abs=1e-20)


def test_eta_starts_at_zero(paths_b):
    lim = solve_limit_ode(SPEC_B, GRID)
    sg = SpaceGrid.for_limit(lim, 500)
    lt = local_time_occupation(Trajectory(GRID, paths_b[0]), SPEC_B, sg)
    p, eta = eta_process(lt, SPEC_B, lim)
    assert p[0] == SPEC_B.x0 and eta[0] == 0.0


def test_eta_interior_is_gaussian(paths_b):
    # eta(x) ~ N(0, g(x)) with g(x) = int sigma^2/S0^3. At x_T itself eta is
    # one-sided (the time spent in [x0, x_T] never exceeds T), so test mid-range.
    lim = solve_limit_ode(SPEC_B, GRID)
    sg = SpaceGrid.for_limit(lim, auto_bins(lim, SPEC_B.epsilon))
    rows = []
    for row in paths_b:
        p, eta = eta_process(local_time_occupation(Trajectory(GRID, row), SPEC_B, sg), SPEC_B, lim)
        rows.append(eta)
    E = np.array(rows)
    k = len(p) // 2
    w = SPEC_B.diffusion(p) ** 2 / SPEC_B.trend(p) ** 3
    z = E[:, k] / np.sqrt(np.trapezoid(w[: k + 1], p[: k + 1]))
    assert stats.kstest(z, "norm").statistic < 0.08
    assert np.all(E[:, -1] > -1e-9)


def test_residual_is_spatially_white(paths_b):
    lim = solve_limit_ode(SPEC_B, GRID)
    sg = SpaceGrid.for_limit(lim, 1000)
    p = sg.points
    i, j = 300, 600  # 300 cells apart, nu is one cell
    r = []
    for row in paths_b:
        lt = local_time_occupation(Trajectory(GRID, row), SPEC_B, sg)
        dens = lt.lam[[i, j]] / (SPEC_B.epsilon**2 * SPEC_B.diffusion(p[[i, j]]) ** 2)
        r.append((dens - 1 / SPEC_B.trend(p[[i, j]])) / SPEC_B.epsilon)
    r = np.array(r)
    assert abs(np.corrcoef(r[:, 0], r[:, 1])[0, 1]) < 0.1


def test_statistic_null_law(paths_b, int_sq_reference):
    v_b = localtime_batch_values(paths_b, SPEC_B, GRID)
    v_a = localtime_batch_values(simulate_paths(SPEC_A, GRID, 78, np.arange(1000)), SPEC_A, GRID)
    assert stats.ks_2samp(v_b, int_sq_reference).statistic < 0.08
    assert stats.ks_2samp(v_a, int_sq_reference).statistic < 0.08
    assert stats.ks_2samp(v_a, v_b).statistic < 0.08


def test_batch_matches_single_path(paths_b):
    lim = solve_limit_ode(SPEC_B, GRID)
    sg = SpaceGrid.for_limit(lim, auto_bins(lim, SPEC_B.epsilon))
    lt = local_time_occupation(Trajectory(GRID, paths_b[3]), SPEC_B, sg)
    single = stat_localtime(lt, SPEC_B, lim)
    assert localtime_batch_values(paths_b[3], SPEC_B, GRID)[0] == pytest.approx(single, rel=1e-12)


def test_bandwidth_and_bins():
    lim = solve_limit_ode(SPEC_B, GRID)
    assert auto_bins(lim, 1.0) == 200
    assert auto_bins(lim, 0.001) > 1000
    sg = SpaceGrid(0.0, 1.0, 10)
    assert bandwidth_rule(np.zeros(5), sg) == pytest.approx(0.1)
    assert bandwidth_rule(np.array([0.0, 1.0, 0.0]), sg) == pytest.approx(2.0)


def test_nonpositive_trend_rejected():
    spec = ModelSpec("x", "1", 0.0, 1.0, 0.1)
    p = np.linspace(0.0, 1.0, 11)
    with pytest.raises(RegularityError):
        localtime_values(p, np.ones_like(p), spec)


def test_csv(tmp_path):
    tr = simulate_sde(SPEC_A, TimeGrid(1.0, 500), 2)
    lt = local_time_tanaka(tr, SpaceGrid(0.0, 2.0, 20))
    write_local_time_csv(lt, tmp_path / "lt.csv")
    data = np.loadtxt(tmp_path / "lt.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 1], lt.lam)
