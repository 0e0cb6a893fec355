import numpy as np
import pytest

from smallnoise import rng
from smallnoise.coeff import ModelSpec
from smallnoise.ode import IntegrationError, rk4
from smallnoise.quadrature import trapezoid, cumulative_trapezoid
from smallnoise.simulate import (
    TimeGrid,
    Trajectory,
    alternative_paths,
    euler_paths,
    first_order_paths,
    limit_ode_alternative,
    read_trajectory_csv,
    simulate_alternative,
    simulate_first_order,
    simulate_paths,
    simulate_sde,
    solve_limit_ode,
    write_trajectory_csv,
)


def test_limit_ode_examples():
    g = TimeGrid(1.0, 100)
    x = solve_limit_ode(ModelSpec("1", "1", 0.0, 1.0, 0.1), g).values
    assert np.allclose(x, g.t, atol=1e-14)
    x = solve_limit_ode(ModelSpec("x", "1", 1.0, 1.0, 0.1), TimeGrid(1.0, 1000))
    assert abs(x.x_T - np.e) < 1e-9
    x = solve_limit_ode(ModelSpec("2+sin(x)", "1", 0.0, 1.0, 0.1), g).values
    assert np.all(np.diff(x) > 0)


def test_rk4_order_four():
    errs = [abs(rk4(lambda t, y: -y * y, 1.0, 1.0, n)[-1] - 0.5) for n in (10, 20)]
    assert errs[0] / errs[1] > 14


def test_rk4_blow_up_reports_time():
    with pytest.raises(IntegrationError) as info:
        rk4(lambda t, y: y * y, 1.0, 2.0, 2000)
    assert 0.9 < info.value.t < 1.1


def test_zero_noise_is_euler_limit():
    spec = ModelSpec("2+sin(x)", "1", 0.0, 1.0, 0.0)
    g = TimeGrid(1.0, 200)
    X = simulate_sde(spec, g, seed=1).values
    x = np.empty(g.n_steps + 1)
    x[0] = 0.0
    for i in range(g.n_steps):
        x[i + 1] = x[i] + (2 + np.sin(x[i])) * g.dt
    assert np.array_equal(X, x)


def test_pure_noise_terminal_law():
    spec = ModelSpec("0", "1", 0.0, 1.0, 0.1)
    g = TimeGrid(1.0, 200)
    XT = simulate_paths(spec, g, 3, np.arange(2000))[:, -1] / spec.epsilon
    assert abs(XT.mean()) < 3 * np.sqrt(1.0 / 2000)
    assert abs(XT.var() - 1.0) < 0.1


def test_determinism():
    spec = ModelSpec("2+sin(x)", "1", 0.0, 1.0, 0.05)
    g = TimeGrid(1.0, 500)
    a = simulate_sde(spec, g, 11, stream=4).values
    b = simulate_sde(spec, g, 11, stream=4).values
    assert np.array_equal(a, b)
    # a path does not depend on which batch it was simulated in
    batch = simulate_paths(spec, g, 11, [2, 3, 4])
    assert np.array_equal(batch[2], a)
    assert not np.array_equal(simulate_sde(spec, g, 12, stream=4).values, a)


def test_noise_independent_of_thread_count():
    f = lambda idx: rng.normal_block(5, idx, 16)  # noqa: E731
    one = rng.run_replications(f, 1000, threads=1, chunk=64)
    many = rng.run_replications(f, 1000, threads=4, chunk=64)
    assert np.array_equal(one, many)
    assert np.array_equal(one[17], rng.normals(5, 17, 16))


def test_first_order_examples():
    g = TimeGrid(1.0, 500)
    x1 = simulate_first_order(ModelSpec("2+sin(x)", "0", 0.0, 1.0, 0.1), g, 1)
    assert np.all(x1 == 0)
    xi = rng.normal_block(2, np.arange(2000), g.n_steps)
    x1 = first_order_paths(ModelSpec("1", "1", 0.0, 1.0, 0.1), g, xi)
    assert abs(x1[:, -1].var() - 1.0) < 0.1


def _explicit_gap(n, xi_fine, spec):
    k = xi_fine.shape[1] // n
    xi = xi_fine.reshape(len(xi_fine), n, k).sum(axis=2) / np.sqrt(k)
    g = TimeGrid(1.0, n)
    x1 = first_order_paths(spec, g, xi)
    x = solve_limit_ode(spec, g).values
    s0 = 2 + np.sin(x)
    integral = np.concatenate([np.zeros((len(xi), 1)), np.cumsum(np.sqrt(g.dt) * xi / s0[:-1], axis=1)], axis=1)
    return np.mean(np.max(np.abs(x1 - s0 * integral), axis=1))


def test_first_order_explicit_form_converges():
    spec = ModelSpec("2+sin(x)", "1", 0.0, 1.0, 0.1)
    xi = rng.normal_block(4, np.arange(200), 1024)
    gaps = [_explicit_gap(n, xi, spec) for n in (64, 128, 256)]
    assert gaps[1] < 0.75 * gaps[0] and gaps[2] < 0.75 * gaps[1]


def test_strong_order_linear_model():
    xi = rng.normal_block(6, np.arange(500), 4096)
    ref = euler_paths(lambda x: x, lambda x: 1.0 + 0 * x, 1.0, TimeGrid(1.0, 4096), 0.5, xi)[:, -1]
    errs = []
    for n in (16, 32, 64, 128):
        k = 4096 // n
        xc = xi.reshape(500, n, k).sum(axis=2) / np.sqrt(k)
        XT = euler_paths(lambda x: x, lambda x: 1.0 + 0 * x, 1.0, TimeGrid(1.0, n), 0.5, xc)[:, -1]
        errs.append(np.sqrt(np.mean((XT - ref) ** 2)))
    slope = -np.polyfit(np.log([16, 32, 64, 128]), np.log(errs), 1)[0]
    assert slope >= 0.5


def test_deviation_probability_decreases():
    g = TimeGrid(1.0, 1000)
    probs = []
    for eps in (0.2, 0.1, 0.02):
        spec = ModelSpec("2+sin(x)", "1", 0.0, 1.0, eps)
        X = simulate_paths(spec, g, 8, np.arange(1000))
        x = solve_limit_ode(spec, g).values
        probs.append(np.mean(np.max(np.abs(X - x), axis=1) > 0.1))
    assert probs[0] > probs[1] > probs[2]
    assert probs[2] < 0.01


def test_alternative_null_is_bit_exact():
    spec = ModelSpec("2+sin(x)", "1", 0.0, 1.0, 0.05)
    g = TimeGrid(1.0, 300)
    for scaling in ("local", "chisq", "fixed_drift"):
        assert np.array_equal(simulate_alternative(spec, "0", g, 3, scaling, 2).values, simulate_sde(spec, g, 3, 2).values)


@pytest.mark.parametrize("scaling", ["local", "chisq"])
def test_alternative_terminal_mean(scaling):
    spec = ModelSpec("1", "1", 0.0, 1.0, 0.05)
    X = alternative_paths(spec, "1", TimeGrid(1.0, 200), 9, np.arange(2000), scaling)
    se = spec.epsilon / np.sqrt(2000)
    assert abs(X[:, -1].mean() - (1 + spec.epsilon)) < 3 * se


def test_alternative_limit_derivative():
    g = TimeGrid(1.0, 2000)
    eps = 1e-3
    spec = ModelSpec("1", "1", 0.0, 1.0, eps)
    xh = limit_ode_alternative(spec, "1", g).values
    assert np.allclose((xh - g.t) / eps, g.t, atol=1e-9)
    spec = ModelSpec("2+sin(x)", "0.5+0.1*x^2", 0.0, 1.0, eps)
    x = solve_limit_ode(spec, g).values
    xh = limit_ode_alternative(spec, "1", g).values
    s0, sig = 2 + np.sin(x), 0.5 + 0.1 * x**2
    target = s0 * cumulative_trapezoid(sig**2 / s0**2, g.dt)
    gap = np.abs((xh - x) / eps - target)[1:] / target[1:]
    assert gap.max() < 0.05
    assert np.array_equal(limit_ode_alternative(spec, "0", g).values, x)


def test_trajectory_csv_round_trip(tmp_path):
    spec = ModelSpec("2+sin(x)", "1", 0.0, 1.0, 0.05)
    traj = simulate_sde(spec, TimeGrid(1.0, 50), 1)
    path = tmp_path / "x.csv"
    write_trajectory_csv(traj, path)
    back = read_trajectory_csv(path)
    assert np.array_equal(back.values, traj.values)
    assert back.grid == traj.grid
    path.write_text("t,x\n0,0\n0.3,1\n1,2\n")
    with pytest.raises(ValueError, match="uniform"):
        read_trajectory_csv(path)


def test_quadrature_oracles():
    g = TimeGrid(1.0, 1000)
    assert trapezoid(g.t**2, g.dt) == pytest.approx(1 / 3, abs=1e-6)
    c = cumulative_trapezoid(np.ones(11), 0.1)
    assert c[0] == 0 and np.allclose(c, np.linspace(0, 1, 11))


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(TimeGrid(1.0, 10), np.zeros(5))
