"""Trajectories of the small-noise diffusion, its limit ODE and first-order process."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from . import rng
from .coeff import CoefficientFn, ModelSpec, coefficient
from .ode import IntegrationError, rk4

__all__ = [
    "TimeGrid",
    "Trajectory",
    "LimitPath",
    "solve_limit_ode",
    "simulate_sde",
    "simulate_paths",
    "euler_paths",
    "simulate_first_order",
    "first_order_paths",
    "simulate_alternative",
    "alternative_paths",
    "alternative_drift",
    "limit_ode_alternative",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

DEFAULT_STEPS = 10_000

Scaling = Literal["local", "chisq", "fixed_drift"]


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int = DEFAULT_STEPS

    def __post_init__(self):
        if self.n_steps < 2:
            raise ValueError("n_steps must be at least 2")
        if not self.T > 0:
            raise ValueError("T must be positive")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True, eq=False)
class Trajectory:
    grid: TimeGrid
    values: np.ndarray
    seed: int | None = None
    model_hash: str | None = None

    def __post_init__(self):
        if len(self.values) != self.grid.n_steps + 1:
            raise ValueError(
                f"trajectory has {len(self.values)} values, grid needs {self.grid.n_steps + 1}"
            )

    @property
    def t(self) -> np.ndarray:
        return self.grid.t

    @property
    def x0(self) -> float:
        return float(self.values[0])


@dataclass(frozen=True, eq=False)
class LimitPath:
    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    @property
    def x_T(self) -> float:
        return float(self.values[-1])


def _as_fn(f: CoefficientFn) -> Callable:
    g = f.compile()
    return lambda x: g(x)


def solve_limit_ode(spec: ModelSpec, grid: TimeGrid) -> LimitPath:
    """RK4 solution of ``dx/dt = S0(x)``, ``x(0) = x0`` on the grid nodes."""
    s0 = _as_fn(spec.trend)
    values = rk4(lambda _t, x: s0(x) + 0.0 * x, spec.x0, grid.T, grid.n_steps)
    return LimitPath(grid, values)


def limit_ode_alternative(spec: ModelSpec, h: CoefficientFn, grid: TimeGrid) -> LimitPath:
    """RK4 solution of ``dx/dt = S0(x) + eps * sigma(x)^2 h(x) / S0(x)``."""
    drift = alternative_drift(spec, coefficient(h), "local")
    values = rk4(lambda _t, x: drift(x) + 0.0 * x, spec.x0, grid.T, grid.n_steps)
    return LimitPath(grid, values)


def euler_paths(
    drift: Callable,
    diffusion: Callable,
    x0: float,
    grid: TimeGrid,
    epsilon: float,
    xi: np.ndarray,
) -> np.ndarray:
    """Euler-Maruyama recursion driven by standard normals ``xi`` of shape ``(k, n_steps)``.

    ``X[i+1] = X[i] + drift(X[i]) dt + eps * diffusion(X[i]) * sqrt(dt) * xi[:, i]``
    """
    xi = np.atleast_2d(xi)
    k, n = xi.shape
    if n != grid.n_steps:
        raise ValueError("noise length does not match the grid")
    dt = grid.dt
    scale = epsilon * np.sqrt(dt)
    out = np.empty((k, n + 1))
    x = np.full(k, float(x0))
    out[:, 0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n):
            x = x + drift(x) * dt + scale * diffusion(x) * xi[:, i]
            out[:, i + 1] = x
    if not np.all(np.isfinite(out)):
        bad = int(np.min(np.nonzero(~np.isfinite(out))[1]))
        raise IntegrationError("non-finite state", bad * dt)
    return out


def simulate_paths(spec: ModelSpec, grid: TimeGrid, seed: int, streams) -> np.ndarray:
    """Null-model paths for replications ``streams`` (rows in the same order)."""
    xi = rng.normal_block(seed, streams, grid.n_steps)
    return euler_paths(_as_fn(spec.trend), _as_fn(spec.diffusion), spec.x0, grid, spec.epsilon, xi)


def simulate_sde(spec: ModelSpec, grid: TimeGrid, seed: int, stream: int = 0) -> Trajectory:
    """Euler-Maruyama trajectory of the null model; deterministic in ``(spec, grid, seed, stream)``."""
    values = simulate_paths(spec, grid, seed, [stream])[0]
    return Trajectory(grid, values, seed, spec.fingerprint())


def first_order_paths(spec: ModelSpec, grid: TimeGrid, xi: np.ndarray) -> np.ndarray:
    """Euler scheme for ``dx1 = S0'(x_t) x1 dt + sigma(x_t) dW``, ``x1(0) = 0``."""
    xi = np.atleast_2d(xi)
    limit = solve_limit_ode(spec, grid).values
    ds = np.broadcast_to(spec.trend.derivative("x")(limit), limit.shape)
    sig = np.broadcast_to(spec.diffusion(limit), limit.shape)
    dt = grid.dt
    out = np.zeros((xi.shape[0], grid.n_steps + 1))
    y = out[:, 0].copy()
    for i in range(grid.n_steps):
        y = y + ds[i] * y * dt + sig[i] * np.sqrt(dt) * xi[:, i]
        out[:, i + 1] = y
    return out


def simulate_first_order(spec: ModelSpec, grid: TimeGrid, seed: int, stream: int = 0) -> np.ndarray:
    """First-order (Gaussian) process on the grid, sharing the noise of ``simulate_sde``."""
    return first_order_paths(spec, grid, rng.normals(seed, stream, grid.n_steps))[0]


def alternative_drift(spec: ModelSpec, h: CoefficientFn, scaling: Scaling) -> Callable:
    """Perturbed drift for the three alternative families.

    * ``local``:  ``S0 + eps * h * sigma^2 / S0``
    * ``chisq``: ``S0 + eps * h * sigma``
    * ``fixed_drift``: ``S0 + h`` (a non-vanishing perturbation)
    """
    s0 = _as_fn(spec.trend)
    h = coefficient(h)
    if h.is_constant and float(h(0.0)) == 0.0:
        return s0
    hf = _as_fn(h)
    sig = _as_fn(spec.diffusion)
    eps = spec.epsilon
    if scaling == "local":
        def drift(x):
            s = s0(x)
            return s + eps * hf(x) * sig(x) ** 2 / s
    elif scaling == "chisq":
        def drift(x):
            return s0(x) + eps * hf(x) * sig(x)
    elif scaling == "fixed_drift":
        def drift(x):
            return s0(x) + hf(x)
    else:
        raise ValueError(f"unknown scaling {scaling!r}")
    return drift


def alternative_paths(
    spec: ModelSpec, h: CoefficientFn, grid: TimeGrid, seed: int, streams, scaling: Scaling
) -> np.ndarray:
    xi = rng.normal_block(seed, streams, grid.n_steps)
    drift = alternative_drift(spec, h, scaling)
    return euler_paths(drift, _as_fn(spec.diffusion), spec.x0, grid, spec.epsilon, xi)


def simulate_alternative(
    spec: ModelSpec,
    h: CoefficientFn,
    grid: TimeGrid,
    seed: int,
    scaling: Scaling = "local",
    stream: int = 0,
) -> Trajectory:
    """Trajectory under a perturbed drift; ``h = 0`` reproduces :func:`simulate_sde` exactly."""
    values = alternative_paths(spec, h, grid, seed, [stream], scaling)[0]
    return Trajectory(grid, values, seed, spec.fingerprint())


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x"])
        for t, x in zip(traj.t, traj.values):
            w.writerow([f"{t:.17g}", f"{x:.17g}"])


def read_trajectory_csv(path) -> Trajectory:
    """Read a ``t,x`` CSV; the time nodes must be uniform and start at 0."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["t", "x"]:
            raise ValueError(f"expected header 't,x', got {','.join(header)!r}")
        rows = [(float(a), float(b)) for a, b in reader]
    t = np.array([r[0] for r in rows])
    x = np.array([r[1] for r in rows])
    if len(t) < 3 or t[0] != 0.0:
        raise ValueError("trajectory must have at least 3 nodes starting at t=0")
    grid = TimeGrid(float(t[-1]), len(t) - 1)
    if not np.allclose(t, grid.t, rtol=0, atol=1e-9 * max(1.0, grid.T)):
        raise ValueError("trajectory time nodes are not uniform")
    return Trajectory(grid, x)
