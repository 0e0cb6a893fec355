"""Partially observed linear system, Kalman-Bucy filter and innovation statistic.

Signal and observation::

    dY = A_t Y dt + eps B_t dV,      Y_0 = y0
    dX = C_t Y dt + eps sigma_t dW,  X_0 = 0

The filter is integrated in the eps-free form (``Gamma = gamma / eps^2``)::

    dM = A M dt + (C Gamma / sigma^2) [dX - C M dt],   M_0 = y0
    dGamma/dt = 2 A Gamma - C^2 Gamma^2 / sigma^2 + B^2,  Gamma_0 = 0
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import rng
from .coeff import CoefficientFn, RegularityError, coefficient
from .ode import IntegrationError, rk4
from .quadrature import cumulative_trapezoid, trapezoid
from .simulate import TimeGrid, Trajectory

__all__ = [
    "LinearSystemSpec",
    "FilterPath",
    "simulate_linear_system",
    "linear_system_paths",
    "riccati",
    "kalman_filter",
    "filter_means",
    "stat_kalman",
    "kalman_values",
    "load_linear_system",
]

TIME_VARS = ("t",)


def _curve(value) -> CoefficientFn:
    return coefficient(value, TIME_VARS)


@dataclass(frozen=True)
class LinearSystemSpec:
    A: CoefficientFn
    B: CoefficientFn
    C: CoefficientFn
    sigma: CoefficientFn
    y0: float
    epsilon: float
    T: float

    def __post_init__(self):
        for name in ("A", "B", "C", "sigma"):
            object.__setattr__(self, name, _curve(getattr(self, name)))
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be non-negative")

    def curves(self, t) -> dict[str, np.ndarray]:
        t = np.asarray(t, dtype=float)
        return {
            name: np.broadcast_to(np.asarray(getattr(self, name)(t), dtype=float), t.shape)
            for name in ("A", "B", "C", "sigma")
        }

    def validate(self, grid: TimeGrid) -> None:
        c = self.curves(np.linspace(0.0, self.T, 2 * grid.n_steps + 1))
        for name, v in c.items():
            if not np.all(np.isfinite(v)):
                raise RegularityError(f"coefficient {name} is not finite on [0, T]")
        if np.any(c["sigma"] ** 2 <= 0):
            t = float(np.linspace(0.0, self.T, 2 * grid.n_steps + 1)[np.argmax(c["sigma"] ** 2 <= 0)])
            raise RegularityError(f"sigma_t vanishes at t={t:.6g}", t)

    def to_dict(self) -> dict:
        return {
            "A": str(self.A),
            "B": str(self.B),
            "C": str(self.C),
            "sigma": str(self.sigma),
            "y0": self.y0,
            "epsilon": self.epsilon,
            "T": self.T,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LinearSystemSpec":
        missing = [k for k in ("A", "B", "C", "sigma", "y0", "epsilon", "T") if k not in d]
        if missing:
            raise KeyError(f"linear-system config is missing field(s): {', '.join(missing)}")
        return cls(d["A"], d["B"], d["C"], d["sigma"], float(d["y0"]), float(d["epsilon"]), float(d["T"]))


def load_linear_system(path) -> LinearSystemSpec:
    with open(path) as fh:
        return LinearSystemSpec.from_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class FilterPath:
    grid: TimeGrid
    M: np.ndarray
    Gamma: np.ndarray


def linear_system_paths(spec: LinearSystemSpec, grid: TimeGrid, seed: int, streams):
    """Joint Euler-Maruyama paths ``(X, Y)`` with independent noises (substreams 0 and 1)."""
    streams = np.atleast_1d(streams)
    xi_w = rng.normal_block(seed, streams, grid.n_steps, substream=0)
    xi_v = rng.normal_block(seed, streams, grid.n_steps, substream=1)
    c = spec.curves(grid.t)
    dt, sq = grid.dt, np.sqrt(grid.dt)
    k = len(streams)
    X = np.zeros((k, grid.n_steps + 1))
    Y = np.zeros((k, grid.n_steps + 1))
    Y[:, 0] = spec.y0
    eps = spec.epsilon
    for i in range(grid.n_steps):
        y = Y[:, i]
        Y[:, i + 1] = y + c["A"][i] * y * dt + eps * c["B"][i] * sq * xi_v[:, i]
        X[:, i + 1] = X[:, i] + c["C"][i] * y * dt + eps * c["sigma"][i] * sq * xi_w[:, i]
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise IntegrationError("non-finite state", float(grid.T))
    return X, Y


def simulate_linear_system(spec: LinearSystemSpec, grid: TimeGrid, seed: int, stream: int = 0):
    X, Y = linear_system_paths(spec, grid, seed, [stream])
    return Trajectory(grid, X[0], seed), Trajectory(grid, Y[0], seed)


def riccati(spec: LinearSystemSpec, grid: TimeGrid) -> np.ndarray:
    """Normalised error variance ``Gamma_t`` by RK4; raises on blow-up."""
    A, B, C, sig = (f.compile() for f in (spec.A, spec.B, spec.C, spec.sigma))

    def rhs(t, g):
        return 2 * A(t) * g - C(t) ** 2 * g * g / sig(t) ** 2 + B(t) ** 2

    try:
        return rk4(rhs, 0.0, grid.T, grid.n_steps)
    except IntegrationError as exc:
        raise IntegrationError("Riccati equation blew up", exc.t) from None


def filter_means(X, spec: LinearSystemSpec, grid: TimeGrid, Gamma: np.ndarray) -> np.ndarray:
    """Euler recursion for ``M`` driven by the Ito increments of ``X`` (rows = paths)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    c = spec.curves(grid.t)
    gain = c["C"] * Gamma / c["sigma"] ** 2
    dX = np.diff(X, axis=-1)
    dt = grid.dt
    M = np.empty_like(X)
    M[:, 0] = spec.y0
    m = M[:, 0].copy()
    for i in range(grid.n_steps):
        m = m + c["A"][i] * m * dt + gain[i] * (dX[:, i] - c["C"][i] * m * dt)
        M[:, i + 1] = m
    return M


def kalman_filter(X: Trajectory, spec: LinearSystemSpec) -> FilterPath:
    grid = X.grid
    spec.validate(grid)
    Gamma = riccati(spec, grid)
    M = filter_means(X.values, spec, grid, Gamma)[0]
    return FilterPath(grid, M, Gamma)


def kalman_values(X, M, spec: LinearSystemSpec, grid: TimeGrid) -> np.ndarray:
    """``(eps int sigma^2)^-2 int sigma_t^2 [X_t - int_0^t C M ds]^2 dt`` for rows of ``X``, ``M``."""
    c = spec.curves(grid.t)
    sig2 = c["sigma"] ** 2
    resid = np.asarray(X) - cumulative_trapezoid(c["C"] * np.asarray(M), grid.dt)
    norm = spec.epsilon * float(trapezoid(sig2, grid.dt))
    return trapezoid(sig2 * resid * resid, grid.dt) / norm**2


def stat_kalman(X: Trajectory, fp: FilterPath, spec: LinearSystemSpec) -> float:
    return float(kalman_values(X.values, fp.M, spec, X.grid))
