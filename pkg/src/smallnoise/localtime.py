"""Local time of the observed diffusion and the local-time C-vM statistic.

Two estimators of ``Lambda_T(x)`` are provided:

* occupation (box kernel of half-width ``nu``)::

      Lambda_T(x) ~ eps^2 / (2 nu) int_0^T 1{|X_t - x| <= nu} sigma(X_t)^2 dt

* Tanaka-Meyer, with a left-point Ito sum and ``sgn(0) = 0``::

      Lambda_T(x) = |X_T - x| - |x0 - x| - int_0^T sgn(X_t - x) dX_t

Normalised so that ``Lambda_T(x) / (eps^2 sigma(x)^2)`` is the occupation
density of the path, whose small-noise limit is ``1 / S0(x)`` on
``[x0, x_T]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .coeff import ModelSpec, RegularityError
from .quadrature import cumulative_trapezoid, trapezoid
from .simulate import LimitPath, TimeGrid, Trajectory, solve_limit_ode

__all__ = [
    "SpaceGrid",
    "LocalTimeCurve",
    "bandwidth_rule",
    "occupation_lambda",
    "tanaka_lambda",
    "local_time_occupation",
    "local_time_tanaka",
    "eta_process",
    "stat_localtime",
    "localtime_values",
    "write_local_time_csv",
    "auto_bins",
    "tanaka_resolution",
    "localtime_batch_values",
]

DEFAULT_BINS = 200


@dataclass(frozen=True)
class SpaceGrid:
    """``n_bins`` equal cells on ``[lo, hi]``; estimates live on the ``n_bins + 1`` cell edges."""

    lo: float
    hi: float
    n_bins: int = DEFAULT_BINS

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("need lo < hi")
        if self.n_bins < 2:
            raise ValueError("n_bins must be at least 2")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / self.n_bins

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_bins + 1)

    @property
    def midpoints(self) -> np.ndarray:
        p = self.points
        return 0.5 * (p[1:] + p[:-1])

    @classmethod
    def for_limit(cls, limit: LimitPath, n_bins: int = DEFAULT_BINS) -> "SpaceGrid":
        """Grid spanning exactly ``[x0, x_T]`` of a limit path."""
        return cls(float(limit.values[0]), float(limit.values[-1]), n_bins)


@dataclass(frozen=True, eq=False)
class LocalTimeCurve:
    grid: SpaceGrid
    lam: np.ndarray
    bandwidth: float | None = None

    @property
    def x(self) -> np.ndarray:
        return self.grid.points


def bandwidth_rule(values, grid: SpaceGrid) -> float:
    """``nu = max(2 * mean |dX|, (hi - lo) / n_bins)``."""
    inc = float(np.mean(np.abs(np.diff(np.asarray(values, dtype=float)))))
    return max(2.0 * inc, grid.h)


def _time_weights(n: int, dt: float) -> np.ndarray:
    w = np.full(n, dt)
    w[0] = w[-1] = dt / 2
    return w


def occupation_lambda(X, sigma2_path, dt: float, epsilon: float, points, nu: float) -> np.ndarray:
    """Box-kernel occupation estimate at ``points`` for one path."""
    if not nu > 0:
        raise ValueError("nu must be positive")
    X = np.asarray(X, dtype=float)
    v = _time_weights(len(X), dt) * np.broadcast_to(sigma2_path, X.shape)
    order = np.argsort(X, kind="stable")
    xs = X[order]
    cs = np.concatenate([[0.0], np.cumsum(v[order])])
    lo = np.searchsorted(xs, points - nu, side="left")
    hi = np.searchsorted(xs, points + nu, side="right")
    return epsilon**2 / (2.0 * nu) * (cs[hi] - cs[lo])


def tanaka_lambda(X, points) -> np.ndarray:
    """Tanaka-Meyer estimate at ``points`` for one path (sorting trick, O(n log n))."""
    X = np.asarray(X, dtype=float)
    left, dX = X[:-1], np.diff(X)
    order = np.argsort(left, kind="stable")
    xs = left[order]
    cs = np.concatenate([[0.0], np.cumsum(dX[order])])
    below = cs[np.searchsorted(xs, points, side="left")]
    above = cs[-1] - cs[np.searchsorted(xs, points, side="right")]
    ito = above - below
    return np.abs(X[-1] - points) - np.abs(X[0] - points) - ito


def local_time_occupation(
    traj: Trajectory, spec: ModelSpec, grid: SpaceGrid, nu: float | None = None
) -> LocalTimeCurve:
    if nu is None:
        nu = bandwidth_rule(traj.values, grid)
    sig2 = np.asarray(spec.diffusion(traj.values), dtype=float) ** 2
    lam = occupation_lambda(traj.values, sig2, traj.grid.dt, spec.epsilon, grid.points, nu)
    return LocalTimeCurve(grid, lam, nu)


def tanaka_resolution(traj: Trajectory, spec: ModelSpec) -> float:
    """``max S0(X)^2 dt / (eps sigma(X))^2``.

    The discrete Tanaka sum picks up the quadratic variation of the drift
    part, ``S0^2 dt`` per step, against ``eps^2 sigma^2 dt`` from the noise;
    the estimate is only trustworthy when this ratio is small.
    """
    X = traj.values
    s0 = np.broadcast_to(np.asarray(spec.trend(X), dtype=float), X.shape)
    sig2 = np.broadcast_to(np.asarray(spec.diffusion(X), dtype=float), X.shape) ** 2
    return float(np.max(s0 * s0 * traj.grid.dt / (spec.epsilon**2 * sig2)))


def local_time_tanaka(traj: Trajectory, grid: SpaceGrid) -> LocalTimeCurve:
    return LocalTimeCurve(grid, tanaka_lambda(traj.values, grid.points))


def _on_range(lt: LocalTimeCurve, limit: LimitPath):
    x0, xT = float(limit.values[0]), float(limit.values[-1])
    p = lt.x
    tol = 1e-9 * max(1.0, abs(xT - x0))
    keep = (p >= x0 - tol) & (p <= xT + tol)
    if keep.sum() < 2:
        raise ValueError("space grid does not cover [x0, x_T]")
    return p[keep], lt.lam[..., keep]


def _space_weights(spec: ModelSpec, p):
    s0 = np.broadcast_to(np.asarray(spec.trend(p), dtype=float), p.shape)
    sig2 = np.broadcast_to(np.asarray(spec.diffusion(p), dtype=float), p.shape) ** 2
    if np.any(s0 <= 0):
        x = float(p[np.argmax(s0 <= 0)])
        raise RegularityError(f"trend S0 is not positive at x={x:.6g}", x)
    if np.any(sig2 <= 0):
        x = float(p[np.argmax(sig2 <= 0)])
        raise RegularityError(f"sigma vanishes at x={x:.6g}", x)
    return s0, sig2


def _eta(p, lam, spec: ModelSpec):
    s0, sig2 = _space_weights(spec, p)
    eps = spec.epsilon
    integrand = 1.0 / s0 - lam / (eps**2 * sig2)
    h = p[1] - p[0]
    return cumulative_trapezoid(integrand, h) / eps, s0, sig2, h


def eta_process(lt: LocalTimeCurve, spec: ModelSpec, limit: LimitPath):
    """``eta(x) = eps^-1 int_x0^x (1/S0(y) - Lambda(y)/(eps^2 sigma(y)^2)) dy`` on ``[x0, x_T]``.

    Returns ``(points, eta)``.
    """
    p, lam = _on_range(lt, limit)
    eta, *_ = _eta(p, lam, spec)
    return p, eta


def localtime_values(p, lam, spec: ModelSpec) -> np.ndarray:
    """Statistic from local-time values ``lam`` (rows for a batch) on space nodes ``p``."""
    eta, s0, sig2, h = _eta(p, np.asarray(lam, dtype=float), spec)
    wgt = sig2 / s0**3
    g_T = float(trapezoid(wgt, h))
    return trapezoid(wgt * eta * eta, h) / g_T**2


def stat_localtime(lt: LocalTimeCurve, spec: ModelSpec, limit: LimitPath) -> float:
    """``(eps int w)^-2 int w(x) (int_x0^x (1/S0 - Lambda/(eps^2 sigma^2)) dy)^2 dx``, ``w = sigma^2/S0^3``."""
    p, lam = _on_range(lt, limit)
    return float(localtime_values(p, lam, spec))


def write_local_time_csv(lt: LocalTimeCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "lambda"])
        for x, v in zip(lt.x, lt.lam):
            w.writerow([f"{x:.17g}", f"{v:.17g}"])


def auto_bins(limit: LimitPath, epsilon: float) -> int:
    """``max(200, ceil(10 (x_T - x0) / eps))``.

    The box kernel biases the estimate within ``nu`` of ``x0`` by an amount
    that ``eta`` amplifies by ``1/eps``; tying the cell width to ``eps``
    keeps that bias small against the ``O(1)`` fluctuation.
    """
    span = abs(float(limit.values[-1]) - float(limit.values[0]))
    return max(DEFAULT_BINS, math.ceil(10.0 * span / epsilon))


def localtime_batch_values(values, spec: ModelSpec, grid: TimeGrid, n_bins: int | None = None, nu: float | None = None):
    """Local-time statistic (occupation estimator) for each row of ``values``."""
    X = np.atleast_2d(np.asarray(values, dtype=float))
    limit = solve_limit_ode(spec, grid)
    sg = SpaceGrid.for_limit(limit, n_bins or auto_bins(limit, spec.epsilon))
    p = sg.points
    lam = np.empty((len(X), len(p)))
    for k, row in enumerate(X):
        bw = bandwidth_rule(row, sg) if nu is None else nu
        sig2 = np.asarray(spec.diffusion(row), dtype=float) ** 2
        lam[k] = occupation_lambda(row, sig2, grid.dt, spec.epsilon, p, bw)
    return localtime_values(p, lam, spec)
