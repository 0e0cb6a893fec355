"""Cramer-von Mises and Kolmogorov-Smirnov type statistics for small-noise diffusions.

Every statistic works on a single :class:`~smallnoise.simulate.Trajectory`
or, through the ``*_values`` functions, on a batch of paths stored row-wise
in an array of shape ``(k, n_steps + 1)``.  Integrals are trapezoid sums on
the trajectory grid and suprema are maxima over the grid nodes.

Under the null hypothesis the C-vM statistics converge to
``int_0^1 w^2 dv`` and the K-S statistics to ``sup |w|``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .coeff import ModelSpec, RegularityError
from .quadrature import cumulative_trapezoid, trapezoid
from .refdist import QuantileTable
from .simulate import TimeGrid, Trajectory, solve_limit_ode

__all__ = [
    "TestReport",
    "stat_cvm",
    "stat_ks",
    "stat_cvm_plugin",
    "stat_ks_plugin",
    "stat_cvm_integral",
    "stat_degenerate_start",
    "cvm_values",
    "ks_values",
    "cvm_plugin_values",
    "ks_plugin_values",
    "cvm_integral_values",
    "degenerate_start_values",
    "decide",
]


@dataclass
class TestReport:
    statistic_name: str
    value: float
    threshold: float
    alpha: float
    reject: bool
    diagnostics: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def to_json(self) -> str:
        d = asdict(self)
        d["value"] = _json_float(self.value)
        return json.dumps(d, indent=2, sort_keys=True)

    def summary(self) -> str:
        verdict = "REJECT" if self.reject else "accept"
        return f"{self.statistic_name}: value={self.value:.6g} threshold={self.threshold:.6g} alpha={self.alpha:g} -> {verdict}"


def _json_float(v: float):
    return v if math.isfinite(v) else str(v)


def _positive(values, what: str, where) -> None:
    bad = np.asarray(values) <= 0
    if np.any(bad):
        idx = np.unravel_index(int(np.argmax(bad)), np.shape(bad))
        x = float(np.asarray(where)[idx]) if np.ndim(where) else float(where)
        raise RegularityError(f"{what} is not positive at x={x:.6g}", x)


def _full(f, x):
    return np.broadcast_to(np.asarray(f(x), dtype=float), np.shape(x))


def _limit(spec: ModelSpec, grid: TimeGrid) -> np.ndarray:
    return solve_limit_ode(spec, grid).values


def _limit_weights(spec: ModelSpec, grid: TimeGrid):
    x = _limit(spec, grid)
    s0 = _full(spec.trend, x)
    _positive(s0, "trend S0", x)
    sig2 = _full(spec.diffusion, x) ** 2
    u_T = float(trapezoid(sig2 / s0**2, grid.dt))
    return x, s0, sig2, u_T


# --------------------------------------------------------------------------
# batch versions


def cvm_values(values, spec: ModelSpec, grid: TimeGrid) -> np.ndarray:
    """``u_T^-2 int ((X - x)/(eps S0(x)^2))^2 sigma(x)^2 dt`` with ``u_T = int sigma^2/S0^2``."""
    x, s0, sig2, u_T = _limit_weights(spec, grid)
    r = (np.asarray(values) - x) / (spec.epsilon * s0**2)
    return trapezoid(r * r * sig2, grid.dt) / u_T**2


def ks_values(values, spec: ModelSpec, grid: TimeGrid) -> np.ndarray:
    """``u_T^-1/2 max_t |(X - x)/(eps S0(x))|``."""
    x, s0, _, u_T = _limit_weights(spec, grid)
    r = np.abs((np.asarray(values) - x) / (spec.epsilon * s0))
    return r.max(axis=-1) / math.sqrt(u_T)


def _plugin_parts(values, spec: ModelSpec, grid: TimeGrid):
    X = np.asarray(values, dtype=float)
    x = _limit(spec, grid)
    s0 = _full(spec.trend, X)
    _positive(s0, "trend S0", X)
    sig2 = _full(spec.diffusion, X) ** 2
    norm = trapezoid(sig2 / s0**2, grid.dt)
    return X, x, s0, sig2, norm


def cvm_plugin_values(values, spec: ModelSpec, grid: TimeGrid) -> np.ndarray:
    """C-vM statistic with ``S0`` and ``sigma`` evaluated along the observed path."""
    X, x, s0, sig2, norm = _plugin_parts(values, spec, grid)
    r = (X - x) / (spec.epsilon * s0**2)
    return trapezoid(r * r * sig2, grid.dt) / norm**2


def ks_plugin_values(values, spec: ModelSpec, grid: TimeGrid) -> np.ndarray:
    X, x, s0, _, norm = _plugin_parts(values, spec, grid)
    r = np.abs((X - x) / (spec.epsilon * s0))
    return r.max(axis=-1) / np.sqrt(norm)


def _integral_parts(values, spec: ModelSpec, grid: TimeGrid):
    X = np.asarray(values, dtype=float)
    x_hat = spec.x0 + cumulative_trapezoid(_full(spec.trend, X), grid.dt)
    sig2 = _full(spec.diffusion, X) ** 2
    tau = trapezoid(sig2, grid.dt)
    return X, x_hat, sig2, tau


def cvm_integral_values(values, spec: ModelSpec, grid: TimeGrid) -> np.ndarray:
    """``tau_T^-2 int sigma(X)^2 ((X - Xhat)/eps)^2 dt`` with ``Xhat = x0 + int S0(X) ds``.

    No ODE solve is needed: the centring path is computed from the data.
    """
    X, x_hat, sig2, tau = _integral_parts(values, spec, grid)
    r = (X - x_hat) / spec.epsilon
    return trapezoid(sig2 * r * r, grid.dt) / tau**2


def degenerate_start_values(values, spec: ModelSpec, grid: TimeGrid) -> np.ndarray:
    """Statistic for a null with ``S0(x0) = 0``: ``int ((X - x0)/(T eps sigma(x0)))^2 dt``."""
    sig0 = float(spec.diffusion(spec.x0))
    if sig0 == 0:
        raise RegularityError("sigma(x0) = 0", spec.x0)
    r = (np.asarray(values) - spec.x0) / (grid.T * spec.epsilon * sig0)
    return trapezoid(r * r, grid.dt)


# --------------------------------------------------------------------------
# single-trajectory API


def stat_cvm(traj: Trajectory, spec: ModelSpec):
    """C-vM type statistic against the limit path; returns ``(value, diagnostics)``."""
    _, _, _, u_T = _limit_weights(spec, traj.grid)
    return float(cvm_values(traj.values, spec, traj.grid)), {"u_T": u_T}


def stat_ks(traj: Trajectory, spec: ModelSpec):
    _, _, _, u_T = _limit_weights(spec, traj.grid)
    return float(ks_values(traj.values, spec, traj.grid)), {"u_T": u_T}


def stat_cvm_plugin(traj: Trajectory, spec: ModelSpec):
    *_, norm = _plugin_parts(traj.values, spec, traj.grid)
    return float(cvm_plugin_values(traj.values, spec, traj.grid)), {"u_T_plugin": float(norm)}


def stat_ks_plugin(traj: Trajectory, spec: ModelSpec):
    *_, norm = _plugin_parts(traj.values, spec, traj.grid)
    return float(ks_plugin_values(traj.values, spec, traj.grid)), {"u_T_plugin": float(norm)}


def stat_cvm_integral(traj: Trajectory, spec: ModelSpec):
    """Integral-centred C-vM statistic; diagnostics hold ``tau_T`` and its ODE limit."""
    *_, tau = _integral_parts(traj.values, spec, traj.grid)
    x = _limit(spec, traj.grid)
    tau0 = float(trapezoid(_full(spec.diffusion, x) ** 2, traj.grid.dt))
    value = float(cvm_integral_values(traj.values, spec, traj.grid))
    return value, {"tau_T": float(tau), "tau_T_limit": tau0}


def stat_degenerate_start(traj: Trajectory, spec: ModelSpec):
    return float(degenerate_start_values(traj.values, spec, traj.grid)), {}


def decide(value: float, table: QuantileTable, alpha: float, name: str, diagnostics=None) -> TestReport:
    """Reject iff ``value`` strictly exceeds the tabulated critical value."""
    threshold = table.critical_value(alpha)
    return TestReport(name, float(value), threshold, alpha, bool(value > threshold), dict(diagnostics or {}))
