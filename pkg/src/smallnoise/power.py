"""Monte Carlo power of the path statistics and the limit power of the C-vM test.

Alternatives perturb the null drift ``S0`` in one of three ways (see
:func:`smallnoise.simulate.alternative_drift`).  Under the ``local`` scaling
the C-vM statistic converges to

    int_0^1 [ int_0^v h_*(s) ds + w_v ]^2 dv,   h_*(s) = u_T^1/2 h(x(u_T s)),

where ``x(u)`` inverts the time change ``u(x) = int_x0^x sigma^2 / S0^3 dy``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import rng
from .chisq import BasisSpec, basis_matrix
from .coeff import CoefficientFn, ModelSpec, coefficient
from .quadrature import cumulative_trapezoid, trapezoid
from .refdist import Distribution, QuantileTable, quantile_table
from .registry import StatOptions, get_statistic, threshold_for
from .simulate import TimeGrid, alternative_paths, solve_limit_ode

__all__ = [
    "AlternativeSpec",
    "PowerEstimate",
    "PowerCurve",
    "estimate_power",
    "power_curve_eps",
    "power_curve_scale",
    "signal_norm",
    "h_star",
    "limit_power_cvm",
    "degenerate_family",
    "contrast_constant",
    "chisq_signal_u",
    "load_alternative",
]

SCALINGS = ("local", "chisq", "fixed_drift")


@dataclass(frozen=True)
class AlternativeSpec:
    h: CoefficientFn
    scaling: str = "local"
    contrast: float | None = None
    rho: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "h", coefficient(self.h))
        if self.scaling not in SCALINGS:
            raise ValueError(f"scaling must be one of {', '.join(SCALINGS)}, got {self.scaling!r}")

    def scaled(self, factor: float) -> "AlternativeSpec":
        return replace(self, h=coefficient(f"{float(factor)!r}*({self.h})"), rho=None)

    def effective_h(self, spec: ModelSpec, grid: TimeGrid) -> CoefficientFn:
        """``h`` rescaled to signal norm ``rho`` when a target is set."""
        if self.rho is None:
            return self.h
        norm = math.sqrt(signal_norm(spec, self.h, grid))
        if norm == 0:
            raise ValueError("cannot rescale a zero signal to a positive norm")
        return coefficient(f"{self.rho / norm!r}*({self.h})")

    def to_dict(self) -> dict:
        return {"h": str(self.h), "scaling": self.scaling, "contrast": self.contrast, "rho": self.rho}

    @classmethod
    def from_dict(cls, d: Mapping) -> "AlternativeSpec":
        if "h" not in d:
            raise KeyError("alternative config is missing field(s): h")
        return cls(d["h"], d.get("scaling", "local"), d.get("contrast"), d.get("rho"))


def load_alternative(path) -> AlternativeSpec:
    with open(path) as fh:
        return AlternativeSpec.from_dict(json.load(fh))


@dataclass(frozen=True)
class PowerEstimate:
    power: float
    se: float
    reps: int
    threshold: float

    def __float__(self) -> float:
        return self.power


@dataclass(frozen=True, eq=False)
class PowerCurve:
    x_axis: np.ndarray
    power: np.ndarray
    se: np.ndarray
    reps: int
    test_name: str

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "power", "se"])
            for x, p, s in zip(self.x_axis, self.power, self.se):
                w.writerow([f"{x:.17g}", f"{p:.17g}", f"{s:.17g}"])


def _se(p: float, reps: int) -> float:
    return math.sqrt(p * (1.0 - p) / reps)


def alternative_statistics(
    test: str,
    null_spec: ModelSpec,
    alt: AlternativeSpec,
    reps: int,
    seed: int,
    grid: TimeGrid | None = None,
    threads: int = 1,
    opts: StatOptions = StatOptions(),
) -> np.ndarray:
    """Statistic ``test`` on ``reps`` paths simulated under ``alt``."""
    grid = grid or TimeGrid(null_spec.T)
    stat = get_statistic(test)
    h = alt.effective_h(null_spec, grid)

    def block(idx):
        X = alternative_paths(null_spec, h, grid, seed, idx, alt.scaling)
        return stat.batch(X, null_spec, grid, opts)

    return rng.run_replications(block, reps, threads=threads)


def estimate_power(
    test: str,
    null_spec: ModelSpec,
    alt: AlternativeSpec,
    table: QuantileTable | None = None,
    reps: int = 1000,
    seed: int = 0,
    alpha: float = 0.05,
    grid: TimeGrid | None = None,
    threads: int = 1,
    opts: StatOptions = StatOptions(),
) -> PowerEstimate:
    """Rejection frequency of ``test`` under ``alt``; strict ``>`` against the critical value.

    ``table`` must hold the test's reference law; without it the cached
    table (or the finite-``m`` chi-square threshold) is used.
    """
    grid = grid or TimeGrid(null_spec.T)
    c = threshold_for(test, alpha, null_spec, grid, opts, table)
    values = alternative_statistics(test, null_spec, alt, reps, seed, grid, threads, opts)
    p = float(np.mean(values > c))
    return PowerEstimate(p, _se(p, reps), reps, c)


def _curve(test, points, specs_alts, reps, seed, alpha, grid_for, threads, opts, table):
    power, se = [], []
    for spec, alt in specs_alts:
        est = estimate_power(test, spec, alt, table, reps, seed, alpha, grid_for(spec), threads, opts)
        power.append(est.power)
        se.append(est.se)
    return PowerCurve(np.asarray(points, dtype=float), np.array(power), np.array(se), reps, test)


def power_curve_eps(
    test: str,
    null_spec: ModelSpec,
    alt: AlternativeSpec,
    eps_grid,
    reps: int = 1000,
    seed: int = 0,
    alpha: float = 0.05,
    n_steps: int | None = None,
    threads: int = 1,
    opts: StatOptions = StatOptions(),
    table: QuantileTable | None = None,
) -> PowerCurve:
    """Power at fixed ``h`` over a sweep of noise levels (consistency view)."""
    specs = [(null_spec.with_epsilon(float(e)), alt) for e in eps_grid]
    grid_for = lambda s: TimeGrid(s.T, n_steps) if n_steps else TimeGrid(s.T)  # noqa: E731
    return _curve(test, eps_grid, specs, reps, seed, alpha, grid_for, threads, opts, table)


def power_curve_scale(
    test: str,
    null_spec: ModelSpec,
    alt: AlternativeSpec,
    scales,
    reps: int = 1000,
    seed: int = 0,
    alpha: float = 0.05,
    n_steps: int | None = None,
    threads: int = 1,
    opts: StatOptions = StatOptions(),
    table: QuantileTable | None = None,
) -> PowerCurve:
    """Power at fixed eps over signal amplitudes ``scale * h`` (local view)."""
    specs = [(null_spec, alt.scaled(float(a))) for a in scales]
    grid_for = lambda s: TimeGrid(s.T, n_steps) if n_steps else TimeGrid(s.T)  # noqa: E731
    return _curve(test, scales, specs, reps, seed, alpha, grid_for, threads, opts, table)


# --------------------------------------------------------------------------
# limit power


def signal_norm(spec: ModelSpec, h, grid: TimeGrid | None = None) -> float:
    """``int_x0^x_T h^2 sigma^2 / S0^3 dx``, integrated in time along the limit path (``dx = S0 dt``)."""
    grid = grid or TimeGrid(spec.T)
    x = solve_limit_ode(spec, grid).values
    h = coefficient(h)
    s0 = np.broadcast_to(spec.trend(x), x.shape)
    sig2 = np.broadcast_to(spec.diffusion(x), x.shape) ** 2
    hv = np.broadcast_to(h(x), x.shape)
    return float(trapezoid(hv * hv * sig2 / s0**2, grid.dt))


def h_star(spec: ModelSpec, h, grid: TimeGrid | None = None) -> Callable:
    """``s -> u_T^1/2 h(x(u_T s))`` on ``[0, 1]``.

    ``u(x)`` is tabulated along the limit path and inverted by monotone
    cubic interpolation.
    """
    grid = grid or TimeGrid(spec.T)
    x = solve_limit_ode(spec, grid).values
    s0 = np.broadcast_to(spec.trend(x), x.shape)
    sig2 = np.broadcast_to(spec.diffusion(x), x.shape) ** 2
    u = cumulative_trapezoid(sig2 / s0**2, grid.dt)  # du = sigma^2/S0^3 dx = sigma^2/S0^2 dt
    u_T = float(u[-1])
    x_of_u = PchipInterpolator(u, x)
    h = coefficient(h)

    def f(s):
        s = np.asarray(s, dtype=float)
        return math.sqrt(u_T) * np.broadcast_to(h(x_of_u(u_T * s)), s.shape)

    return f


def limit_power_cvm(
    h_star_fn,
    alpha: float = 0.05,
    reps: int = 20_000,
    n_steps: int = 2048,
    seed: int = 0,
    table: QuantileTable | None = None,
    threads: int = 1,
) -> PowerEstimate:
    """Monte Carlo ``P{ int_0^1 [int_0^v h_* + w_v]^2 dv > c_alpha }``."""
    if table is None:
        table = quantile_table(Distribution.INT_SQ)
    elif Distribution.parse(table.distribution) is not Distribution.INT_SQ:
        raise ValueError("limit power needs the int-sq-wiener table")
    c = table.critical_value(alpha)
    v = np.linspace(0.0, 1.0, n_steps + 1)
    hs = h_star_fn if callable(h_star_fn) else coefficient(h_star_fn)
    shift = cumulative_trapezoid(np.broadcast_to(np.asarray(hs(v), dtype=float), v.shape), 1.0 / n_steps)
    sq = math.sqrt(1.0 / n_steps)

    def block(idx):
        w = np.zeros((len(idx), n_steps + 1))
        np.cumsum(rng.normal_block(seed, idx, n_steps) * sq, axis=1, out=w[:, 1:])
        return trapezoid((w + shift) ** 2, 1.0 / n_steps)

    vals = rng.run_replications(block, reps, threads=threads, chunk=1024)
    p = float(np.mean(vals > c))
    return PowerEstimate(p, _se(p, reps), reps, c)


# --------------------------------------------------------------------------
# degeneracy family and chi-square signal


def degenerate_family(n: int, c: float, spec: ModelSpec) -> AlternativeSpec:
    """``h_n(x) = c S0(x)^2 / sigma(x)^2 cos(n (x - x0))`` under the ``local`` scaling.

    The drift perturbation ``eps c S0 cos(n (x - x0))`` has a fixed size while
    its integrated effect on the path shrinks like ``c / n``.
    """
    if n < 0 or c <= 0:
        raise ValueError("need n >= 0 and c > 0")
    text = f"{float(c)!r}*({spec.trend})^2/({spec.diffusion})^2*cos({int(n)}*(x-({float(spec.x0)!r})))"
    return AlternativeSpec(text, "local")


def contrast_constant(r: float, spec: ModelSpec, grid: TimeGrid | None = None) -> float:
    """Smallest ``c`` with ``c^2/4 int S0/sigma^2 dx >= r^2/eps^2`` on ``[x0, x_T]``."""
    grid = grid or TimeGrid(spec.T)
    x = solve_limit_ode(spec, grid).values
    s0 = np.broadcast_to(spec.trend(x), x.shape)
    sig2 = np.broadcast_to(spec.diffusion(x), x.shape) ** 2
    integral = float(trapezoid(s0 * s0 / sig2, grid.dt))  # dx = S0 dt
    return 2.0 * r / (spec.epsilon * math.sqrt(integral))


def chisq_signal_u(spec: ModelSpec, h, grid: TimeGrid, m: int) -> float:
    """``(4m)^-1/2 sum_{|j|<m} <phi_j, h(x_.)>^2`` for the ``chisq`` scaling."""
    x = solve_limit_ode(spec, grid).values
    hv = np.broadcast_to(coefficient(h)(x), x.shape)
    phi = basis_matrix(BasisSpec(m, grid.T), grid.t)
    mu = trapezoid(phi * hv, grid.dt)
    return float(np.sum(mu * mu) / math.sqrt(4 * m))
