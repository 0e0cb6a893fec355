"""Composite null ``S(theta, x)``: MLE, Fisher information and the compensated ADF statistic.

The observed path is fitted by maximising the discretised Girsanov
log-likelihood.  The statistic is built from the compensated process

    Y(t) = (X_t - x_t(theta_hat)) / eps + I_T(theta_hat)^-1 xdot_t(theta_hat) H(theta_hat) / eps

where ``x_t(theta)`` solves the limit ODE, ``xdot_t`` is its derivative in
theta and ``H`` is the compensator written without stochastic integrals.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.optimize import brentq

from .coeff import BinOp, Call, CoefficientFn, ModelSpec, Neg, Num, RegularityError, Var, coefficient
from .ode import rk4
from .quadrature import trapezoid
from .simulate import TimeGrid, Trajectory

__all__ = [
    "ParametricModel",
    "MleResult",
    "loglik",
    "score",
    "mle",
    "mle_process_linear",
    "limit_path",
    "sensitivity",
    "sensitivity_fd",
    "fisher_info",
    "h_compensator",
    "h_compensator_ito",
    "h_compensator_values",
    "compensated_process",
    "compensated_values",
    "adf_values",
    "mle_values",
    "stat_adf",
    "adf_from_parts",
    "kl_projection",
    "golden_section",
    "load_parametric_model",
]

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


@dataclass(frozen=True)
class ParametricModel:
    trend: CoefficientFn
    diffusion: CoefficientFn
    theta_min: float
    theta_max: float
    x0: float
    T: float
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "trend", coefficient(self.trend))
        object.__setattr__(self, "diffusion", coefficient(self.diffusion))
        if not self.theta_min < self.theta_max:
            raise ValueError("need theta_min < theta_max")
        if not self.T > 0:
            raise ValueError("T must be positive")

    # derivatives, built once per call site; trees are small
    @property
    def dtheta(self) -> CoefficientFn:
        return self.trend.derivative("theta")

    def at(self, theta: float) -> ModelSpec:
        """The simple model obtained by fixing theta."""
        return ModelSpec(_bind_theta(self.trend, theta), self.diffusion, self.x0, self.T, self.epsilon)

    def to_dict(self) -> dict:
        return {
            "trend": str(self.trend),
            "diffusion": str(self.diffusion),
            "theta_min": self.theta_min,
            "theta_max": self.theta_max,
            "x0": self.x0,
            "T": self.T,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ParametricModel":
        keys = ("trend", "diffusion", "theta_min", "theta_max", "x0", "T", "epsilon")
        missing = [k for k in keys if k not in d]
        if missing:
            raise KeyError(f"parametric model config is missing field(s): {', '.join(missing)}")
        return cls(
            coefficient(d["trend"]),
            coefficient(d["diffusion"]),
            float(d["theta_min"]),
            float(d["theta_max"]),
            float(d["x0"]),
            float(d["T"]),
            float(d["epsilon"]),
        )


def load_parametric_model(path) -> ParametricModel:
    with open(path) as fh:
        return ParametricModel.from_dict(json.load(fh))


def _bind_theta(f: CoefficientFn, theta: float) -> CoefficientFn:
    def sub(node):
        if isinstance(node, Var) and node.name == "theta":
            return Num(float(theta))
        if isinstance(node, (Num, Var)):
            return node
        if isinstance(node, Neg):
            return Neg(sub(node.arg))
        if isinstance(node, Call):
            return Call(node.func, sub(node.arg))
        return BinOp(node.op, sub(node.left), sub(node.right))

    return CoefficientFn(sub(f.tree), f.variables)


def _full(values, shape):
    return np.broadcast_to(np.asarray(values, dtype=float), shape)


# --------------------------------------------------------------------------
# likelihood and estimator


class _LikelihoodParts:
    """Pieces of the discretised log-likelihood that do not depend on theta."""

    def __init__(self, values, pm: ParametricModel, dt: float):
        X = np.asarray(values, dtype=float)
        self.left = X[:-1]
        sig2 = _full(pm.diffusion(self.left), self.left.shape) ** 2
        if np.any(sig2 == 0):
            raise RegularityError("sigma vanishes on the observed path")
        e2 = pm.epsilon**2
        self.a = np.diff(X) / (e2 * sig2)
        self.b = dt / (e2 * sig2)
        self.S = pm.trend.compile()
        self.Sdot = pm.dtheta.compile()

    def loglik(self, theta: float) -> float:
        s = _full(self.S(self.left, theta), self.left.shape)
        return float(np.sum(s * self.a) - 0.5 * np.sum(s * s * self.b))

    def score(self, theta: float) -> float:
        s = _full(self.S(self.left, theta), self.left.shape)
        sd = _full(self.Sdot(self.left, theta), self.left.shape)
        return float(np.sum(sd * (self.a - s * self.b)))


def loglik(traj: Trajectory, pm: ParametricModel, theta: float) -> float:
    """``sum S(theta,X_i)/(eps^2 sigma_i^2) dX_i - 1/2 sum S(theta,X_i)^2/(eps^2 sigma_i^2) dt``."""
    return _LikelihoodParts(traj.values, pm, traj.grid.dt).loglik(theta)


def score(traj: Trajectory, pm: ParametricModel, theta: float) -> float:
    return _LikelihoodParts(traj.values, pm, traj.grid.dt).score(theta)


def golden_section(f, lo: float, hi: float, tol: float):
    """Maximise a unimodal ``f`` on ``[lo, hi]`` to bracket width ``tol``."""
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    return (a + b) / 2


def _grid_golden(f, lo: float, hi: float, grid_points: int, tol: float):
    """Grid scan then golden section; returns ``(theta, bracket, on_edge)``."""
    nodes = np.linspace(lo, hi, grid_points)
    vals = np.array([f(t) for t in nodes])
    k = int(np.argmax(vals))
    a = nodes[max(k - 1, 0)]
    b = nodes[min(k + 1, grid_points - 1)]
    return golden_section(f, a, b, tol), (a, b), k in (0, grid_points - 1)


@dataclass(frozen=True)
class MleResult:
    theta_hat: float
    loglik: float
    fisher: float
    boundary: bool = False
    trace: np.ndarray | None = None


def mle(
    traj: Trajectory,
    pm: ParametricModel,
    grid_points: int = 41,
    refine_tol: float = 1e-9,
    with_fisher: bool = True,
) -> MleResult:
    """Grid scan over ``[theta_min, theta_max]`` followed by golden-section refinement.

    When the score changes sign across the final grid bracket its root is
    polished with Brent's method, which recovers the closed form to
    rounding error for drifts linear in theta.  A maximiser within
    ``refine_tol`` of either end of the range sets ``boundary``.
    """
    parts = _LikelihoodParts(traj.values, pm, traj.grid.dt)
    theta = _fit(parts, pm, grid_points, refine_tol)
    boundary = _on_boundary(theta, pm, refine_tol)
    fisher = float(fisher_info(pm, theta, traj.grid)) if with_fisher else float("nan")
    return MleResult(theta, parts.loglik(theta), fisher, boundary)


def _fit(parts: _LikelihoodParts, pm: ParametricModel, grid_points: int, refine_tol: float) -> float:
    theta, (a, b), _ = _grid_golden(parts.loglik, pm.theta_min, pm.theta_max, grid_points, refine_tol)
    # golden section stalls near sqrt(machine eps) on flat tops; the score root is sharper
    if a < theta < b and parts.score(a) > 0 > parts.score(b):
        theta = brentq(parts.score, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return float(theta)


def _on_boundary(theta: float, pm: ParametricModel, tol: float) -> bool:
    edge = max(10 * tol, 1e-9 * (pm.theta_max - pm.theta_min))
    return bool(theta - pm.theta_min < edge or pm.theta_max - theta < edge)


def mle_values(values, pm: ParametricModel, grid: TimeGrid, grid_points: int = 41, refine_tol: float = 1e-9):
    """MLE for each row of ``values``; returns ``(theta_hat, boundary)`` arrays."""
    values = np.atleast_2d(values)
    theta = np.empty(len(values))
    edge = np.zeros(len(values), dtype=bool)
    for k, row in enumerate(values):
        theta[k] = _fit(_LikelihoodParts(row, pm, grid.dt), pm, grid_points, refine_tol)
        edge[k] = _on_boundary(theta[k], pm, refine_tol)
    return theta, edge


def _linear_factor(pm: ParametricModel) -> CoefficientFn:
    h = pm.dtheta
    if h.depends_on("theta"):
        raise ValueError("trend is not linear in theta")
    xs = np.linspace(pm.x0 - 1.0, pm.x0 + 1.0, 7)
    for th in (pm.theta_min, 0.5 * (pm.theta_min + pm.theta_max)):
        s = _full(pm.trend(xs, th), xs.shape)
        if not np.allclose(s, th * _full(h(xs), xs.shape), rtol=1e-12, atol=1e-12):
            raise ValueError("trend is not of the form theta * h(x)")
    return h


def mle_process_linear(traj: Trajectory, pm: ParametricModel, mu: float = 0.5):
    """Running MLE for ``S = theta h(x)``.

    ``theta_t = [int_0^t h^2/sigma^2 ds]^-1 int_0^t h/sigma^2 dX`` with left-point
    sums.  Returns ``(theta_t, reliable)`` where ``reliable`` marks ``t >= eps^mu``.
    """
    h = _linear_factor(pm)
    X = traj.values
    left = X[:-1]
    hv = _full(h(left), left.shape)
    sig2 = _full(pm.diffusion(left), left.shape) ** 2
    num = np.concatenate([[0.0], np.cumsum(hv / sig2 * np.diff(X))])
    den = np.concatenate([[0.0], np.cumsum(hv * hv / sig2 * traj.grid.dt)])
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    reliable = (traj.t >= pm.epsilon**mu) & (den > 0)
    return theta, reliable


# --------------------------------------------------------------------------
# limit path, sensitivity, Fisher information


def limit_path(pm: ParametricModel, theta, grid: TimeGrid) -> np.ndarray:
    """``x_t(theta)``; an array of thetas gives one row per value."""
    S = pm.trend.compile()
    th = np.asarray(theta, dtype=float)
    x0 = np.full(th.shape, pm.x0)
    vals = rk4(lambda _t, x: S(x, th) + 0.0 * x, x0, grid.T, grid.n_steps)
    return np.moveaxis(vals, 0, -1)


def sensitivity(pm: ParametricModel, theta, grid: TimeGrid):
    """``x_t(theta)`` and ``xdot_t = d x_t / d theta`` from the augmented RK4 system.

    ``d xdot / dt = S'(theta, x) xdot + Sdot(theta, x)``, ``xdot_0 = 0``.
    An array of thetas is integrated in one pass, one row per value.
    """
    S = pm.trend.compile()
    Sx = pm.trend.derivative("x").compile()
    St = pm.dtheta.compile()
    th = np.asarray(theta, dtype=float)

    def rhs(_t, y):
        x, xd = y
        return np.stack([S(x, th) + 0.0 * x, Sx(x, th) * xd + St(x, th)])

    y0 = np.stack([np.full(th.shape, pm.x0), np.zeros(th.shape)])
    out = rk4(rhs, y0, grid.T, grid.n_steps)
    return np.moveaxis(out[:, 0], 0, -1), np.moveaxis(out[:, 1], 0, -1)


def sensitivity_fd(pm: ParametricModel, theta: float, grid: TimeGrid, step: float | None = None):
    """Central finite difference of the limit path in theta (step ``1e-4 (1 + |theta|)``)."""
    h = 1e-4 * (1.0 + abs(theta)) if step is None else step
    return (limit_path(pm, theta + h, grid) - limit_path(pm, theta - h, grid)) / (2 * h)


def _fisher_from_path(pm: ParametricModel, theta, x, dt: float):
    th = np.asarray(theta, dtype=float)[..., None]
    sd = _full(pm.dtheta(x, th), x.shape)
    sig = _full(pm.diffusion(x), x.shape)
    return trapezoid((sd / sig) ** 2, dt)


def fisher_info(pm: ParametricModel, theta, grid: TimeGrid):
    """``I_T(theta) = int_0^T (Sdot(theta, x_t(theta)) / sigma(x_t(theta)))^2 dt``."""
    out = _fisher_from_path(pm, theta, limit_path(pm, theta, grid), grid.dt)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# compensator


def h_compensator_values(values, pm: ParametricModel, theta, dt: float) -> np.ndarray:
    """Batch form of :func:`h_compensator`: rows of ``values``, one theta per row."""
    X = np.atleast_2d(np.asarray(values, dtype=float))
    th = np.broadcast_to(np.asarray(theta, dtype=float), X.shape[:1])[:, None]
    Sd = pm.dtheta
    sig = pm.diffusion
    x0, xT = X[:, :1], X[:, -1:]
    y = 0.5 * (xT - x0) * _GL_X + 0.5 * (xT + x0)
    fy = _full(Sd(y, th), y.shape) / _full(sig(y), y.shape) ** 2
    first = 0.5 * (xT[:, 0] - x0[:, 0]) * (fy @ _GL_W)
    s = _full(sig(X), X.shape)
    if np.any(s == 0):
        raise RegularityError("sigma vanishes on the observed path")
    sd = _full(Sd(X, th), X.shape)
    correction = (_full(Sd.derivative("x")(X, th), X.shape) * s - 2 * sd * _full(sig.derivative("x")(X), X.shape)) / (2 * s)
    drift = sd * _full(pm.trend(X, th), X.shape) / s**2
    return first - pm.epsilon**2 * trapezoid(correction, dt) - trapezoid(drift, dt)


def h_compensator(traj: Trajectory, pm: ParametricModel, theta: float) -> float:
    """Pathwise value of ``int Sdot/sigma^2 [dX - S dt]`` after Ito's formula.

    ``int_x0^X_T Sdot/sigma^2 dy - eps^2 int (Sdot' sigma - 2 Sdot sigma')/(2 sigma) dt
    - int Sdot S / sigma^2 dt``, time integrals along the observed path and the
    space integral by 64-point Gauss-Legendre.
    """
    return float(h_compensator_values(traj.values, pm, theta, traj.grid.dt)[0])


def h_compensator_ito(traj: Trajectory, pm: ParametricModel, theta: float) -> float:
    """The same quantity as a left-point stochastic sum (reference form)."""
    X = traj.values
    left = X[:-1]
    sd = _full(pm.dtheta(left, theta), left.shape)
    s2 = _full(pm.diffusion(left), left.shape) ** 2
    S = _full(pm.trend(left, theta), left.shape)
    return float(np.sum(sd / s2 * (np.diff(X) - S * traj.grid.dt)))


def compensated_values(values, pm: ParametricModel, grid: TimeGrid, theta, H=None) -> np.ndarray:
    """Compensated paths for rows of ``values`` with fitted ``theta`` (one per row).

    ``H`` defaults to the compensator evaluated at ``theta``.
    """
    X = np.atleast_2d(np.asarray(values, dtype=float))
    th = np.broadcast_to(np.asarray(theta, dtype=float), X.shape[:1])
    x, xd = sensitivity(pm, th, grid)
    fisher = _fisher_from_path(pm, th, x, grid.dt)
    if H is None:
        H = h_compensator_values(X, pm, th, grid.dt)
    H = np.broadcast_to(np.asarray(H, dtype=float), th.shape)
    eps = pm.epsilon
    return (X - x) / eps + xd * (H / (fisher * eps))[:, None]


def compensated_process(
    traj: Trajectory,
    pm: ParametricModel,
    mle_res: MleResult,
    H: float | None = None,
) -> np.ndarray:
    """``(X - x(theta_hat))/eps + I_T(theta_hat)^-1 xdot(theta_hat) H(theta_hat)/eps``.

    ``H`` defaults to :func:`h_compensator` at ``theta_hat``.  The compensator
    is an ``O(eps)`` quantity, hence the division by eps.
    """
    return compensated_values(traj.values, pm, traj.grid, mle_res.theta_hat, H)[0]


def adf_from_parts(values, Y, pm: ParametricModel, theta, dt: float):
    """``[int sigma^2/S(theta,X)^2]^-2 int Y^2 sigma^2 / S(theta,X)^4 dt`` (rows = paths)."""
    X = np.asarray(values, dtype=float)
    th = np.asarray(theta, dtype=float)
    if X.ndim == 2:
        th = np.broadcast_to(th, X.shape[:1])[:, None]
    S = _full(pm.trend(X, th), X.shape)
    if np.any(S <= 0):
        x = float(X[np.unravel_index(int(np.argmax(S <= 0)), X.shape)])
        raise RegularityError(f"fitted trend is not positive at x={x:.6g}", x)
    sig2 = _full(pm.diffusion(X), X.shape) ** 2
    norm = trapezoid(sig2 / S**2, dt)
    return trapezoid(np.asarray(Y) ** 2 * sig2 / S**4, dt) / norm**2


def adf_values(values, pm: ParametricModel, grid: TimeGrid, grid_points: int = 41, refine_tol: float = 1e-9):
    """ADF statistic for each row of ``values`` (MLE fitted per row)."""
    X = np.atleast_2d(np.asarray(values, dtype=float))
    theta, _ = mle_values(X, pm, grid, grid_points, refine_tol)
    Y = compensated_values(X, pm, grid, theta)
    return adf_from_parts(X, Y, pm, theta, grid.dt)


def stat_adf(traj: Trajectory, pm: ParametricModel, mle_res: MleResult | None = None) -> float:
    """``[int sigma^2/S(theta_hat,X)^2]^-2 int Y^2 sigma^2 / S(theta_hat,X)^4 dt``."""
    if mle_res is None:
        mle_res = mle(traj, pm)
    Y = compensated_process(traj, pm, mle_res)
    return float(adf_from_parts(traj.values, Y, pm, mle_res.theta_hat, traj.grid.dt))


def kl_projection(
    pm: ParametricModel,
    s_true,
    grid: TimeGrid,
    grid_points: int = 41,
    refine_tol: float = 1e-10,
):
    """Minimiser over theta of ``int ((S(theta, x_t) - S_true(x_t)) / sigma(x_t))^2 dt`` on the true limit path.

    Returns ``(theta_star, boundary_flag)``.
    """
    s_true = coefficient(s_true)
    f = s_true.compile()
    x = rk4(lambda _t, v: f(v) + 0.0 * v, pm.x0, grid.T, grid.n_steps)
    target = _full(s_true(x), x.shape)
    sig = _full(pm.diffusion(x), x.shape)
    S = pm.trend.compile()

    def neg_distance(theta):
        return -float(trapezoid(((_full(S(x, theta), x.shape) - target) / sig) ** 2, grid.dt))

    theta, _, _ = _grid_golden(neg_distance, pm.theta_min, pm.theta_max, grid_points, refine_tol)
    return float(theta), _on_boundary(theta, pm, refine_tol)
