"""Chi-square type test built on Fourier coefficients of the normalised innovations.

For an orthonormal trigonometric system ``phi_j`` on ``[0, T]`` the
coefficients

    y_j = int_0^T phi_j(t) / (eps sigma(X_t)) [dX_t - S0(X_t) dt]

are i.i.d. standard normal under the null.  The statistic
``(4m)^-1/2 sum_{|j|<m} (y_j^2 - 1)`` is asymptotically ``N(0, 1)``; for
finite ``m`` its law is an affine image of chi-square with ``2m - 1``
degrees of freedom.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .coeff import ModelSpec, RegularityError
from .simulate import TimeGrid, Trajectory

__all__ = [
    "BasisSpec",
    "FourierCoeffs",
    "basis_matrix",
    "innovations",
    "fourier_coeffs",
    "fourier_values",
    "stat_chisq",
    "chisq_values",
    "chisq_weights",
    "stat_chisq_weighted",
    "chisq_weighted_values",
    "chisq_exact_threshold",
    "chisq_threshold",
    "chisq_power_limit",
    "select_m",
    "write_coeffs_csv",
]

NORMAL_THRESHOLD_MIN_M = 100


@dataclass(frozen=True)
class BasisSpec:
    """Trigonometric basis ``phi_0 = T^-1/2``, ``sqrt(2/T) cos(2 pi j t/T)`` (j > 0), ``sqrt(2/T) sin`` (j < 0)."""

    m: int
    T: float = 1.0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")

    @property
    def indices(self) -> np.ndarray:
        return np.arange(-(self.m - 1), self.m)

    def __call__(self, j: int, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if j == 0:
            return np.full_like(t, 1.0 / math.sqrt(self.T))
        w = 2 * math.pi * abs(j) / self.T
        f = np.cos if j > 0 else np.sin
        return math.sqrt(2.0 / self.T) * f(w * t)


@dataclass(frozen=True, eq=False)
class FourierCoeffs:
    values: np.ndarray
    m: int

    @property
    def indices(self) -> np.ndarray:
        return np.arange(-(self.m - 1), self.m)

    def __getitem__(self, j: int) -> float:
        return float(self.values[..., j + self.m - 1])


def basis_matrix(basis: BasisSpec, t) -> np.ndarray:
    """Rows ``phi_j(t)`` for ``j = -(m-1) .. m-1``."""
    return np.stack([basis(int(j), t) for j in basis.indices])


def innovations(values, spec: ModelSpec, grid: TimeGrid) -> np.ndarray:
    """Left-point normalised increments ``(dX - S0(X) dt) / (eps sigma(X))``."""
    X = np.asarray(values, dtype=float)
    left = X[..., :-1]
    sig = np.broadcast_to(np.asarray(spec.diffusion(left), dtype=float), left.shape)
    if np.any(sig == 0):
        raise RegularityError("sigma vanishes on the observed range")
    s0 = np.broadcast_to(np.asarray(spec.trend(left), dtype=float), left.shape)
    return (np.diff(X, axis=-1) - s0 * grid.dt) / (spec.epsilon * sig)


def fourier_values(values, spec: ModelSpec, grid: TimeGrid, m: int) -> np.ndarray:
    """Coefficients ``y_j`` for a batch of paths, last axis ordered ``j = -(m-1)..m-1``.

    The Ito sums ``sum_i phi_j(t_i) d_i`` are evaluated with one real FFT:
    the cosine sums are the real part and the sine sums minus the imaginary
    part of the transform of the increments.
    """
    n = grid.n_steps
    if 2 * (m - 1) >= n:
        raise ValueError(f"m={m} too large for {n} steps (need 2(m-1) < n)")
    d = innovations(values, spec, grid)
    F = np.fft.rfft(d, axis=-1)[..., :m]
    T = grid.T
    cos_part = math.sqrt(2.0 / T) * F.real[..., 1:]
    sin_part = -math.sqrt(2.0 / T) * F.imag[..., 1:]
    y0 = F.real[..., :1] / math.sqrt(T)
    return np.concatenate([sin_part[..., ::-1], y0, cos_part], axis=-1)


def fourier_coeffs(traj: Trajectory, spec: ModelSpec, basis: BasisSpec) -> FourierCoeffs:
    if not math.isclose(basis.T, traj.grid.T):
        raise ValueError("basis horizon differs from the trajectory horizon")
    return FourierCoeffs(fourier_values(traj.values, spec, traj.grid, basis.m), basis.m)


def _coeff_array(coeffs) -> tuple[np.ndarray, int]:
    if isinstance(coeffs, FourierCoeffs):
        return np.asarray(coeffs.values), coeffs.m
    y = np.asarray(coeffs, dtype=float)
    return y, (y.shape[-1] + 1) // 2


def chisq_values(y) -> np.ndarray:
    y, m = _coeff_array(y)
    return np.sum(y * y - 1.0, axis=-1) / math.sqrt(4 * m)


def stat_chisq(coeffs) -> float:
    """``(4m)^-1/2 sum_{|j|<m} (y_j^2 - 1)``; the sum has ``2m - 1`` terms."""
    return float(chisq_values(coeffs))


def chisq_weights(m: int, k: int) -> np.ndarray:
    """Weights ``z^2 (1 - |i/m|^2k)`` for ``|i| < m``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    full = 1.0 - np.abs(np.arange(-m, m + 1) / m) ** (2 * k)
    z = (2.0 * np.sum(full**2)) ** -0.25
    i = np.arange(-(m - 1), m)
    return z * z * (1.0 - np.abs(i / m) ** (2 * k))


def chisq_weighted_values(y, k: int) -> np.ndarray:
    y, m = _coeff_array(y)
    return np.sum(chisq_weights(m, k) * (y * y - 1.0), axis=-1)


def stat_chisq_weighted(coeffs, k: int) -> float:
    return float(chisq_weighted_values(coeffs, k))


def chisq_exact_threshold(m: int, alpha: float) -> float:
    """Finite-``m`` critical value from the chi-square law with ``2m - 1`` degrees of freedom."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    df = 2 * m - 1
    return float((stats.chi2.ppf(1.0 - alpha, df) - df) / math.sqrt(4 * m))


def chisq_threshold(m: int, alpha: float) -> float:
    """Exact chi-square threshold up to ``m = 100``, the normal quantile beyond."""
    if m > NORMAL_THRESHOLD_MIN_M:
        if not 0 < alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        return float(stats.norm.ppf(1.0 - alpha))
    return chisq_exact_threshold(m, alpha)


def chisq_power_limit(u: float, alpha: float) -> float:
    """Limit power ``P(zeta > z_alpha - u) = Phi(u - z_alpha)``."""
    if u < 0:
        raise ValueError("u must be non-negative")
    return float(stats.norm.cdf(u - stats.norm.ppf(1.0 - alpha)))


def select_m(contrast_r: float, epsilon: float, cap: int | None = None) -> int:
    """``m = ceil(r^4 / (4 eps^4))``, optionally capped."""
    m = max(1, math.ceil(contrast_r**4 / (4.0 * epsilon**4)))
    return min(m, cap) if cap else m


def write_coeffs_csv(coeffs: FourierCoeffs, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "y_j"])
        for j, y in zip(coeffs.indices, np.asarray(coeffs.values)):
            w.writerow([int(j), f"{y:.17g}"])
