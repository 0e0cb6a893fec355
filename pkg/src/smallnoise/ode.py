"""Classical fourth-order Runge-Kutta on a uniform grid."""

from __future__ import annotations

import numpy as np


class IntegrationError(ArithmeticError):
    """State became non-finite; ``t`` is the time at which it happened."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} at t={t:.6g}")
        self.t = t


def rk4(f, y0, T: float, n_steps: int, t0: float = 0.0) -> np.ndarray:
    """Integrate ``y' = f(t, y)`` from ``t0`` to ``t0 + T`` in ``n_steps`` equal steps.

    ``y0`` may be a scalar or an array (vector state, or a batch of scalar
    states).  Returns the solution at the ``n_steps + 1`` nodes, time first.
    """
    h = T / n_steps
    y = np.asarray(y0, dtype=float)
    out = np.empty((n_steps + 1,) + y.shape)
    out[0] = y
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n_steps):
            t = t0 + i * h
            k1 = f(t, y)
            k2 = f(t + h / 2, y + h / 2 * k1)
            k3 = f(t + h / 2, y + h / 2 * k2)
            k4 = f(t + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(y)):
                raise IntegrationError("non-finite ODE state", t + h)
            out[i + 1] = y
    return out
