"""Trapezoid rules along the last axis of uniformly sampled data."""

from __future__ import annotations

import numpy as np


def trapezoid(y, dx: float) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return dx * (y.sum(axis=-1) - 0.5 * (y[..., 0] + y[..., -1]))


def cumulative_trapezoid(y, dx: float) -> np.ndarray:
    """Running trapezoid integral with a leading zero (same length as ``y``)."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    np.cumsum(0.5 * dx * (y[..., 1:] + y[..., :-1]), axis=-1, out=out[..., 1:])
    return out


def trapezoid_nonuniform(y, x) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    dx = np.diff(np.asarray(x, dtype=float))
    return np.sum(0.5 * dx * (y[..., 1:] + y[..., :-1]), axis=-1)


def cumulative_trapezoid_nonuniform(y, x) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    dx = np.diff(np.asarray(x, dtype=float))
    out = np.zeros_like(y)
    np.cumsum(0.5 * dx * (y[..., 1:] + y[..., :-1]), axis=-1, out=out[..., 1:])
    return out
