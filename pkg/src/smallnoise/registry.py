"""Name-based access to every statistic computed from paths of the scalar model.

Each entry maps a CLI name to a batch function ``f(values, spec, grid, opts)``
returning one value per row and to the reference law used for its threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import chisq, gof_core, localtime
from .coeff import ModelSpec
from .refdist import DEFAULT_ALPHAS, Distribution, QuantileTable, quantile_table
from .simulate import TimeGrid

__all__ = [
    "StatOptions",
    "Statistic",
    "STATISTICS",
    "PATH_STATISTICS",
    "OTHER_STATISTICS",
    "get_statistic",
    "threshold_for",
    "statistic_values",
]


@dataclass(frozen=True)
class StatOptions:
    m: int | None = None
    k_smooth: int = 2
    contrast_r: float | None = None
    nu: float | None = None
    bins: int | None = None

    def resolve_m(self, epsilon: float, grid: TimeGrid) -> int:
        if self.m is not None:
            return self.m
        cap = (grid.n_steps + 1) // 2
        if self.contrast_r is not None:
            return chisq.select_m(self.contrast_r, epsilon, cap)
        return min(10, cap)


@dataclass(frozen=True)
class Statistic:
    name: str
    batch: Callable
    distribution: Distribution


def _chisq(values, spec, grid, opts):
    return chisq.chisq_values(chisq.fourier_values(values, spec, grid, opts.resolve_m(spec.epsilon, grid)))


def _chisq_weighted(values, spec, grid, opts):
    y = chisq.fourier_values(values, spec, grid, opts.resolve_m(spec.epsilon, grid))
    return chisq.chisq_weighted_values(y, opts.k_smooth)


def _lt(values, spec, grid, opts):
    return localtime.localtime_batch_values(values, spec, grid, opts.bins, opts.nu)


def _simple(fn):
    return lambda values, spec, grid, opts: fn(values, spec, grid)


INT_SQ = Distribution.INT_SQ
SUP_ABS = Distribution.SUP_ABS
NORMAL = Distribution.NORMAL

PATH_STATISTICS = {
    s.name: s
    for s in (
        Statistic("cvm", _simple(gof_core.cvm_values), INT_SQ),
        Statistic("ks", _simple(gof_core.ks_values), SUP_ABS),
        Statistic("cvm-plugin", _simple(gof_core.cvm_plugin_values), INT_SQ),
        Statistic("ks-plugin", _simple(gof_core.ks_plugin_values), SUP_ABS),
        Statistic("cvm-integral", _simple(gof_core.cvm_integral_values), INT_SQ),
        Statistic("degenerate", _simple(gof_core.degenerate_start_values), INT_SQ),
        Statistic("chisq", _chisq, NORMAL),
        Statistic("chisq-weighted", _chisq_weighted, NORMAL),
        Statistic("localtime", _lt, INT_SQ),
    )
}

# statistics needing a different observation model (linear system, parametric family)
OTHER_STATISTICS = {"kalman": INT_SQ, "adf": INT_SQ}

STATISTICS = tuple(PATH_STATISTICS) + tuple(OTHER_STATISTICS)


def get_statistic(name: str) -> Statistic:
    try:
        return PATH_STATISTICS[name]
    except KeyError:
        raise KeyError(f"unknown path statistic {name!r}; choose from {', '.join(PATH_STATISTICS)}") from None


def threshold_for(
    name: str,
    alpha: float,
    spec: ModelSpec,
    grid: TimeGrid,
    opts: StatOptions = StatOptions(),
    table: QuantileTable | None = None,
    **table_kwargs,
) -> float:
    """Critical value of statistic ``name``.

    The plain chi-square statistic uses its finite-``m`` threshold; all others
    read ``table`` (checked against the statistic's law) or the cached table.
    """
    dist = PATH_STATISTICS[name].distribution if name in PATH_STATISTICS else OTHER_STATISTICS[name]
    if name == "chisq" and table is None:
        return chisq.chisq_threshold(opts.resolve_m(spec.epsilon, grid), alpha)
    if table is None:
        alphas = DEFAULT_ALPHAS if any(abs(a - alpha) < 1e-12 for a in DEFAULT_ALPHAS) else sorted({*DEFAULT_ALPHAS, alpha})
        table = quantile_table(dist, alphas=alphas, **table_kwargs)
    elif Distribution.parse(table.distribution) is not dist:
        raise ValueError(f"table holds {Distribution.parse(table.distribution).value}, statistic {name} needs {dist.value}")
    return float(table.critical_value(alpha))


def statistic_values(name: str, values, spec: ModelSpec, grid: TimeGrid, opts: StatOptions = StatOptions()) -> np.ndarray:
    """Statistic ``name`` for each row of ``values`` (a single path counts as one row)."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    return np.atleast_1d(np.asarray(get_statistic(name).batch(values, spec, grid, opts), dtype=float))
