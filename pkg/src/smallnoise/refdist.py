"""Critical values of the limiting Brownian functionals.

``IntSquaredWiener``  -> ``int_0^1 w_v^2 dv``      (C-vM type statistics)
``SupAbsWiener``      -> ``sup_[0,1] |w_v|``        (K-S type statistics)
``StdNormal``         -> ``N(0, 1)``                (chi-square statistic, large m)

The Wiener functionals are obtained by simulation on a uniform grid with the
same conventions as the test statistics: trapezoid rule for the integral and
a maximum over grid nodes for the supremum.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import stats

from . import rng

__all__ = [
    "Distribution",
    "QuantileTable",
    "functional_samples",
    "mc_critical_value",
    "sup_abs_wiener_tail",
    "sup_abs_wiener_quantile",
    "int_sq_wiener_moments",
    "quantile_table",
    "cache_dir",
]

DEFAULT_ALPHAS = (0.01, 0.025, 0.05, 0.1, 0.2)
DEFAULT_REPS = 200_000
DEFAULT_STEPS = 2048


class Distribution(str, Enum):
    INT_SQ = "int-sq-wiener"
    SUP_ABS = "sup-abs-wiener"
    NORMAL = "std-normal"

    @classmethod
    def parse(cls, value) -> "Distribution":
        if isinstance(value, cls):
            return value
        aliases = {
            "intsquaredwiener": cls.INT_SQ,
            "supabswiener": cls.SUP_ABS,
            "stdnormal": cls.NORMAL,
        }
        key = str(value).lower()
        return aliases.get(key.replace("-", "").replace("_", ""), None) or cls(key)


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def _wiener_block(seed: int, streams, n_steps: int) -> np.ndarray:
    inc = rng.normal_block(seed, streams, n_steps) * math.sqrt(1.0 / n_steps)
    w = np.zeros((inc.shape[0], n_steps + 1))
    np.cumsum(inc, axis=1, out=w[:, 1:])
    return w


def functional_samples(
    dist, replications: int, n_steps: int = DEFAULT_STEPS, seed: int = 0, threads: int = 1
) -> np.ndarray:
    """Monte Carlo draws of the Wiener functional, one per replication."""
    dist = Distribution.parse(dist)
    if dist is Distribution.NORMAL:
        return np.concatenate(
            [rng.normals(seed, int(k), 1) for k in range(replications)]
        )
    dv = 1.0 / n_steps

    def block(idx):
        w = _wiener_block(seed, idx, n_steps)
        if dist is Distribution.INT_SQ:
            w2 = w * w
            return dv * (w2.sum(axis=1) - 0.5 * (w2[:, 0] + w2[:, -1]))
        return np.abs(w).max(axis=1)

    return rng.run_replications(block, replications, threads=threads, chunk=1024)


def mc_critical_value(
    dist,
    alpha: float,
    replications: int = DEFAULT_REPS,
    n_steps: int = DEFAULT_STEPS,
    seed: int = 0,
    threads: int = 1,
) -> float:
    """Empirical ``(1 - alpha)``-quantile (type-7) of the functional.

    The normal case uses the exact inverse CDF and ignores the Monte Carlo
    settings.
    """
    _check_alpha(alpha)
    dist = Distribution.parse(dist)
    if dist is Distribution.NORMAL:
        return float(stats.norm.ppf(1.0 - alpha))
    if replications < 100:
        raise ValueError("need at least 100 replications")
    sample = functional_samples(dist, replications, n_steps, seed, threads)
    return float(np.quantile(sample, 1.0 - alpha))


def sup_abs_wiener_tail(b: float) -> float:
    """``P(sup_[0,1] |w| > b)`` from the reflection series.

    ``1 - (4/pi) sum_k (-1)^k/(2k+1) exp(-pi^2 (2k+1)^2 / (8 b^2))``, truncated
    once a term drops below 1e-14.  For small ``b`` the leading term is
    already below the cut-off and the tail is 1 to rounding.
    """
    if b <= 0:
        return 1.0
    total = 0.0
    k = 0
    while True:
        term = (-1) ** k / (2 * k + 1) * math.exp(-(math.pi**2) * (2 * k + 1) ** 2 / (8 * b * b))
        total += term
        if abs(term) < 1e-14:
            break
        k += 1
    return float(1.0 - 4.0 / math.pi * total)


def sup_abs_wiener_quantile(alpha: float) -> float:
    """Root ``b`` of ``sup_abs_wiener_tail(b) = alpha``."""
    from scipy.optimize import brentq

    _check_alpha(alpha)
    return float(brentq(lambda b: sup_abs_wiener_tail(b) - alpha, 0.05, 20.0, xtol=1e-12))


def int_sq_wiener_moments(replications: int, n_steps: int = DEFAULT_STEPS, seed: int = 0):
    """Sample mean and variance of ``int_0^1 w^2`` (exact values 1/2 and 1/3)."""
    s = functional_samples(Distribution.INT_SQ, replications, n_steps, seed)
    return float(s.mean()), float(s.var(ddof=1))


@dataclass(frozen=True)
class QuantileTable:
    distribution: str
    alphas: tuple[float, ...]
    critical_values: tuple[float, ...]
    replications: int
    n_steps: int
    seed: int

    def __post_init__(self):
        if len(self.alphas) != len(self.critical_values):
            raise ValueError("alphas and critical_values differ in length")

    def critical_value(self, alpha: float) -> float:
        for a, c in zip(self.alphas, self.critical_values):
            if math.isclose(a, alpha, rel_tol=0, abs_tol=1e-12):
                return c
        raise KeyError(f"alpha={alpha} not in table {self.alphas}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "QuantileTable":
        d = json.loads(text)
        d["alphas"] = tuple(d["alphas"])
        d["critical_values"] = tuple(d["critical_values"])
        return cls(**d)


def cache_dir() -> Path:
    env = os.environ.get("SMALLNOISE_CACHE_DIR")
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "smallnoise"


def _cache_key(dist: Distribution, alphas, replications, n_steps, seed) -> str:
    payload = json.dumps(
        [dist.value, [float(a) for a in alphas], replications, n_steps, seed], sort_keys=True
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:20]


def quantile_table(
    dist,
    alphas=DEFAULT_ALPHAS,
    replications: int = DEFAULT_REPS,
    n_steps: int = DEFAULT_STEPS,
    seed: int = 0,
    use_cache: bool = True,
    threads: int = 1,
    directory: Path | None = None,
) -> QuantileTable:
    """Critical values for several levels, cached on disk by content hash."""
    dist = Distribution.parse(dist)
    alphas = tuple(sorted(float(a) for a in alphas))
    for a in alphas:
        _check_alpha(a)
    path = Path(directory or cache_dir()) / f"{dist.value}-{_cache_key(dist, alphas, replications, n_steps, seed)}.json"
    if use_cache and path.exists():
        return QuantileTable.from_json(path.read_text())
    if dist is Distribution.NORMAL:
        crit = tuple(float(stats.norm.ppf(1 - a)) for a in alphas)
    else:
        sample = functional_samples(dist, replications, n_steps, seed, threads)
        crit = tuple(float(v) for v in np.quantile(sample, [1 - a for a in alphas]))
    table = QuantileTable(dist.value, alphas, crit, replications, n_steps, seed)
    if use_cache:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(table.to_json())
        tmp.replace(path)
    return table
