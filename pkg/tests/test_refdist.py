import math

import numpy as np
import pytest
from scipy import stats

from smallnoise.refdist import (
    Distribution,
    QuantileTable,
    functional_samples,
    int_sq_wiener_moments,
    mc_critical_value,
    quantile_table,
    sup_abs_wiener_quantile,
    sup_abs_wiener_tail,
)


def test_series_tail():
    assert sup_abs_wiener_tail(10.0) < 1e-10
    assert abs(sup_abs_wiener_tail(2.2414) - 0.05) < 5e-4
    b = np.linspace(0.5, 4, 60)
    tails = [sup_abs_wiener_tail(v) for v in b]
    assert np.all(np.diff(tails) < 0)
    assert np.all(np.diff([sup_abs_wiener_tail(v) for v in np.linspace(0.01, 0.5, 50)]) <= 0)
    assert sup_abs_wiener_quantile(0.05) == pytest.approx(2.2414, abs=1e-4)


def test_series_small_b():
    assert sup_abs_wiener_tail(0.05) == pytest.approx(1.0, abs=1e-12)
    # P(sup|w| < b) ~ (4/pi) exp(-pi^2 / (8 b^2)) for small b
    b = 0.4
    assert 1 - sup_abs_wiener_tail(b) == pytest.approx(4 / math.pi * math.exp(-math.pi**2 / (8 * b * b)), rel=1e-6)


def test_normal_quantile():
    assert abs(mc_critical_value(Distribution.NORMAL, 0.05) - 1.6449) < 1e-4


def test_int_sq_support_boundary():
    c = mc_critical_value(Distribution.INT_SQ, 0.9999, replications=5000, n_steps=256)
    assert 0 < c < 0.05


def test_invalid_alpha():
    for a in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            mc_critical_value(Distribution.INT_SQ, a, replications=10)


def test_moments_stable_under_refinement():
    m1, v1 = int_sq_wiener_moments(20_000, 512, seed=1)
    m2, v2 = int_sq_wiener_moments(20_000, 1024, seed=1)
    se_m = math.sqrt(1 / 3 / 20_000)
    assert abs(m1 - 0.5) < 3 * se_m and abs(m2 - 0.5) < 3 * se_m
    # Var of the sample variance: E X^4 - Var^2 with E X^4 = 3.4/... estimated from data
    assert abs(v1 - 1 / 3) < 0.03 and abs(v2 - 1 / 3) < 0.03


def test_mc_tail_matches_series():
    sup = functional_samples(Distribution.SUP_ABS, 10_000, n_steps=8192, seed=3)
    for b in (0.75, 1.0, 1.5, 2.2414, 3.0):
        p = sup_abs_wiener_tail(b)
        se = math.sqrt(p * (1 - p) / len(sup))
        assert abs(np.mean(sup > b) - p) < 3 * se + 1e-12


def test_disjoint_seed_quantiles_agree():
    a = functional_samples(Distribution.INT_SQ, 20_000, n_steps=512, seed=4)
    b = functional_samples(Distribution.INT_SQ, 20_000, n_steps=512, seed=5)
    qa, qb = np.quantile(a, 0.95), np.quantile(b, 0.95)
    boot = np.random.default_rng(0)
    se = np.std([np.quantile(boot.choice(a, len(a)), 0.95) for _ in range(200)])
    assert abs(qa - qb) < 3 * math.sqrt(2) * se


def test_exceedance_frequency(int_sq_table, sup_abs_table):
    for table, dist in ((int_sq_table, Distribution.INT_SQ), (sup_abs_table, Distribution.SUP_ABS)):
        fresh = functional_samples(dist, 20_000, seed=77)
        for alpha in (0.05, 0.1):
            freq = np.mean(fresh > table.critical_value(alpha))
            assert abs(freq - alpha) < 2.5 * math.sqrt(alpha * (1 - alpha) / 20_000) + 0.002


def test_quantile_table_cache(tmp_path):
    t1 = quantile_table("int-sq-wiener", replications=2000, n_steps=128, seed=3, directory=tmp_path)
    files = list(tmp_path.iterdir())
    assert len(files) == 1
    t2 = quantile_table("int-sq-wiener", replications=2000, n_steps=128, seed=3, directory=tmp_path)
    assert t1 == t2
    assert QuantileTable.from_json(t1.to_json()) == t1
    with pytest.raises(KeyError):
        t1.critical_value(0.07)


def test_sample_agrees_with_ks_law():
    # the std-normal "functional" is just the normal law
    z = functional_samples(Distribution.NORMAL, 3000, seed=2)
    assert stats.kstest(z, "norm").pvalue > 1e-3
