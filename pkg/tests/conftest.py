import os

import pytest

from smallnoise.refdist import Distribution, quantile_table


@pytest.fixture(scope="session", autouse=True)
def cache_dir(tmp_path_factory):
    """Keep calibration tables of the test session out of the user cache."""
    path = tmp_path_factory.mktemp("sncache")
    old = os.environ.get("SMALLNOISE_CACHE_DIR")
    os.environ["SMALLNOISE_CACHE_DIR"] = str(path)
    yield path
    if old is None:
        os.environ.pop("SMALLNOISE_CACHE_DIR", None)
    else:
        os.environ["SMALLNOISE_CACHE_DIR"] = old


@pytest.fixture(scope="session")
def int_sq_table(cache_dir):
    return quantile_table(Distribution.INT_SQ)


@pytest.fixture(scope="session")
def sup_abs_table(cache_dir):
    return quantile_table(Distribution.SUP_ABS)


@pytest.fixture(scope="session")
def int_sq_reference(cache_dir):
    """Large independent sample of int_0^1 w^2 for two-sample comparisons."""
    from smallnoise.refdist import functional_samples

    return functional_samples(Distribution.INT_SQ, 40_000, seed=9_001)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdicts, one line per criterion."""
    import sys

    mod = next((m for name, m in sys.modules.items() if name.rsplit(".", 1)[-1] == "test_acceptance"), None)
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
