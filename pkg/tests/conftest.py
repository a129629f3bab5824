import numpy as np
import pytest
from scipy import integrate, special, stats


def quad_block_error(K: int, s: float) -> float:
    """Direct x-domain quadrature of the orthogonal-signalling error probability."""
    a = 2.0**K - 1.0
    rs = np.sqrt(s)
    f = lambda x: np.exp(stats.norm.logpdf(x - rs) + a * special.log_ndtr(x))
    lo, hi = min(-12.0, rs - 14.0), max(14.0, rs + 14.0)
    val, _ = integrate.quad(f, lo, hi, points=[0.0, rs], limit=500, epsabs=1e-15, epsrel=1e-13)
    return 1.0 - val


def quad_residual_upper(K: int, s: float) -> float:
    """Direct quadrature of ``1 - E[1{correct} * posterior-correct]`` over the max statistic."""
    a = 2.0**K - 1.0
    rs = np.sqrt(s)

    def f(x):
        lc = stats.norm.logpdf(x - rs) + a * special.log_ndtr(x)
        lw = np.log(a) + stats.norm.logpdf(x) + (a - 1) * special.log_ndtr(x) + special.log_ndtr(x - rs)
        return np.exp(lc) * special.expit(lc - lw)

    lo, hi = min(-12.0, rs - 14.0), max(14.0, rs + 14.0)
    val, _ = integrate.quad(f, lo, hi, points=[0.0, rs], limit=500, epsabs=1e-15, epsrel=1e-13)
    return 1.0 - val


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = {}


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records one acceptance line and returns ``ok``."""
    store = request.config.stash[_ACCEPTANCE_KEY]

    def record(n: int, ok: bool, detail: str) -> bool:
        store[n] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_ACCEPTANCE_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(store):
        ok, detail = store[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {detail}")
