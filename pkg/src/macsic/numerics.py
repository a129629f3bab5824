"""
Scalar kernels used throughout the package.

Everything here is a pure function of its arguments. Functions accept numpy
arrays where that is cheap and return floats for scalar input.

Two conventions matter downstream:

* ``Q(x)`` is the Gaussian tail probability ``Pr{Z > x}`` and is always taken
  through the complementary error function / ``log_ndtr``, never as
  ``1 - Phi(x)``.
* Powers ``Q(x)**a`` with astronomically large ``a`` (``a = 2**K - 1`` with
  ``K`` up to 1024) are carried in the log domain.  :func:`neg_log_q` gives
  ``-ln Q(x)`` to full relative precision even when ``Q(x)`` rounds to one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import DomainError, UnsupportedRangeError

__all__ = [
    "QuadratureRule",
    "binary_entropy",
    "gauss_hermite",
    "gaussian_q",
    "gaussian_q_inv",
    "gaussian_q_inv_log",
    "log_q",
    "log_neg_log_q",
    "log_q_pow",
    "log_q_pow_log_a",
    "marcum_q",
    "marcum_q_pair",
    "neg_log_q",
    "q_pow",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_SERIES_REL_TOL = 1e-18
_SERIES_SWITCH = 0.5

MARCUM_MAX_ORDER = 1e5
MARCUM_MAX_ARG = 1e5


def _as_finite(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite, got {x!r}")
    return arr


def _out(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def gaussian_q(x):
    """Gaussian tail probability ``Pr{Z > x}`` for a standard normal ``Z``."""
    arr = _as_finite(x)
    return _out(0.5 * special.erfc(arr / math.sqrt(2.0)))


def log_q(x):
    """``ln Q(x)``, accurate in both tails."""
    arr = _as_finite(x)
    return _out(special.log_ndtr(-arr))


def neg_log_q(x):
    """Return ``-ln Q(x) = -ln(1 - Q(-x))`` with full relative precision.

    Where ``u = Q(-x) <= 1/2`` the logarithm is summed as the series
    ``sum_i u**i / i`` until a term drops below 1e-18 of the partial sum, so
    the result stays exact when ``1 - u`` rounds to one.  Otherwise ``Q(x)`` is
    bounded away from one and ``log_ndtr`` is used directly.
    """
    arr = _as_finite(x)
    u = 0.5 * special.erfc(-arr / math.sqrt(2.0))
    out = np.empty_like(u)

    big = u > _SERIES_SWITCH
    out[big] = -special.log_ndtr(-arr[big])

    small = ~big
    us = u[small]
    total = us.copy()
    term = us.copy()
    i = 1
    active = us > 0
    while np.any(active):
        i += 1
        term = term * us
        inc = term / i
        total = np.where(active, total + inc, total)
        active = active & (inc > _SERIES_REL_TOL * total)
    out[small] = total
    return _out(out)


def log_neg_log_q(x):
    """``ln(-ln Q(x))`` without underflow.

    Once ``Q(-x)`` drops below 1e-200, ``-ln Q(x)`` equals ``Q(-x)`` to working
    precision and its logarithm is taken directly from ``log_ndtr``; this keeps
    products like ``2**1000 * Q(38)`` exact where ``Q(38)`` is subnormal.
    """
    arr = _as_finite(x)
    tiny = 0.5 * special.erfc(-arr / math.sqrt(2.0)) < 1e-200
    out = np.empty_like(arr)
    out[tiny] = special.log_ndtr(arr[tiny])
    with np.errstate(divide="ignore"):
        out[~tiny] = np.log(np.asarray(neg_log_q(arr[~tiny])))
    return _out(out)


def log_q_pow_log_a(x, log_a):
    """``ln(Q(x)**a)`` with the exponent given as ``ln a`` (may exceed 709)."""
    la = np.asarray(log_a, dtype=float)
    if np.any(np.isnan(la)) or np.any(la == np.inf):
        raise DomainError(f"log exponent must be < inf, got {log_a!r}")
    return _out(-np.exp(la + np.asarray(log_neg_log_q(x))))


def log_q_pow(x, a):
    """``ln(Q(x)**a) = -a * neg_log_q(x)``; ``a`` must be a finite real >= 0."""
    a_arr = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a_arr)) or np.any(a_arr < 0):
        raise DomainError(f"exponent must be finite and >= 0, got {a!r}")
    with np.errstate(divide="ignore"):
        res = log_q_pow_log_a(x, np.log(a_arr))
    return _out(np.where(a_arr == 0, 0.0, res))


def q_pow(x, a):
    """Stable ``Q(x)**a``.

    Naive powering fails once ``1 - Q(-x)`` rounds to one, e.g.
    ``Q(-9)**2**64`` evaluates to exactly 1.0 instead of about 0.1247.
    """
    return _out(np.exp(log_q_pow(x, a)))


def gaussian_q_inv_log(log_p):
    """Solve ``ln Q(x) = log_p`` for ``x`` (vectorised Newton on ``log_ndtr``).

    Works for probabilities far below the smallest double, which is what
    ``Q^{-1}(2**-K)`` needs for ``K`` near 1024.
    """
    lp = np.asarray(log_p, dtype=float)
    if np.any(~np.isfinite(lp)) or np.any(lp >= 0):
        raise DomainError(f"log-probability must be finite and < 0, got {log_p!r}")
    p = np.exp(lp)
    # start from the more accurate of the two quantile routes
    x = np.where(
        p < 0.5,
        -special.ndtri(np.clip(p, 1e-300, 0.5)),
        special.ndtri(np.clip(-np.expm1(lp), 1e-300, 0.5)),
    )
    far = p <= 1e-300
    if np.any(far):
        # leading tail asymptote ln Q(x) ~ -x^2/2 - ln(x sqrt(2 pi))
        y = np.sqrt(-2.0 * lp[far])
        for _ in range(4):
            y = np.sqrt(np.maximum(-2.0 * (lp[far] + np.log(y) + _LOG_SQRT_2PI), 1.0))
        x = x.copy()
        x[far] = y
    for _ in range(30):
        lq = special.log_ndtr(-x)
        # d/dx ln Q(x) = -phi(x)/Q(x)
        slope = -np.exp(-0.5 * x * x - _LOG_SQRT_2PI - lq)
        step = (lq - lp) / slope
        x = x - step
        # quadratic convergence: a step this small leaves only roundoff behind
        if np.all(np.abs(step) <= 1e-9 * np.maximum(1.0, np.abs(x))):
            break
    return _out(x)


def gaussian_q_inv(p):
    """Inverse of :func:`gaussian_q` on the open interval (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0) or np.any(arr >= 1):
        raise DomainError(f"probability must lie in (0, 1), got {p!r}")
    x = -special.ndtri(arr)
    # one Newton pass against erfc in absolute terms tightens the upper tail
    for _ in range(3):
        q = 0.5 * special.erfc(x / math.sqrt(2.0))
        dens = np.exp(-0.5 * x * x - _LOG_SQRT_2PI)
        ok = dens > 0
        x = np.where(ok, x + (q - arr) / np.where(ok, dens, 1.0), x)
    return _out(x)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights of a rule for the Gaussian measure ``Dx``.

    ``sum(weights * f(nodes))`` approximates ``E f(Z)`` with ``Z ~ N(0, 1)``.
    """

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        weights = np.array(self.weights, dtype=float)
        if nodes.ndim != 1 or nodes.shape != weights.shape or nodes.size < 1:
            raise DomainError("nodes and weights must be 1-D arrays of equal length >= 1")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise DomainError("weights must be finite and nonnegative")
        if nodes.size > 1 and np.any(np.diff(nodes) <= 0):
            raise DomainError("nodes must be strictly increasing")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights sum to {weights.sum()!r}, expected 1")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return self.nodes.size

    @property
    def log_weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.weights)

    def expect(self, values) -> float:
        """Weighted sum of ``values`` (an array at the nodes, or a callable)."""
        if callable(values):
            values = values(self.nodes)
        return float(np.dot(self.weights, values))


@lru_cache(maxsize=32)
def gauss_hermite(n: int = 300) -> QuadratureRule:
    """Gauss-Hermite rule with ``n`` nodes, mapped to the Gaussian measure.

    Physicists' nodes are scaled by sqrt(2) and weights by 1/sqrt(pi).  The
    rule is exact for polynomials up to degree ``2n - 1``.
    """
    if isinstance(n, bool) or int(n) != n or not 1 <= n <= 1024:
        raise DomainError(f"quadrature order must be an integer in [1, 1024], got {n!r}")
    n = int(n)
    if n == 1:
        return QuadratureRule(np.zeros(1), np.ones(1))
    x, w = special.roots_hermite(n)
    w = w / math.sqrt(math.pi)
    return QuadratureRule(x * math.sqrt(2.0), w / w.sum())


def marcum_q_pair(order: float, b: float, c: float) -> tuple[float, float]:
    """Return ``(Q_order(b, c), 1 - Q_order(b, c))``.

    ``Q_order(b, c) = Pr{X > c**2}`` for ``X`` noncentral chi-square with
    ``2*order`` degrees of freedom and noncentrality ``b**2``.  Evaluated as
    the Poisson(b**2/2) mixture of central chi-square tails, summed over a
    window of +-12 standard deviations around the Poisson mode.  Both
    complementary values are summed separately so neither loses precision.
    """
    for name, val in (("order", order), ("b", b), ("c", c)):
        if not math.isfinite(val):
            raise DomainError(f"{name} must be finite, got {val!r}")
    if order <= 0:
        raise DomainError(f"order must be > 0, got {order!r}")
    if b < 0 or c < 0:
        raise DomainError("b and c must be >= 0")
    if order > MARCUM_MAX_ORDER or b > MARCUM_MAX_ARG or c > MARCUM_MAX_ARG:
        raise UnsupportedRangeError(
            f"marcum_q envelope is order <= {MARCUM_MAX_ORDER:g}, b, c <= {MARCUM_MAX_ARG:g}; "
            f"got order={order!r}, b={b!r}, c={c!r}"
        )
    if c == 0:
        return 1.0, 0.0
    lam = 0.5 * b * b
    x = 0.5 * c * c
    if lam == 0:
        return float(special.gammaincc(order, x)), float(special.gammainc(order, x))
    sd = math.sqrt(lam)
    lo = max(0, int(math.floor(lam - 12.0 * sd - 30.0)))
    hi = int(math.ceil(lam + 12.0 * sd + 30.0))
    k = np.arange(lo, hi + 1, dtype=float)
    log_pois = -lam + k * math.log(lam) - special.gammaln(k + 1.0)
    weights = np.exp(log_pois)
    upper = float(np.sum(weights * special.gammaincc(order + k, x)))
    lower = float(np.sum(weights * special.gammainc(order + k, x)))
    return min(upper, 1.0), min(lower, 1.0)


def marcum_q(order: float, b: float, c: float) -> float:
    """Generalized Marcum Q-function (validation-scale kernel)."""
    return marcum_q_pair(order, b, c)[0]


def binary_entropy(p) -> float:
    """Binary entropy in bits with ``0 log 0 = 0``."""
    arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
        raise DomainError(f"probability must lie in [0, 1], got {p!r}")
    return _out((special.entr(arr) + special.entr(1.0 - arr)) / math.log(2.0))
