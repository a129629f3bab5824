"""
Large-system error probabilities and residual-interference maps.

All quantities depend on the effective SNR ``s = eta * N * P_j`` of a user and
on the exponent ``a = 2**K - 1``, which is carried as ``log a`` so that ``K``
can reach 1024.

Both Gaussian integrals are rewritten with the quantile map
``M = Phi^{-1}(Phi(Z)**(1/a))``, which has the law of the largest of ``a``
independent standard normals.  Substituting ``x = sqrt(s) - M`` removes the
sharp step of ``Q(x - sqrt(s))**a`` (width about ``1/sqrt(2K ln 2)``) from the
integrand:

    p       = E Q(sqrt(s) - M)
    v_u - p = E[Q(sqrt(s) - M) F(M) / (1 + F(M))]

Each expectation over ``Z`` is then a smooth, log-concave-looking integral and a
Gauss-Hermite rule centred on its mode converges to machine precision for all
``K <= 1024``.  A rule applied directly in ``x`` needs thousands of nodes once
``K`` exceeds a few dozen.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special
from scipy.interpolate import CubicSpline

from .errors import ContractError, DomainError
from .numerics import (
    QuadratureRule,
    gauss_hermite,
    gaussian_q,
    gaussian_q_inv,
    gaussian_q_inv_log,
    marcum_q_pair,
    log_neg_log_q,
)

K_MAX = 1024
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class BoundKind(enum.Enum):
    """Which surrogate for the residual interference fraction to use."""

    UPPER = "upper"
    LOWER = "lower"

    @classmethod
    def parse(cls, value) -> "BoundKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise DomainError(f"bound must be 'upper' or 'lower', got {value!r}") from None


@dataclass(frozen=True)
class CodeSpec:
    """Message size ``K`` in bits and per-user blocklength factor ``N``."""

    K: int
    N: float = 1.0

    def __post_init__(self):
        if isinstance(self.K, bool) or int(self.K) != self.K:
            raise DomainError(f"K must be an integer, got {self.K!r}")
        if not 0 <= self.K <= K_MAX:
            raise DomainError(f"K must lie in [0, {K_MAX}], got {self.K!r}")
        if not (math.isfinite(self.N) and self.N > 0):
            raise DomainError(f"N must be finite and > 0, got {self.N!r}")
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "N", float(self.N))

    @property
    def rate(self) -> float:
        """Spectral efficiency ``R = K / N``."""
        return self.K / self.N

    @property
    def log_a(self) -> float:
        """``ln(2**K - 1)``; ``-inf`` for ``K = 0``."""
        return _log_a(self.K)


def _log_a(K: int) -> float:
    if K == 0:
        return -math.inf
    return K * math.log(2.0) + math.log1p(-(2.0 ** -K))


def _code(code) -> CodeSpec:
    if isinstance(code, CodeSpec):
        return code
    return CodeSpec(int(code))


def _check_s(s):
    arr = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise DomainError(f"effective SNR must be finite and >= 0, got {s!r}")
    return arr


def _out(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def _max_quantile(K: int, z):
    """Quantile map ``m(z) = Phi^{-1}(Phi(z)**(1/a))``.

    If ``Z`` is standard normal then ``m(Z)`` has the law of the largest of
    ``a = 2**K - 1`` independent standard normals.  Solved in the log domain so
    that ``a`` may be as large as ``2**1024``.
    """
    z = np.asarray(z, dtype=float)
    if K == 1:
        return z.copy()
    log_a = _log_a(K)
    log_w = np.asarray(log_neg_log_q(-z)) - log_a
    w = np.exp(log_w)
    ratio = np.where(w > 0, -np.expm1(-w) / np.where(w > 0, w, 1.0), 1.0)
    log_q = log_w + np.log(ratio)
    m = np.empty_like(z)
    lower = w > math.log(2.0)
    if np.any(lower):
        m[lower] = -np.asarray(gaussian_q_inv_log(-w[lower]))
    if np.any(~lower):
        m[~lower] = gaussian_q_inv_log(log_q[~lower])
    return m


_Z_GRID = np.linspace(-40.0, 80.0, 1201)


@lru_cache(maxsize=None)
def _m_on_grid(K: int) -> np.ndarray:
    m = _max_quantile(K, _Z_GRID)
    m.setflags(write=False)
    return m


def _log_integrands(m, rs, log_a, excess: bool):
    """Log of ``Q(sqrt s - m)`` and, optionally, ``Q(sqrt s - m) * F/(1+F)`` at ``m``."""
    log_tail = special.log_ndtr(m - rs)
    if not excess:
        return log_tail, None
    log_f = special.log_ndtr(m) + rs * m - 0.5 * rs * rs - log_tail - log_a
    return log_tail, log_tail + special.log_expit(log_f)


def _adaptive_sum(log_g_grid, K, rs, log_a, rule, which):
    """Mode-centred Gauss-Hermite sum of ``exp(log g(z))`` against ``Dz``."""
    lg = log_g_grid - 0.5 * _Z_GRID ** 2
    n = _Z_GRID.size
    idx = np.clip(np.argmax(lg, axis=1), 1, n - 2)
    rows = np.arange(lg.shape[0])
    h0, h1, h2 = lg[rows, idx - 1], lg[rows, idx], lg[rows, idx + 1]
    dz = _Z_GRID[1] - _Z_GRID[0]
    curv = (h0 - 2.0 * h1 + h2) / (dz * dz)
    neg = curv < -1e-9
    shift = np.where(neg, 0.5 * (h0 - h2) / np.where(neg, h0 - 2.0 * h1 + h2, -1.0), 0.0)
    centre = _Z_GRID[idx] + np.clip(shift, -1.0, 1.0) * dz
    sig = np.clip(np.where(neg, 1.0 / np.sqrt(np.abs(curv)), 1.0), 0.1, 1.0)
    w = rule.nodes
    z = centre[:, None] + sig[:, None] * w
    m = _max_quantile(K, z)
    parts = _log_integrands(m, rs, log_a, which == 1)
    with np.errstate(divide="ignore"):
        logw = rule.log_weights + 0.5 * w * w + np.log(sig)[:, None] - 0.5 * z * z
    return np.sum(np.exp(logw + parts[which]), axis=1)


def _integrals(K: int, s: np.ndarray, rule: QuadratureRule, excess: bool):
    """``(p, v_u - p)`` for an array of effective SNRs.

    Both are smooth expectations over the largest competing noise component:
    ``p = E Q(sqrt s - M)`` and ``v_u - p = E[Q(sqrt s - M) F(M)/(1 + F(M))]``.
    """
    flat = np.atleast_1d(s).ravel()
    p = np.empty(flat.shape)
    e = np.empty(flat.shape) if excess else None
    if K == 0:
        p[:] = 0.0
        return p.reshape(np.shape(s)), None
    log_a = _log_a(K)
    mg = _m_on_grid(K)
    for start in range(0, flat.size, 256):
        rs = np.sqrt(flat[start:start + 256])[:, None]
        tail, ex = _log_integrands(mg, rs, log_a, excess)
        p[start:start + 256] = _adaptive_sum(tail, K, rs, log_a, rule, 0)
        if excess:
            e[start:start + 256] = _adaptive_sum(ex, K, rs, log_a, rule, 1)
    cap = -math.expm1(-K * math.log(2.0))
    p = np.clip(p, 0.0, cap).reshape(np.shape(s))
    if excess:
        e = np.clip(e, 0.0, 1.0).reshape(np.shape(s))
    return p, e


def _block_error_vec(K: int, s: np.ndarray, rule: QuadratureRule) -> np.ndarray:
    return _integrals(K, s, rule, excess=False)[0]


def block_error_prob(code, s, rule: QuadratureRule | None = None):
    """Per-user block error probability in the large-system limit.

    ``p = 1 - int Q(x - sqrt(s))**(2**K - 1) Dx``.  ``s`` may be an array.
    """
    code = _code(code)
    arr = _check_s(s)
    rule = rule or gauss_hermite(300)
    return _out(_block_error_vec(code.K, arr, rule))


def log_posterior_ratio(code, s, x):
    """``ln F(x)``; the posterior error probability is ``1/(1 + F)``."""
    code = _code(code)
    if code.K == 0:
        raise DomainError("posterior error probability needs K >= 1")
    arr_s = _check_s(s)
    xs = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(xs)):
        raise DomainError(f"x must be finite, got {x!r}")
    rs = np.sqrt(arr_s)
    return _out(
        special.log_ndtr(xs) + rs * xs - 0.5 * arr_s - special.log_ndtr(xs - rs) - code.log_a
    )


def posterior_error_prob(code, s, x):
    """Posterior probability that the decision is wrong given the max statistic ``x``.

    ``x`` is the largest coordinate of the matched-filter output, normalised
    by the square root of the interference-plus-noise power.
    """
    return _out(special.expit(-np.asarray(log_posterior_ratio(code, s, x))))


def residual_fraction_upper(code, s, rule: QuadratureRule | None = None):
    """Upper bound on the fraction of a group's interference left after soft cancellation.

    Uses the posterior conditioned on the largest matched-filter output as the
    cancellation confidence.  Equals ``p + E`` with ``E >= 0``, so the
    ordering against :func:`residual_fraction_lower` holds by construction.
    """
    code = _code(code)
    if code.K == 0:
        raise DomainError("posterior-based residual needs K >= 1")
    arr = _check_s(s)
    rule = rule or gauss_hermite(300)
    p, e = _integrals(code.K, arr, rule, excess=True)
    return _out(np.clip(p + e, 0.0, 1.0))


def residual_fraction_lower(code, s, rule: QuadratureRule | None = None):
    """Lower bound: the residual fraction equals the block error probability."""
    return block_error_prob(code, s, rule)


def residual_fraction(code, s, bound, rule: QuadratureRule | None = None):
    bound = BoundKind.parse(bound)
    if bound is BoundKind.UPPER:
        return residual_fraction_upper(code, s, rule)
    return residual_fraction_lower(code, s, rule)


def single_user_pe(K: int, ebno, rule: QuadratureRule | None = None):
    """Single-user (equal-power) error probability at linear ``Eb/N0``."""
    e = np.asarray(ebno, dtype=float)
    if not np.all(np.isfinite(e)) or np.any(e < 0):
        raise DomainError(f"ebno must be finite and >= 0, got {ebno!r}")
    return block_error_prob(CodeSpec(K), 2.0 * K * e, rule)


def pe_lower_bound(K: int, ebno):
    """Lower bound ``1 - Q(Q^{-1}(2**-K) - sqrt(2 K Eb/N0))``."""
    code = CodeSpec(K)
    e = np.asarray(ebno, dtype=float)
    if not np.all(np.isfinite(e)) or np.any(e < 0):
        raise DomainError(f"ebno must be finite and >= 0, got {ebno!r}")
    if code.K == 0:
        return _out(np.zeros_like(e))
    t = float(gaussian_q_inv_log(-code.K * math.log(2.0)))
    return _out(gaussian_q(np.sqrt(2.0 * code.K * e) - t))


def ebno_lower_bound_inverse(K: int, pe: float) -> float:
    """Linear ``Eb/N0`` at which :func:`pe_lower_bound` equals ``pe`` (closed form)."""
    if not 0 < pe < 0.5:
        raise DomainError(f"pe must lie in (0, 0.5), got {pe!r}")
    code = CodeSpec(K)
    if code.K == 0:
        raise DomainError("K must be >= 1")
    t = float(gaussian_q_inv_log(-code.K * math.log(2.0)))
    return (t + gaussian_q_inv(pe)) ** 2 / (2.0 * code.K)


def ebno_for_pe(K: int, pe: float, rule: QuadratureRule | None = None, rtol: float = 1e-12) -> float:
    """Linear ``Eb/N0`` solving ``single_user_pe(K, ebno) = pe`` by bisection."""
    code = CodeSpec(K)
    if code.K == 0:
        raise DomainError("K must be >= 1")
    if not 0 < pe < 1.0 - 2.0 ** -code.K:
        raise DomainError(f"pe must lie in (0, 1 - 2**-K), got {pe!r}")
    rule = rule or gauss_hermite(300)
    s_req = required_snr(code.K, pe, rule, rtol)
    return s_req / (2.0 * code.K)


def required_snr(K: int, pe: float, rule: QuadratureRule | None = None, rtol: float = 1e-12) -> float:
    """Smallest effective SNR ``s`` with ``block_error_prob(K, s) <= pe``."""
    rule = rule or gauss_hermite(300)
    lo, hi = 0.0, 1.0
    while _block_error_vec(K, np.asarray(hi), rule) > pe:
        lo, hi = hi, 2.0 * hi
        if hi > 1e8:
            raise DomainError(f"pe={pe!r} is not reachable")
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if _block_error_vec(K, np.asarray(mid), rule) > pe:
            lo = mid
        else:
            hi = mid
    return hi


def conditional_pe_finite(M: int, code, P: float, r_norm: float, z_norm: float) -> float:
    """Exact finite-``M`` error probability given the norms of receive word and noise.

    Minimum-distance decoding among ``2**K`` Gaussian codewords with
    per-coordinate variance ``P/M`` in ``M*N`` dimensions.  A competitor wins
    when it lies closer to the receive word than the noise norm.
    """
    code = _code(code)
    if isinstance(M, bool) or int(M) != M or M < 1:
        raise DomainError(f"M must be a positive integer, got {M!r}")
    dims = M * code.N
    if abs(dims - round(dims)) > 1e-9 or round(dims) < 1:
        raise ContractError(f"M*N must be a positive integer, got {dims!r}")
    if not (math.isfinite(P) and P > 0):
        raise DomainError(f"P must be finite and > 0, got {P!r}")
    if r_norm < 0 or z_norm < 0:
        raise DomainError("norms must be >= 0")
    if code.K == 0:
        return 0.0
    scale = math.sqrt(P / M)
    _, miss = marcum_q_pair(0.5 * round(dims), r_norm / scale, z_norm / scale)
    if miss <= 0.0:
        return 0.0
    if miss >= 1.0:
        return 1.0
    return float(-math.expm1(math.exp(code.log_a) * math.log1p(-miss)))


class ResidualCurve:
    """Tabulated ``s -> v(s)`` for one ``(K, bound, rule)`` combination.

    Density evolution and the power LP evaluate the residual map at many
    thousands of points; this caches ``ln v`` on a grid in ``sqrt(s)`` with
    spacing ``h`` and interpolates with a cubic spline.  Beyond the tabulated
    range the residual is below 1e-300 and is returned as zero.
    """

    def __init__(self, K: int, bound, rule: QuadratureRule | None = None, h: float = 0.01):
        self.K = int(K)
        self.bound = BoundKind.parse(bound)
        self.rule = rule or gauss_hermite(300)
        if self.K == 0:
            self._u_max = 0.0
            self._spline = None
            return
        code = CodeSpec(self.K)
        chunks_u, chunks_v = [], []
        u0 = 0.0
        while True:
            u = u0 + h * np.arange(400)
            v = residual_fraction(code, u * u, self.bound, self.rule)
            chunks_u.append(u)
            chunks_v.append(np.asarray(v))
            if v[-1] < 1e-300 or u[-1] > 400:
                break
            u0 = u[-1] + h
        u = np.concatenate(chunks_u)
        v = np.concatenate(chunks_v)
        keep = v > 0
        cut = np.argmin(keep) if not keep.all() else v.size
        u, v = u[:cut], v[:cut]
        self._u_max = float(u[-1])
        self._spline = CubicSpline(u, np.log(v))

    def __call__(self, s):
        arr = _check_s(s)
        if self.K == 0:
            return _out(np.zeros_like(arr))
        u = np.sqrt(arr)
        inside = u <= self._u_max
        out = np.zeros_like(u)
        out[inside] = np.exp(self._spline(u[inside]))
        return _out(np.minimum(out, 1.0))


@lru_cache(maxsize=64)
def _cached_curve(K: int, bound: BoundKind, n: int) -> ResidualCurve:
    return ResidualCurve(K, bound, gauss_hermite(n))


def residual_curve(K: int, bound, n: int = 300) -> ResidualCurve:
    """Shared, cached :class:`ResidualCurve` for a Gauss-Hermite rule of order ``n``."""
    return _cached_curve(int(K), BoundKind.parse(bound), int(n))


def block_error_curve(K: int, n: int = 300) -> ResidualCurve:
    """Cached tabulation of the block error probability (same as the lower bound)."""
    return residual_curve(K, BoundKind.LOWER, n)
