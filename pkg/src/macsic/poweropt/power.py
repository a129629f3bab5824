"""
Power-profile optimisation by linear programming.

For a fixed set of candidate powers the residual fractions ``v_j(eta)`` do not
depend on the group sizes, so the requirement that every iteration improves
the multiuser efficiency by at least ``eps`` is linear in the fractions
``alpha_j``.  The optimiser wraps that LP in a one-dimensional search over the
upper end ``eta_hi`` of the efficiency interval, which fixes the final error
probability.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..asymptotic import (
    BoundKind,
    CodeSpec,
    block_error_prob,
    block_error_curve,
    required_snr,
    residual_curve,
)
from ..errors import ContractError, DomainError
from ..evolution import PowerProfile, evolve
from ..numerics import binary_entropy, gauss_hermite
from .simplex import LpProblem, LpSolution, simplex_solve

DEFAULT_EPS = 1e-3


@dataclass(frozen=True)
class EtaGrid:
    """``G`` uniformly spaced efficiencies on ``[lo, hi]`` with progress margin ``eps``."""

    lo: float
    hi: float
    G: int = 256
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if not 0 < self.lo < self.hi < 1:
            raise DomainError(f"need 0 < lo < hi < 1, got lo={self.lo!r}, hi={self.hi!r}")
        if isinstance(self.G, bool) or int(self.G) != self.G or self.G < 2:
            raise DomainError(f"G must be an integer >= 2, got {self.G!r}")
        if not (math.isfinite(self.eps) and self.eps > 0):
            raise DomainError(f"eps must be > 0, got {self.eps!r}")

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, int(self.G))

    @property
    def rhs(self) -> np.ndarray:
        """Interference budget ``1/(eta + eps) - 1`` at each grid point."""
        return 1.0 / (self.points + self.eps) - 1.0


@dataclass(frozen=True)
class FadingModel:
    """Discrete path-loss model: power gains ``w_l`` with probabilities ``Pr(w_l)``.

    Defaults to ``w_l = 1/l**2`` and uniform probabilities.
    """

    L: int
    weights: tuple = None
    probabilities: tuple = None

    def __post_init__(self):
        if isinstance(self.L, bool) or int(self.L) != self.L or self.L < 1:
            raise DomainError(f"L must be a positive integer, got {self.L!r}")
        L = int(self.L)
        w = np.arange(1, L + 1, dtype=float) ** -2 if self.weights is None else np.asarray(self.weights, float)
        pr = np.full(L, 1.0 / L) if self.probabilities is None else np.asarray(self.probabilities, float)
        if w.shape != (L,) or pr.shape != (L,):
            raise ContractError("weights and probabilities need L entries each")
        if np.any(w <= 0) or np.any(np.diff(w) >= 0) or not np.all(np.isfinite(w)):
            raise DomainError("fading weights must be positive and strictly decreasing")
        if np.any(pr < 0) or abs(pr.sum() - 1.0) > 1e-9:
            raise DomainError("level probabilities must be >= 0 and sum to 1")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "weights", tuple(float(x) for x in w))
        object.__setattr__(self, "probabilities", tuple(float(x) for x in pr))

    @property
    def mu(self) -> float:
        """Average fading gain ``(1/L) sum_l w_l``."""
        return float(np.mean(self.weights))


def geometric_power_grid(p_min: float, count: int = 128, span_db: float = 30.0) -> np.ndarray:
    """``count`` powers from ``p_min`` upward, spanning ``span_db`` decibels."""
    if not (math.isfinite(p_min) and p_min > 0):
        raise DomainError(f"p_min must be > 0, got {p_min!r}")
    if count < 1:
        raise DomainError("count must be >= 1")
    if count == 1:
        return np.array([p_min])
    return p_min * 10.0 ** (np.linspace(0.0, span_db, count) / 10.0)


def _check_power_grid(power_grid) -> np.ndarray:
    P = np.atleast_1d(np.asarray(power_grid, dtype=float))
    if P.ndim != 1 or P.size == 0:
        raise ContractError("power grid must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(P)) or np.any(P <= 0):
        raise DomainError("candidate powers must be finite and > 0")
    if np.any(np.diff(P) <= 0):
        raise DomainError("candidate powers must be strictly increasing")
    return P


def build_power_lp(
    code: CodeSpec,
    power_grid,
    grid: EtaGrid,
    bound=BoundKind.UPPER,
    fading: FadingModel | None = None,
    objective_weights=None,
    *,
    n: int = 300,
) -> LpProblem:
    """Assemble the power-allocation LP.

    Without fading the variables are ``alpha_j``; with fading they are
    ``alpha_{jl}`` laid out group-major (index ``j*L + l``).  Rows:
    ``sum alpha w_l P_j v(w_l eta N P_j) <= 1/(eta + eps) - 1`` for every grid
    point, plus ``sum_j alpha_j = 1`` (or one equality per fading level).
    ``objective_weights`` replaces ``w_l`` in the objective only.
    """
    P = _check_power_grid(power_grid)
    if grid.G < 1:
        raise ContractError("eta grid is empty")
    bound = BoundKind.parse(bound)
    curve = residual_curve(code.K, bound, n)
    eta = grid.points
    if fading is None:
        recv = P[None, :]
        v = np.asarray(curve(eta[:, None] * code.N * recv))
        A = recv * v
        return LpProblem(P.copy(), A, grid.rhs, np.ones((1, P.size)), [1.0])

    w = np.asarray(fading.weights)
    L = fading.L
    ow = w if objective_weights is None else np.asarray(objective_weights, dtype=float)
    if ow.shape != (L,) or np.any(ow < 0) or not np.all(np.isfinite(ow)):
        raise ContractError(f"objective_weights needs {L} finite nonnegative entries")
    recv = (P[:, None] * w[None, :]).ravel()  # index j*L + l
    v = np.asarray(curve(eta[:, None] * code.N * recv[None, :]))
    A = recv[None, :] * v
    c = (P[:, None] * ow[None, :]).ravel()
    E = np.zeros((L, P.size * L))
    for ell in range(L):
        E[ell, ell::L] = 1.0
    return LpProblem(c, A, grid.rhs, E, np.asarray(fading.probabilities))


@dataclass(frozen=True)
class OptimizerSettings:
    """Knobs of :func:`optimize_profile` (defaults follow the reference setup)."""

    n_powers: int = 128
    span_db: float = 30.0
    G: int = 256
    eta_hi_min: float = 0.9
    eta_hi_max: float = 1.0 - 1e-6
    n_scan: int = 25
    n_nesting: int = 30
    quad_n: int = 300
    evolve_max_iter: int = 100_000
    evolve_tol: float = 1e-10


@dataclass(frozen=True)
class OptimizationResult:
    """Outcome of :func:`optimize_profile`.

    ``profile`` lists the nonempty groups by *received* power; for fading runs
    ``level_alphas[j, l]`` holds the subgroup fractions over the transmit grid
    ``transmit_powers``.  ``total_power`` is the LP objective.
    """

    feasible: bool
    profile: PowerProfile | None
    achieved_pe: float
    total_power: float
    eta_hi: float
    eta_lo: float
    verified: bool
    code: CodeSpec
    transmit_powers: np.ndarray | None = None
    level_alphas: np.ndarray | None = None
    transmit_power: float = math.nan
    binding_eta: float = math.nan
    message: str = ""
    evaluations: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def ebno(self) -> float:
        """``N * P / (2K)`` for the optimised total power (linear scale)."""
        return self.code.N * self.total_power / (2.0 * self.code.K)

    @property
    def ebno_db(self) -> float:
        return 10.0 * math.log10(self.ebno) if self.feasible else math.nan

    @property
    def groups(self) -> list[tuple[float, float]]:
        if self.profile is None:
            return []
        return list(zip(self.profile.powers, self.profile.alphas))


@dataclass
class _Attempt:
    eta_hi: float
    objective: float
    result: OptimizationResult | None
    binding_eta: float = math.nan


def _binding_point(lp: LpProblem, grid: EtaGrid, n_cols: int) -> float:
    """Grid efficiency whose row is hardest to meet even with the best single column."""
    slack = lp.A_ub.min(axis=1) - lp.b_ub
    return float(grid.points[int(np.argmax(slack))])


def _profile_from_solution(x, recv, atol=1e-12) -> PowerProfile:
    keep = x > atol
    order = np.argsort(recv[keep], kind="stable")
    a = x[keep][order]
    p = recv[keep][order]
    # merge identical received powers (fading levels can collide)
    up, inv = np.unique(p, return_inverse=True)
    merged = np.zeros(up.size)
    np.add.at(merged, inv, a)
    return PowerProfile(tuple(merged / merged.sum()), tuple(up))


def _solve_at(code, target_pe, power_grid, bound, fading, eps, st: OptimizerSettings, eta_hi, p_ref, objective_weights=None):
    """One LP solve plus evolve verification at a fixed ``eta_hi``."""
    curve_n = st.quad_n
    if power_grid is None:
        P = geometric_power_grid(p_ref / eta_hi, st.n_powers, st.span_db)
    else:
        P = _check_power_grid(power_grid)
        if fading is None:
            P = P[P * eta_hi * code.N >= p_ref * code.N * (1 - 1e-12)]
            if P.size == 0:
                return _Attempt(eta_hi, math.inf, None)
    recv_max = P[-1]
    pe_curve = block_error_curve(code.K, curve_n)
    best = None
    eta_lo = 1.0 / (1.0 + recv_max)
    lp = None
    for _pass in range(2):
        if not eta_lo < eta_hi:
            break
        grid = EtaGrid(eta_lo, eta_hi, st.G, eps)
        lp = build_power_lp(code, P, grid, bound, fading, objective_weights, n=curve_n)
        if fading is not None:
            # no per-user fairness: only the user-averaged error rate is constrained
            w = np.asarray(fading.weights)
            recv = (P[:, None] * w[None, :]).ravel()
            pe_row = np.asarray(pe_curve(eta_hi * code.N * recv))
            lp = LpProblem(
                lp.c,
                np.vstack([lp.A_ub, pe_row[None, :]]),
                np.concatenate([lp.b_ub, [target_pe]]),
                lp.A_eq,
                lp.b_eq,
            )
        sol = simplex_solve(lp)
        if not sol.optimal:
            if best is None:
                return _Attempt(eta_hi, math.inf, None, _binding_point(lp, grid, P.size))
            break
        best = (sol, grid, lp)
        if fading is None:
            agg = float(np.dot(sol.x, P))
        else:
            agg = float(np.dot(sol.x, (P[:, None] * np.asarray(fading.weights)[None, :]).ravel()))
        new_lo = 1.0 / (1.0 + agg)
        if new_lo <= eta_lo * (1 + 1e-12):
            break
        eta_lo = new_lo
    if best is None:
        return _Attempt(eta_hi, math.inf, None)
    sol, grid, lp = best
    if fading is None:
        recv = P
        trans = P
    else:
        w = np.asarray(fading.weights)
        recv = (P[:, None] * w[None, :]).ravel()
        trans = np.repeat(P, fading.L)
    profile = _profile_from_solution(sol.x, recv)
    traj = evolve(code, profile, bound, st.evolve_max_iter, st.evolve_tol, n=curve_n)
    pes = np.atleast_1d(block_error_prob(code, traj.eta * code.N * profile.power_array, gauss_hermite(curve_n)))
    if fading is None:
        achieved = float(pes.max())
    else:
        achieved = float(np.dot(profile.alpha_array, pes))
    crossed = traj.eta >= eta_hi * (1 - 1e-9)
    verified = bool(crossed and achieved <= target_pe * (1 + 1e-6))
    res = OptimizationResult(
        feasible=True,
        profile=profile,
        achieved_pe=achieved,
        total_power=float(sol.objective),
        eta_hi=eta_hi,
        eta_lo=grid.lo,
        verified=verified,
        code=code,
        transmit_powers=P,
        level_alphas=None if fading is None else sol.x.reshape(P.size, fading.L),
        transmit_power=float(np.dot(sol.x, trans)),
        evaluations=1,
        extra={"lp": lp, "solution": sol, "trajectory": traj},
    )
    return _Attempt(eta_hi, float(sol.objective) if verified else math.inf, res)


def optimize_profile(
    code: CodeSpec,
    target_pe: float,
    power_grid=None,
    bound=BoundKind.UPPER,
    fading: FadingModel | None = None,
    eps: float = DEFAULT_EPS,
    settings: OptimizerSettings | None = None,
    objective_weights=None,
) -> OptimizationResult:
    """Minimum-power profile whose density evolution reaches ``target_pe``.

    For each trial ``eta_hi`` the LP is solved on ``[eta_lo, eta_hi]`` and the
    optimum is re-checked by an independent :func:`evolve` run.  The total
    power as a function of ``eta_hi`` is first scanned on a logarithmic grid in
    ``1 - eta_hi`` and then refined by golden-section interval nesting around
    the best scan point.

    ``power_grid=None`` uses 128 geometric candidates spanning 30 dB above the
    power at which a user meets the target once ``eta`` reaches ``eta_hi``; an
    explicit grid is filtered to the candidates meeting that condition.
    ``eta_lo`` starts at ``1/(1 + P_max)`` and is raised once to
    ``1/(1 + P_opt)``, the efficiency before the first iteration.
    """
    if not 0 < target_pe < 0.5:
        raise DomainError(f"target_pe must lie in (0, 0.5), got {target_pe!r}")
    if not (math.isfinite(eps) and eps > 0):
        raise DomainError(f"eps must be > 0, got {eps!r}")
    if code.K < 1:
        raise DomainError("K must be >= 1")
    bound = BoundKind.parse(bound)
    st = settings or OptimizerSettings()
    s_req = required_snr(code.K, target_pe, gauss_hermite(st.quad_n))
    p_ref = s_req / code.N
    hi_cap = min(st.eta_hi_max, 1.0 - eps - 1e-9)
    if not st.eta_hi_min < hi_cap:
        raise DomainError("eta_hi search interval is empty")

    attempts: dict[float, _Attempt] = {}

    def T(eta_hi: float) -> float:
        key = float(eta_hi)
        if key not in attempts:
            attempts[key] = _solve_at(
                code, target_pe, power_grid, bound, fading, eps, st, key, p_ref, objective_weights
            )
        return attempts[key].objective

    gaps = np.geomspace(1.0 - st.eta_hi_min, 1.0 - hi_cap, st.n_scan)
    scan = 1.0 - gaps
    values = [T(x) for x in scan]
    finite = [i for i, v in enumerate(values) if math.isfinite(v)]
    if not finite:
        last = attempts[float(scan[-1])]
        binding = next((attempts[float(x)].binding_eta for x in scan if math.isfinite(attempts[float(x)].binding_eta)), math.nan)
        return OptimizationResult(
            feasible=False,
            profile=None,
            achieved_pe=math.nan,
            total_power=math.inf,
            eta_hi=float(scan[-1]),
            eta_lo=math.nan,
            verified=False,
            code=code,
            binding_eta=binding,
            message=f"LP infeasible for every eta_hi in [{scan[0]:.6g}, {scan[-1]:.6g}]; binding eta {binding:.6g}",
            evaluations=len(attempts),
        )
    i = min(finite, key=lambda k: values[k])
    # golden section in log(1 - eta_hi) on the bracket around the best scan point
    a = math.log(gaps[max(i - 1, 0)])
    b = math.log(gaps[min(i + 1, len(gaps) - 1)])
    f = lambda t: T(1.0 - math.exp(t))
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(st.n_nesting):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    best = min((att for att in attempts.values() if att.result is not None and math.isfinite(att.objective)),
               key=lambda att: att.objective)
    return replace(best.result, evaluations=len(attempts))


def near_far_gain(
    code: CodeSpec,
    target_pe: float,
    fading: FadingModel,
    bound=BoundKind.UPPER,
    eps: float = DEFAULT_EPS,
    settings: OptimizerSettings | None = None,
    power_grid=None,
) -> tuple[OptimizationResult, OptimizationResult]:
    """Run the LP once with attenuation weights and once with unit weights.

    Unit weights mean every user is received at its transmit power, which is
    the LP without fading.  Returns ``(weighted, equal_gain)``; the ratio of
    their total powers is the near-far gain.
    """
    weighted = optimize_profile(code, target_pe, power_grid, bound, fading, eps, settings)
    equal_gain = optimize_profile(code, target_pe, power_grid, bound, None, eps, settings)
    return weighted, equal_gain


def single_group_feasible(code: CodeSpec, P: float, grid: EtaGrid, bound=BoundKind.UPPER, n: int = 300) -> bool:
    """Whether the one-candidate LP ``alpha = (1,)`` at power ``P`` is feasible."""
    lp = build_power_lp(code, [P], grid, bound, n=n)
    return simplex_solve(lp).optimal


def fading_outer_bound(R: float, K: int, pe: float, fading: FadingModel, a: float | None = None) -> float:
    """Lower bound on ``Eb/(mu N0)`` with discrete fading (linear scale).

    ``(1/(2R)) sum_l w_l [4**(a R l / L) - 4**(a R (l-1) / L)]`` with the
    finite-length factor ``a = 1 - pe - H2(pe)/K`` unless ``a`` is given.
    """
    if not (math.isfinite(R) and R > 0):
        raise DomainError(f"R must be > 0, got {R!r}")
    if a is None:
        if not 0 < pe < 1:
            raise DomainError(f"pe must lie in (0, 1), got {pe!r}")
        if K < 1:
            raise DomainError("K must be >= 1")
        a = 1.0 - pe - float(binary_entropy(pe)) / K
    L = fading.L
    ell = np.arange(1, L + 1, dtype=float)
    log4 = math.log(4.0)
    inc = np.exp(a * R * ell / L * log4) * -np.expm1(-a * R / L * log4)
    return float(np.dot(fading.weights, inc) / (2.0 * R))


def min_ebno_for_rate(
    K: int,
    R: float,
    target_pe: float,
    bound=BoundKind.UPPER,
    fading: FadingModel | None = None,
    eps: float = DEFAULT_EPS,
    settings: OptimizerSettings | None = None,
    power_grid=None,
) -> OptimizationResult:
    """Optimised profile at spectral efficiency ``R`` (``N = K/R``)."""
    if not (math.isfinite(R) and R > 0):
        raise DomainError(f"R must be > 0, got {R!r}")
    return optimize_profile(CodeSpec(K, K / R), target_pe, power_grid, bound, fading, eps, settings)


@dataclass(frozen=True)
class TradeoffPoint:
    ebno: float
    bound: BoundKind
    rate: float
    result: OptimizationResult | None

    @property
    def ebno_db(self) -> float:
        return 10.0 * math.log10(self.ebno)

    @property
    def attained(self) -> bool:
        return self.result is not None


def max_rate_at_ebno(
    K: int,
    ebno: float,
    target_pe: float,
    bound=BoundKind.UPPER,
    fading: FadingModel | None = None,
    eps: float = DEFAULT_EPS,
    settings: OptimizerSettings | None = None,
    r_bounds: tuple[float, float] = (1e-3, 8.0),
    steps: int = 20,
) -> TradeoffPoint:
    """Largest ``R = K/N`` whose optimised profile fits within ``Eb/N0 = ebno``.

    Bisection on ``log N``; ``rate`` is 0 and ``result`` ``None`` when even the
    smallest rate in ``r_bounds`` is out of reach.
    """
    bound = BoundKind.parse(bound)

    def fits(R):
        res = min_ebno_for_rate(K, R, target_pe, bound, fading, eps, settings)
        return res if res.feasible and res.ebno <= ebno else None

    lo, hi = math.log(r_bounds[0]), math.log(r_bounds[1])
    best = fits(math.exp(lo))
    if best is None:
        return TradeoffPoint(ebno, bound, 0.0, None)
    top = fits(math.exp(hi))
    if top is not None:
        return TradeoffPoint(ebno, bound, math.exp(hi), top)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        res = fits(math.exp(mid))
        if res is None:
            hi = mid
        else:
            lo, best = mid, res
    return TradeoffPoint(ebno, bound, math.exp(lo), best)


def tradeoff_sweep(
    code: CodeSpec | int,
    ebno_grid: Sequence[float],
    target_pe: float,
    bound=None,
    fading: FadingModel | None = None,
    eps: float = DEFAULT_EPS,
    settings: OptimizerSettings | None = None,
    threads: int = 1,
    **kw,
) -> list[TradeoffPoint]:
    """Spectral efficiency vs ``Eb/N0`` for one or both residual bounds.

    ``bound=None`` runs both the upper (achievable) and lower (outer) curves.
    Points are independent and may be evaluated on ``threads`` workers; the
    returned order follows the inputs regardless.
    """
    K = code.K if isinstance(code, CodeSpec) else int(code)
    bounds = [BoundKind.UPPER, BoundKind.LOWER] if bound is None else [BoundKind.parse(bound)]
    jobs = [(e, b) for b in bounds for e in ebno_grid]
    run = lambda job: max_rate_at_ebno(K, job[0], target_pe, job[1], fading, eps, settings, **kw)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(run, jobs))
    return [run(j) for j in jobs]
