"""
Density evolution of the multiuser efficiency.

The receiver state is summarised by one number, the multiuser efficiency
``eta``.  Each iteration maps ``eta`` to per-group residual fractions
``v_j = v(K, eta * N * P_j)`` and back to ``eta = 1 / (1 + sum_j alpha_j v_j P_j)``.
Starting from full interference (``v = 1``) the map is monotone, so the
trajectory of ``eta`` is nondecreasing and converges to the smallest fixed
point above the start.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .asymptotic import (
    BoundKind,
    CodeSpec,
    block_error_prob,
    residual_curve,
    residual_fraction,
)
from .errors import ContractError, DomainError
from .numerics import gauss_hermite

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000
DEFAULT_SUCCESS_ETA = 0.95


@dataclass(frozen=True)
class PowerProfile:
    """User groups with population fractions ``alphas`` and receive powers ``powers``."""

    alphas: tuple
    powers: tuple

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.alphas, dtype=float))
        p = np.atleast_1d(np.asarray(self.powers, dtype=float))
        if a.ndim != 1 or a.shape != p.shape or a.size < 1:
            raise ContractError("alphas and powers must be 1-D of equal length >= 1")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(p))):
            raise DomainError("alphas and powers must be finite")
        if np.any(a < 0) or np.any(p < 0):
            raise DomainError("alphas and powers must be >= 0")
        if abs(a.sum() - 1.0) > 1e-9:
            raise DomainError(f"alphas must sum to 1, got {a.sum()!r}")
        object.__setattr__(self, "alphas", tuple(float(x) for x in a))
        object.__setattr__(self, "powers", tuple(float(x) for x in p))

    @classmethod
    def equal_power(cls, P: float) -> "PowerProfile":
        return cls((1.0,), (P,))

    @classmethod
    def from_groups(cls, groups: Sequence[tuple[float, float]]) -> "PowerProfile":
        """Build from ``(alpha_j, P_j)`` pairs."""
        groups = list(groups)
        return cls(tuple(g[0] for g in groups), tuple(g[1] for g in groups))

    @property
    def J(self) -> int:
        return len(self.alphas)

    @property
    def alpha_array(self) -> np.ndarray:
        return np.asarray(self.alphas)

    @property
    def power_array(self) -> np.ndarray:
        return np.asarray(self.powers)

    @property
    def total_power(self) -> float:
        """Aggregate power ``P = sum_j alpha_j P_j``."""
        return float(np.dot(self.alphas, self.powers))

    def nonempty(self, atol: float = 1e-12) -> "PowerProfile":
        """Drop groups with ``alpha_j <= atol`` and renormalise."""
        a = self.alpha_array
        keep = a > atol
        if not np.any(keep):
            raise ContractError("profile has no nonempty group")
        a = a[keep] / a[keep].sum()
        return PowerProfile(tuple(a), tuple(self.power_array[keep]))

    def scaled(self, factor: float) -> "PowerProfile":
        return PowerProfile(self.alphas, tuple(factor * p for p in self.powers))


@dataclass(frozen=True)
class EvolutionState:
    """Multiuser efficiency and residual fractions after ``iteration`` updates."""

    eta: float
    v: tuple
    iteration: int


@dataclass(frozen=True)
class Trajectory:
    """Result of :func:`evolve`.

    ``states`` holds the state after each update (iteration 1, 2, ...);
    ``initial`` is the full-interference starting point.
    """

    initial: EvolutionState
    states: tuple
    converged: bool
    success_eta: float = DEFAULT_SUCCESS_ETA
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def final(self) -> EvolutionState:
        return self.states[-1]

    @property
    def eta(self) -> float:
        return self.final.eta

    @property
    def etas(self) -> np.ndarray:
        return np.array([s.eta for s in self.states])

    @property
    def iterations(self) -> int:
        return self.final.iteration

    @property
    def succeeded(self) -> bool:
        """Whether the fixed point clears the caller's success threshold."""
        return self.eta >= self.success_eta

    @property
    def stalled(self) -> bool:
        return not self.succeeded


def multiuser_efficiency(profile: PowerProfile, v) -> float:
    """``eta = 1 / (1 + sum_j alpha_j v_j P_j)``."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (profile.J,):
        raise ContractError(f"expected {profile.J} residual fractions, got shape {v.shape}")
    if not np.all(np.isfinite(v)) or np.any(v < 0) or np.any(v > 1):
        raise DomainError("residual fractions must lie in [0, 1]")
    return 1.0 / (1.0 + float(np.dot(profile.alpha_array * profile.power_array, v)))


def _residual_map(code: CodeSpec, bound: BoundKind, n: int, exact: bool):
    if exact:
        rule = gauss_hermite(n)
        return lambda s: np.asarray(residual_fraction(code, s, bound, rule), dtype=float)
    curve = residual_curve(code.K, bound, n)
    return lambda s: np.asarray(curve(s), dtype=float)


def evolve(
    code: CodeSpec,
    profile: PowerProfile,
    bound=BoundKind.UPPER,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    *,
    n: int = 300,
    exact: bool = False,
    success_eta: float = DEFAULT_SUCCESS_ETA,
) -> Trajectory:
    """Iterate the multiuser-efficiency map from full interference.

    Stops once ``|eta_{i+1} - eta_i| < tol`` or after ``max_iter`` updates.
    ``exact=False`` evaluates the residual map through a cached spline table
    (agreeing with direct quadrature to about 1e-11); ``exact=True`` calls the
    quadrature at every step.
    """
    if isinstance(max_iter, bool) or int(max_iter) != max_iter or max_iter < 1:
        raise DomainError(f"max_iter must be an integer >= 1, got {max_iter!r}")
    if not (math.isfinite(tol) and tol > 0):
        raise DomainError(f"tol must be > 0, got {tol!r}")
    bound = BoundKind.parse(bound)
    if bound is BoundKind.UPPER and code.K == 0:
        raise DomainError("the posterior-based residual needs K >= 1")
    vmap = _residual_map(code, bound, n, exact)
    weights = profile.alpha_array * profile.power_array
    NP = code.N * profile.power_array

    v = np.ones(profile.J)
    eta = 1.0 / (1.0 + float(weights @ v))
    initial = EvolutionState(eta, tuple(v), 0)
    states = []
    converged = False
    for i in range(1, int(max_iter) + 1):
        v_new = vmap(eta * NP)
        # the exact map is monotone; the clamp only removes roundoff wiggles
        v_new = np.minimum(v_new, v)
        eta_new = 1.0 / (1.0 + float(weights @ v_new))
        states.append(EvolutionState(eta_new, tuple(float(x) for x in v_new), i))
        step = abs(eta_new - eta)
        v, eta = v_new, eta_new
        if step < tol:
            converged = True
            break
    return Trajectory(initial, tuple(states), converged, success_eta)


def final_pe(
    code: CodeSpec,
    profile: PowerProfile,
    bound=BoundKind.UPPER,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    *,
    n: int = 300,
    trajectory: Trajectory | None = None,
) -> np.ndarray:
    """Per-group block error probabilities at the fixed point of :func:`evolve`."""
    traj = trajectory or evolve(code, profile, bound, max_iter, tol, n=n)
    s = traj.eta * code.N * profile.power_array
    return np.atleast_1d(np.asarray(block_error_prob(code, s, gauss_hermite(n)), dtype=float))


def average_pe(code: CodeSpec, profile: PowerProfile, bound=BoundKind.UPPER, **kw) -> float:
    """User-averaged block error probability ``sum_j alpha_j p_j`` at the fixed point."""
    return float(np.dot(profile.alpha_array, final_pe(code, profile, bound, **kw)))
