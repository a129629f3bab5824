import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from macsic.errors import ContractError
from macsic.poweropt import INFEASIBLE, OPTIMAL, UNBOUNDED, LpProblem, simplex_solve


def enumerate_vertices(lp: LpProblem):
    """Brute-force optimum over basic feasible solutions of the standard form."""
    n = lp.n_vars
    A = np.vstack([lp.A_ub, lp.A_eq])
    m_ub = lp.n_ub
    S = np.vstack([np.eye(m_ub), np.zeros((lp.n_eq, m_ub))])
    full = np.hstack([A, S])
    b = np.concatenate([lp.b_ub, lp.b_eq])
    m, cols = full.shape
    best, arg = np.inf, None
    for basis in itertools.combinations(range(cols), m):
        B = full[:, basis]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        xb = np.linalg.solve(B, b)
        if np.any(xb < -1e-10):
            continue
        x = np.zeros(cols)
        x[list(basis)] = xb
        val = lp.c @ x[:n]
        if val < best - 1e-12:
            best, arg = val, x[:n]
    return best, arg


class TestExamples:
    def test_hand_solvable(self):
        sol = simplex_solve(LpProblem([1.0, 2.0], A_eq=[[1.0, 1.0]], b_eq=[1.0]))
        assert sol.status == OPTIMAL
        assert np.allclose(sol.x, [1.0, 0.0]) and sol.objective == pytest.approx(1.0)

    def test_single_variable_simplex(self):
        sol = simplex_solve(LpProblem([3.0], A_eq=[[1.0]], b_eq=[1.0]))
        assert sol.optimal and sol.x.tolist() == [1.0]

    def test_two_constraint_vertex(self):
        # min -x1 - x2 - x3 with x1 + x2 <= 1, x2 + x3 <= 1, x1 + 2 x3 <= 1.5
        lp = LpProblem([-1.0, -1.0, -1.0], A_ub=[[1, 1, 0], [0, 1, 1], [1, 0, 2]], b_ub=[1.0, 1.0, 1.5])
        sol = simplex_solve(lp)
        best, _ = enumerate_vertices(lp)
        assert sol.optimal and sol.objective == pytest.approx(best, abs=1e-12)
        assert lp.max_violation(sol.x) < 1e-12

    def test_infeasible(self):
        sol = simplex_solve(LpProblem([1.0, 1.0], A_ub=[[1.0, 1.0]], b_ub=[1.0], A_eq=[[1.0, 1.0]], b_eq=[2.0]))
        assert sol.status == INFEASIBLE and sol.x is None

    def test_unbounded(self):
        sol = simplex_solve(LpProblem([-1.0, 0.0], A_ub=[[-1.0, 1.0]], b_ub=[1.0]))
        assert sol.status == UNBOUNDED

    def test_negative_rhs_rows(self):
        # x1 + x2 >= 2 written as -x1 - x2 <= -2
        sol = simplex_solve(LpProblem([1.0, 3.0], A_ub=[[-1.0, -1.0]], b_ub=[-2.0]))
        assert sol.optimal and np.allclose(sol.x, [2.0, 0.0])

    def test_redundant_equalities(self):
        sol = simplex_solve(LpProblem([1.0, 2.0, 3.0], A_eq=[[1, 1, 1], [2, 2, 2]], b_eq=[1.0, 2.0]))
        assert sol.optimal and np.allclose(sol.x, [1.0, 0.0, 0.0])

    def test_degenerate_cycling_example(self):
        # Beale's classic cycling problem; Bland's rule must terminate
        c = [-0.75, 150.0, -0.02, 6.0]
        A = [[0.25, -60.0, -0.04, 9.0], [0.5, -90.0, -0.02, 3.0], [0.0, 0.0, 1.0, 0.0]]
        sol = simplex_solve(LpProblem(c, A_ub=A, b_ub=[0.0, 0.0, 1.0]))
        assert sol.optimal and sol.objective == pytest.approx(-0.05, abs=1e-12)

    def test_no_constraints(self):
        assert simplex_solve(LpProblem([1.0, 0.0])).objective == 0.0
        assert simplex_solve(LpProblem([-1.0])).status == UNBOUNDED

    def test_validation(self):
        with pytest.raises(ContractError):
            LpProblem([1.0, 2.0], A_ub=[[1.0]], b_ub=[1.0])
        with pytest.raises(ContractError):
            LpProblem([1.0, np.nan])
        with pytest.raises(ContractError):
            LpProblem([1.0], A_eq=[[1.0]], b_eq=[1.0, 2.0])


@st.composite
def random_lps(draw):
    n = draw(st.integers(1, 6))
    m_ub = draw(st.integers(0, 5))
    m_eq = draw(st.integers(0, 2))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    c = rng.normal(size=n)
    A_ub = rng.normal(size=(m_ub, n))
    b_ub = rng.normal(size=m_ub) + 1.0
    A_eq = np.abs(rng.normal(size=(m_eq, n))) + 0.1
    b_eq = np.abs(rng.normal(size=m_eq)) + 0.5
    # bounded feasible region via a simplex-like cap
    A_ub = np.vstack([A_ub, np.ones((1, n))])
    b_ub = np.append(b_ub, 10.0)
    return LpProblem(c, A_ub, b_ub, A_eq if m_eq else None, b_eq if m_eq else None)


class TestAgainstOracles:
    @settings(max_examples=150, deadline=None)
    @given(random_lps())
    def test_matches_scipy(self, lp):
        ours = simplex_solve(lp)
        ref = linprog(lp.c, A_ub=lp.A_ub if lp.n_ub else None, b_ub=lp.b_ub if lp.n_ub else None,
                      A_eq=lp.A_eq if lp.n_eq else None, b_eq=lp.b_eq if lp.n_eq else None, method="highs")
        if ref.status == 0:
            assert ours.optimal
            assert ours.objective == pytest.approx(ref.fun, abs=1e-8, rel=1e-8)
            assert lp.max_violation(ours.x) < 1e-8
        elif ref.status == 2:
            assert ours.status == INFEASIBLE

    @settings(max_examples=60, deadline=None)
    @given(random_lps())
    def test_matches_vertex_enumeration(self, lp):
        if lp.n_vars + lp.n_ub > 9:
            return
        ours = simplex_solve(lp)
        best, _ = enumerate_vertices(lp)
        if np.isfinite(best):
            assert ours.optimal and ours.objective == pytest.approx(best, abs=1e-8)
        else:
            assert ours.status == INFEASIBLE

    def test_power_lp_sized_problem(self):
        rng = np.random.default_rng(7)
        n, m = 128, 256
        A = np.abs(rng.normal(size=(m, n))) * np.linspace(0.1, 5.0, n)
        b = np.full(m, 3.0)
        c = np.linspace(1.0, 10.0, n)
        lp = LpProblem(c, A, b, np.ones((1, n)), [1.0])
        ours = simplex_solve(lp)
        ref = linprog(c, A_ub=A, b_ub=b, A_eq=np.ones((1, n)), b_eq=[1.0], method="highs")
        assert ref.status == 0 and ours.optimal
        assert ours.objective == pytest.approx(ref.fun, rel=1e-9)
        assert lp.max_violation(ours.x) < 1e-8
