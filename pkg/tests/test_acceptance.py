"""Acceptance suite: one test and one PASS/FAIL summary line per criterion.

Run standalone with ``python tests/test_acceptance.py``.
"""
import math
import sys
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st
from scipy import optimize

from macsic.asymptotic import (
    CodeSpec,
    block_error_prob,
    ebno_for_pe,
    ebno_lower_bound_inverse,
    required_snr,
    residual_fraction_lower,
    residual_fraction_upper,
    single_user_pe,
)
from macsic.evolution import PowerProfile, evolve
from macsic.numerics import gaussian_q, marcum_q, q_pow
from macsic.poweropt import (
    EtaGrid,
    FadingModel,
    OptimizerSettings,
    build_power_lp,
    fading_outer_bound,
    min_ebno_for_rate,
    near_far_gain,
    optimize_profile,
    single_group_feasible,
)
from macsic.simulator import SimConfig, run_simulation

TARGET = 1e-3
FAST = OptimizerSettings(n_powers=64, G=128, n_scan=12, n_nesting=15)
FADING_FAST = OptimizerSettings(n_powers=20, span_db=50.0, G=128, n_scan=12, n_nesting=10)


def db(x):
    return 10 * math.log10(x)


class TestAcceptance:
    def test_01_k1_closed_form(self, criterion):
        s = np.array([0.0, 1.0, 4.0, 9.0, 25.0])
        err = float(np.max(np.abs(block_error_prob(CodeSpec(1), s) - gaussian_q(np.sqrt(s / 2)))))
        assert criterion(1, err < 1e-10, f"K=1 max |Pe - Q(sqrt(s/2))| = {err:.2e} (< 1e-10)")

    def test_02_single_user_simulation(self, criterion):
        t0 = time.perf_counter()
        N = 1e6
        cfg = SimConfig(1, CodeSpec(4, N), (1,), (16.0 / N,), trials=100_000, batch_size=10_000, seed=11)
        rep = run_simulation(cfg)
        elapsed = time.perf_counter() - t0
        p = float(block_error_prob(CodeSpec(4), 16.0))
        se = math.sqrt(p * (1 - p) / rep.decisions)
        z = (rep.error_rate - p) / se
        ok = abs(z) < 3 and elapsed < 60
        assert criterion(2, ok, f"K=4 s=16: simulated {rep.error_rate:.5f} vs {p:.5f} ({z:+.2f} SE), {elapsed:.1f} s")

    def test_03_marcum_gaussian_limit(self, criterion):
        diffs = [abs(marcum_q(M, M - 0.5, M) - float(gaussian_q(-0.5))) for M in (100, 1000, 10_000)]
        ok = diffs[2] < 5e-3 and diffs[0] > diffs[1] > diffs[2]
        assert criterion(3, ok, "|Q_M - Q(-0.5)| at M=1e2,1e3,1e4: " + ", ".join(f"{d:.2e}" for d in diffs))

    def test_04_q_pow_stability(self, criterion):
        val = float(q_pow(-9.0, 2.0**64))
        naive = float(gaussian_q(-9.0)) ** (2.0**64)
        ok = 0.12 < val < 0.13 and naive == 1.0
        assert criterion(4, ok, f"q_pow(-9, 2^64) = {val:.6f}, naive powering = {naive}")

    def test_05_bound_ordering(self, criterion):
        s = np.geomspace(1e-2, 200.0, 40)
        worst = -np.inf
        for K in (1, 2, 4, 8, 16, 64, 256):
            code = CodeSpec(K)
            worst = max(worst, float(np.max(residual_fraction_lower(code, s) - residual_fraction_upper(code, s))))
        rng = np.random.default_rng(2024)
        gaps = []
        for _ in range(20):
            J = int(rng.integers(1, 5))
            K = int(rng.choice([4, 8, 16]))
            profile = PowerProfile(tuple(rng.dirichlet(np.ones(J))), tuple(np.exp(rng.uniform(-1.0, 3.0, J))))
            code = CodeSpec(K, float(rng.uniform(2.0, 16.0)))
            up = evolve(code, profile, "upper", max_iter=100_000).eta
            lo = evolve(code, profile, "lower", max_iter=100_000).eta
            gaps.append(lo - up)
        ok = worst <= 0 and min(gaps) >= -1e-12
        assert criterion(5, ok, f"max(v_lower - v_upper) = {worst:.2e}; min(eta*_lower - eta*_upper) over 20 profiles = {min(gaps):.2e}")

    def test_06_equal_power_threshold(self, criterion):
        K = 8
        res = min_ebno_for_rate(K, 0.05, TARGET, settings=FAST)
        # independent bisection of the single-user curve in dB
        f = lambda x: math.log(float(single_user_pe(K, 10 ** (x / 10)))) - math.log(TARGET)
        ref = optimize.brentq(f, -5.0, 20.0, xtol=1e-12)
        gap = res.ebno_db - ref
        ok = res.feasible and res.verified and len(res.groups) == 1 and abs(gap) < 0.05
        assert criterion(6, ok, f"K=8 R=0.05: {len(res.groups)} group(s), Eb/N0 {res.ebno_db:.4f} dB vs {ref:.4f} dB (diff {gap:+.4f})")

    def test_07_distributed_regime(self, criterion):
        K, R = 8, 1.5
        code = CodeSpec(K, K / R)
        res = optimize_profile(code, TARGET, settings=FAST)
        s_req = required_snr(K, TARGET)
        flips = []

        @settings(max_examples=40, deadline=None, derandomize=True, suppress_health_check=list(HealthCheck))
        @given(st.floats(0.0, 3.0))
        def single_group_fails(log10_gain):
            P = s_req / code.N * 10**log10_gain
            eta_req = s_req / (code.N * P)
            if eta_req < 1.0 - 2e-3:
                feasible = single_group_feasible(code, P, EtaGrid(1 / (1 + P), eta_req + 1e-3, FAST.G))
                flips.append(feasible)
                assert not feasible

        single_group_fails()
        grid = EtaGrid(res.eta_lo, res.eta_hi, FAST.G)
        lp = build_power_lp(code, list(res.profile.powers), grid)
        violation = lp.max_violation(np.asarray(res.profile.alphas))
        ok = res.feasible and res.verified and len(res.groups) >= 2 and violation < 1e-8 and not any(flips)
        detail = (f"K=8 R=1.5: single group infeasible at {len(flips)} powers; "
                  f"multi-group LP {len(res.groups)} groups, violation {violation:.1e}")
        assert criterion(7, ok, detail)

    def test_08_bound_gap_shrinks(self, criterion):
        Ks = (8, 32, 128, 512)
        gaps = [db(ebno_for_pe(K, TARGET)) - db(ebno_lower_bound_inverse(K, TARGET)) for K in Ks]
        ok = all(np.diff(gaps) < 0) and gaps[-1] < 0.25 and gaps[0] > 0.5
        assert criterion(8, ok, "gap (dB) at K=8,32,128,512: " + ", ".join(f"{g:.4f}" for g in gaps))

    def test_09_fading(self, criterion):
        awgn = FadingModel(1, (1.0,), (1.0,))
        err = max(abs(fading_outer_bound(R, 8, TARGET, awgn, a=1.0) - (4**R - 1) / (2 * R)) for R in (0.5, 1.0, 2.0))
        # matched point in the distributed regime, K=8 at R=2
        weighted, equal = near_far_gain(CodeSpec(8, 4.0), TARGET, FadingModel(10), settings=FADING_FAST)
        ok = err < 1e-12 and weighted.verified and equal.verified and weighted.total_power <= equal.total_power
        detail = (f"L=1 identity err {err:.1e}; K=8 R=2 total power L=10 attenuated "
                  f"{weighted.total_power:.4f} vs equal gain {equal.total_power:.4f}")
        assert criterion(9, ok, detail)

    @pytest.mark.slow
    def test_10_finite_m_trend(self, criterion):
        t0 = time.perf_counter()
        K, N = 4, 6.0625
        P = 2 * K * ebno_for_pe(K, TARGET) * 10**0.1 / N
        rates = {}
        for M in (16, 64):
            per_seed = []
            for seed in range(20):
                rep = run_simulation(SimConfig(M, CodeSpec(K, N), (M,), (P,), trials=128, seed=seed))
                per_seed.append(rep.error_rate)
            rates[M] = (float(np.mean(per_seed)), float(np.std(per_seed, ddof=1) / math.sqrt(len(per_seed))))
        elapsed = time.perf_counter() - t0
        (r16, se16), (r64, se64) = rates[16], rates[64]
        margin = (r16 - r64) / math.hypot(se16, se64)
        ok = r64 <= r16 and margin > 3 and elapsed < 600
        detail = (f"K=4 N={N} P={P:.4f}: error rate M=16 {r16:.5f}+-{se16:.5f}, "
                  f"M=64 {r64:.5f}+-{se64:.5f} ({margin:.1f} SE apart), {elapsed:.0f} s")
        assert criterion(10, ok, detail)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider", "-W", "ignore::pytest.PytestAssertRewriteWarning"]))
