import dataclasses
import math

import numpy as np
import pytest

from macsic.asymptotic import CodeSpec, block_error_prob, ebno_for_pe
from macsic.errors import ContractError, DomainError
from macsic.evolution import PowerProfile, evolve, final_pe
from macsic.simulator import (
    CodebookStore,
    SimConfig,
    decode,
    draw_batch,
    generate_codebook,
    initial_state,
    run_simulation,
    soft_cancel_iteration,
)

# K=4 operating point: 1 dB above the single-user threshold for Pe 1e-3, at
# half the load of the asymptotic convergence wall (wall N ~ 3.03)
K4 = 4
N_OP = 6.0625
P_OP = 2 * K4 * ebno_for_pe(K4, 1e-3) * 10**0.1 / N_OP


def orthogonal_store(cfg: SimConfig) -> CodebookStore:
    """Codebooks replaced by scaled unit vectors: all codewords exactly orthogonal, energy N*P_j."""
    store = CodebookStore(cfg)
    Q = store.Q
    books = np.zeros((cfg.M, Q, cfg.D))
    for m in range(cfg.M):
        for k in range(Q):
            books[m, k, m * Q + k] = math.sqrt(cfg.code.N * cfg.user_power[m])
    store._books = books
    store.gram = np.einsum("mkd,mld->mkl", books, books)
    store.norm2 = np.einsum("mkd,mkd->mk", books, books)
    return store


class TestConfig:
    def test_non_integer_dimension(self):
        with pytest.raises(ContractError):
            SimConfig(3, CodeSpec(4, 0.5), (3,), (1.0,))

    def test_group_sizes(self):
        with pytest.raises(ContractError):
            SimConfig(4, CodeSpec(4, 2.0), (2, 1), (1.0, 2.0))

    def test_bad_values(self):
        with pytest.raises(DomainError):
            SimConfig(4, CodeSpec(4, 2.0), (4,), (-1.0,))
        with pytest.raises(DomainError):
            SimConfig(4, CodeSpec(4, 2.0), (4,), (1.0,), trials=0)
        with pytest.raises(DomainError):
            SimConfig(4, CodeSpec(0, 2.0), (4,), (1.0,))

    def test_from_profile(self):
        cfg = SimConfig.from_profile(8, CodeSpec(4, 2.0), PowerProfile((0.25, 0.75), (4.0, 1.0)))
        assert cfg.group_sizes == (2, 6) and cfg.total_power == pytest.approx(1.75)
        with pytest.raises(ContractError):
            SimConfig.from_profile(8, CodeSpec(4, 2.0), PowerProfile((0.3, 0.7), (4.0, 1.0)))


class TestCodebook:
    def test_deterministic(self):
        a = generate_codebook(7, 3, CodeSpec(4, 2.0), 2.0, 8)
        b = generate_codebook(7, 3, CodeSpec(4, 2.0), 2.0, 8)
        assert np.array_equal(a, b) and a.shape == (16, 16)
        assert not np.array_equal(a, generate_codebook(7, 4, CodeSpec(4, 2.0), 2.0, 8))

    def test_statistics(self):
        M, P = 4, 2.0
        c = generate_codebook(1, 0, CodeSpec(4, 15625.0), P, M).ravel()
        assert c.size == 1_000_000
        var = P / M
        assert abs(c.mean()) < 3 * math.sqrt(var / c.size)
        # variance of the sample variance of a Gaussian is 2 var^2 / n
        assert abs(c.var() - var) < 3 * var * math.sqrt(2.0 / c.size)

    def test_on_demand_matches_cache(self):
        cfg = SimConfig(8, CodeSpec(3, 2.0), (8,), (3.0,), trials=40, seed=3)
        small = dataclasses.replace(cfg, memory_budget=1)
        assert CodebookStore(cfg).cached and not CodebookStore(small).cached
        a, b = run_simulation(cfg), run_simulation(small)
        assert not b.extra["cached_codebooks"]
        assert a.errors == b.errors
        assert np.allclose(a.eta_trajectory, b.eta_trajectory, rtol=1e-12)


class TestDecode:
    def test_equal_energy_is_correlation(self, rng):
        Q, D = 16, 64
        basis = np.linalg.qr(rng.standard_normal((D, Q)))[0].T * 3.0
        y = rng.standard_normal(D)
        k, stat = decode(y, basis)
        assert k == int(np.argmax(basis @ y))
        assert stat == pytest.approx(basis[k] @ y / 3.0)

    def test_noiseless(self):
        book = generate_codebook(0, 0, CodeSpec(4, 32.0), 1.0, 1)
        for k in range(16):
            assert decode(book[k], book)[0] == k

    def test_noiseless_single_user_mode(self):
        cfg = SimConfig(1, CodeSpec(4, 64.0), (1,), (1.0,), trials=2000, noise=False)
        assert run_simulation(cfg).error_rate == 0.0

    def test_single_user_mode_matches_theory(self):
        N = 1e6
        cfg = SimConfig(1, CodeSpec(4, N), (1,), (16.0 / N,), trials=100_000, batch_size=10_000, seed=11)
        rep = run_simulation(cfg)
        p = block_error_prob(CodeSpec(4), 16.0)
        assert abs(rep.error_rate - p) < 3 * math.sqrt(p * (1 - p) / rep.decisions)

    def test_noise_only(self):
        cfg = SimConfig(16, CodeSpec(4, 4.0), (16,), (0.0,), trials=500)
        rep = run_simulation(cfg)
        p = 1 - 2.0**-4
        assert abs(rep.error_rate - p) < 3 * math.sqrt(p * (1 - p) / rep.decisions)


class TestCancellation:
    def _state(self, cfg, store, p_value=None, noise_scale=None):
        truth, r = draw_batch(cfg, store, 0, 8)
        st = initial_state(cfg, store, r, truth)
        if p_value is not None:
            st.p[:] = p_value
        return truth, st

    def test_no_confidence_cancels_nothing(self):
        cfg = SimConfig(8, CodeSpec(4, 4.0), (8,), (2.0,), trials=8)
        store = CodebookStore(cfg)
        truth, st = self._state(cfg, store, p_value=1.0)
        nxt = soft_cancel_iteration(st, cfg, store, truth)
        assert np.all(nxt.estimate == 0.0)
        redo = initial_state(cfg, store, st.r, truth)
        assert np.array_equal(nxt.decisions, redo.decisions)
        assert np.allclose(nxt.stat, redo.stat)
        assert np.allclose(nxt.I, 1.0 + 2.0)

    def test_full_confidence_orthogonal(self):
        cfg = SimConfig(4, CodeSpec(2, 16.0), (2, 2), (1.0, 3.0), trials=8)
        store = orthogonal_store(cfg)
        truth, r = draw_batch(cfg, store, 0, 8)
        st = initial_state(cfg, store, r, truth)
        st.decisions[:] = truth
        st.p[:] = 0.0
        nxt = soft_cancel_iteration(st, cfg, store, truth)
        noise = r - store.gather(truth).sum(axis=1)
        assert np.allclose(r - nxt.estimate, noise, atol=1e-12)
        assert np.allclose(nxt.residual_power, 0.0, atol=1e-24)
        assert np.allclose(nxt.I, 1.0)

    def test_genie_residual_orthogonal(self):
        # with genie confidences, only wrongly decided users remain
        cfg = SimConfig(8, CodeSpec(2, 8.0), (4, 4), (0.2, 0.5), trials=64, p_mode="genie", seed=5)
        store = orthogonal_store(cfg)
        truth, r = draw_batch(cfg, store, 0, 64)
        st = initial_state(cfg, store, r, truth)
        nxt = soft_cancel_iteration(st, cfg, store, truth)
        wrong = (st.decisions != truth).astype(float)
        g = cfg.user_group
        for j in range(2):
            frac = wrong[:, g == j].mean(axis=1)
            assert np.allclose(nxt.residual_power[:, j], cfg.alphas[j] * cfg.powers[j] * frac, rtol=1e-12, atol=1e-15)
            # per user 1 - (1 - p)**2 equals p for p in {0, 1}
            assert np.allclose(nxt.v[:, j], np.mean(1 - (1 - wrong[:, g == j]) ** 2, axis=1))
            assert np.allclose(nxt.v[:, j], frac)
        assert wrong.mean() > 0.05

    def test_renormalisation_reduces_residual(self):
        wins, a, b = 0, [], []
        for seed in range(100):
            cfg = SimConfig(32, CodeSpec(K4, N_OP), (32,), (P_OP,), trials=16, batch_size=16, seed=seed)
            x = run_simulation(cfg).residual_power[0]
            y = run_simulation(dataclasses.replace(cfg, renormalize=False)).residual_power[0]
            a.append(x)
            b.append(y)
            wins += x <= y
        assert np.mean(a) <= np.mean(b)
        assert wins >= 80


class TestRunSimulation:
    def test_energy_bookkeeping(self):
        # codebooks are fixed per seed, so average over seeds (code realisations)
        per_seed = []
        for seed in range(200):
            cfg = SimConfig(16, CodeSpec(4, 4.0), (8, 8), (1.0, 3.0), trials=4, seed=seed)
            _, r = draw_batch(cfg, CodebookStore(cfg), 0, 4)
            per_seed.append(np.mean(np.sum(r**2, axis=1) / cfg.D))
        e = np.asarray(per_seed)
        assert abs(e.mean() - (1 + cfg.total_power)) < 3 * e.std(ddof=1) / math.sqrt(e.size)

    def test_deterministic(self):
        cfg = SimConfig(16, CodeSpec(4, 4.0), (16,), (3.0,), trials=100, batch_size=16, seed=9)
        a = run_simulation(cfg)
        b = run_simulation(dataclasses.replace(cfg, threads=4))
        assert a.errors == b.errors
        assert np.array_equal(a.per_user_error_rate, b.per_user_error_rate)
        assert np.array_equal(a.eta_trajectory, b.eta_trajectory)
        assert np.array_equal(a.v_trajectory, b.v_trajectory)

    def test_eta_nondecreasing_when_converging(self):
        cfg = SimConfig(32, CodeSpec(K4, 12.0), (32,), (2 * K4 * ebno_for_pe(K4, 1e-3) * 10**0.1 / 12.0,), trials=128, seed=2)
        rep = run_simulation(cfg)
        assert rep.converged_fraction == 1.0
        assert np.all(np.diff(rep.eta_trajectory) >= -1e-12)

    def test_finite_user_penalty(self):
        errs = dec = 0
        for seed in range(10):
            rep = run_simulation(SimConfig(32, CodeSpec(K4, N_OP), (32,), (P_OP,), trials=256, seed=seed))
            errs += rep.errors
            dec += rep.decisions
        rate = errs / dec
        prof = PowerProfile.equal_power(P_OP)
        asym = final_pe(CodeSpec(K4, N_OP), prof)[0]
        assert evolve(CodeSpec(K4, N_OP), prof).eta > 0.99
        assert asym <= rate <= 10 * 1e-3

    def test_report_fields(self):
        cfg = SimConfig(8, CodeSpec(3, 2.0), (4, 4), (1.0, 4.0), trials=30, batch_size=8, max_iterations=5)
        rep = run_simulation(cfg)
        assert rep.per_user_error_rate.shape == (8,)
        assert rep.v_trajectory.shape[1] == 2 and rep.eta_trajectory.shape[0] == rep.v_trajectory.shape[0]
        assert rep.max_iterations_used <= 5 and rep.trials == 30
        assert 0 <= rep.std_error < 1
