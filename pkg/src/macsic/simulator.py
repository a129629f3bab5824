"""
Finite-user Monte-Carlo simulation of iterative soft interference cancellation.

Channel: ``r = sum_m c_m + z`` in ``D = M*N`` real dimensions with unit noise
variance.  User ``m`` in group ``j`` picks one of ``2**K`` i.i.d. Gaussian
codewords with per-coordinate variance ``P_j / M``, so each codeword carries
energy ``N * P_j`` on average.

Receiver loop (per trial):

1. decode every user from its residual, record the winning index and the
   normalised projection statistic ``x``;
2. turn ``x`` into an error probability ``p_m`` with the large-system posterior
   at the measured interference-plus-noise power ``I``;
3. rebuild the interference estimate with weights ``1 - p_m``, rescaled per
   group and then across groups, and subtract it, adding back each user's own
   term before it decodes again.

Codebooks are fixed by ``(seed, user)``; message indices and noise are drawn
per batch of trials from seeds derived from ``(seed, batch)``, so a report is
a deterministic function of the configuration regardless of thread count.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .asymptotic import CodeSpec, posterior_error_prob
from .errors import ContractError, DomainError
from .evolution import PowerProfile

DEFAULT_MEMORY_BUDGET = 1 << 30  # bytes of cached codewords
_CODEBOOK_STREAM = 0
_TRIAL_STREAM = 1


def generate_codebook(seed: int, m: int, code: CodeSpec, P: float, M: int) -> np.ndarray:
    """Codebook of user ``m``: ``2**K`` rows of ``M*N`` i.i.d. ``N(0, P/M)`` coordinates.

    Row ``k`` is a deterministic function of ``(seed, m, k)``.
    """
    if P < 0 or not math.isfinite(P):
        raise DomainError(f"power must be finite and >= 0, got {P!r}")
    D = _dims(M, code)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_CODEBOOK_STREAM, int(m)))
    rng = np.random.Generator(np.random.PCG64(ss))
    return math.sqrt(P / M) * rng.standard_normal((1 << code.K, D))


def _dims(M: int, code: CodeSpec) -> int:
    D = M * code.N
    if abs(D - round(D)) > 1e-9 or round(D) < 1:
        raise ContractError(f"M*N must be a positive integer, got {D!r}")
    return int(round(D))


@dataclass(frozen=True)
class SimConfig:
    """Finite-``M`` experiment.

    ``group_sizes[j]`` users receive power ``powers[j]``.  ``renormalize``
    switches the per-group and cross-group rescaling of the interference
    estimate; ``p_mode="genie"`` replaces posteriors by the indicator of a
    wrong decision.  With ``M = 1`` the simulation uses an exact reduced
    representation of the codebook (see :func:`run_simulation`).
    """

    M: int
    code: CodeSpec
    group_sizes: tuple
    powers: tuple
    trials: int = 1000
    max_iterations: int = 30
    seed: int = 0
    eta_tol: float = 1e-4
    renormalize: bool = True
    p_mode: str = "posterior"
    noise: bool = True
    batch_size: int = 64
    threads: int = 1
    memory_budget: int = DEFAULT_MEMORY_BUDGET

    def __post_init__(self):
        if isinstance(self.M, bool) or int(self.M) != self.M or self.M < 1:
            raise DomainError(f"M must be a positive integer, got {self.M!r}")
        _dims(self.M, self.code)
        sizes = tuple(int(x) for x in self.group_sizes)
        powers = tuple(float(x) for x in self.powers)
        if len(sizes) != len(powers) or not sizes:
            raise ContractError("group_sizes and powers must have equal nonzero length")
        if any(x < 0 for x in sizes) or sum(sizes) != self.M:
            raise ContractError(f"group sizes must be >= 0 and sum to M={self.M}, got {sizes}")
        if any(p < 0 or not math.isfinite(p) for p in powers):
            raise DomainError("powers must be finite and >= 0")
        if self.trials < 1 or self.max_iterations < 0 or self.batch_size < 1 or self.threads < 1:
            raise DomainError("trials, batch_size, threads must be >= 1 and max_iterations >= 0")
        if self.p_mode not in ("posterior", "genie"):
            raise DomainError(f"p_mode must be 'posterior' or 'genie', got {self.p_mode!r}")
        if self.code.K < 1:
            raise DomainError("K must be >= 1")
        if self.seed < 0:
            raise DomainError("seed must be >= 0")
        object.__setattr__(self, "group_sizes", sizes)
        object.__setattr__(self, "powers", powers)

    @classmethod
    def from_profile(cls, M: int, code: CodeSpec, profile: PowerProfile, **kw) -> "SimConfig":
        sizes = np.asarray(profile.alphas) * M
        if np.any(np.abs(sizes - np.round(sizes)) > 1e-6):
            raise ContractError(f"alpha_j * M must be integers, got {sizes}")
        return cls(M, code, tuple(int(round(x)) for x in sizes), profile.powers, **kw)

    @property
    def D(self) -> int:
        return _dims(self.M, self.code)

    @property
    def user_group(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.group_sizes)), self.group_sizes)

    @property
    def user_power(self) -> np.ndarray:
        return np.asarray(self.powers)[self.user_group]

    @property
    def alphas(self) -> np.ndarray:
        return np.asarray(self.group_sizes, dtype=float) / self.M

    @property
    def total_power(self) -> float:
        return float(np.dot(self.alphas, self.powers))


class CodebookStore:
    """All users' codebooks, cached when they fit the memory budget."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.Q = 1 << cfg.code.K
        self.cached = cfg.M * self.Q * cfg.D * 8 <= cfg.memory_budget
        self._books = None
        if self.cached:
            self._books = np.stack([self._make(m) for m in range(cfg.M)])
        grams, norms2 = [], []
        for m in range(cfg.M):
            C = self.user(m)
            g = C @ C.T
            grams.append(g)
            norms2.append(np.diag(g).copy())
        self.gram = np.stack(grams)  # (M, Q, Q)
        self.norm2 = np.stack(norms2)  # (M, Q)

    def _make(self, m: int) -> np.ndarray:
        return generate_codebook(self.cfg.seed, m, self.cfg.code, self.cfg.user_power[m], self.cfg.M)

    def user(self, m: int) -> np.ndarray:
        return self._books[m] if self.cached else self._make(m)

    def correlate(self, Y: np.ndarray) -> np.ndarray:
        """``<Y_b, c_{m,k}>`` for all users: shape ``(B, M, Q)``."""
        if self.cached:
            return np.einsum("bd,mkd->bmk", Y, self._books, optimize=True)
        out = np.empty((Y.shape[0], self.cfg.M, self.Q))
        for m in range(self.cfg.M):
            out[:, m, :] = Y @ self.user(m).T
        return out

    def gather(self, idx: np.ndarray) -> np.ndarray:
        """Chosen codewords ``c_{m, idx[b, m]}``: shape ``(B, M, D)``."""
        if self.cached:
            return self._books[np.arange(self.cfg.M)[None, :], idx]
        out = np.empty(idx.shape + (self.cfg.D,))
        for m in range(self.cfg.M):
            out[:, m, :] = self.user(m)[idx[:, m]]
        return out


@dataclass
class SimState:
    """Receiver state for a batch of ``B`` trials (leading axis)."""

    r: np.ndarray  # (B, D) received vectors
    decisions: np.ndarray  # (B, M)
    p: np.ndarray  # (B, M) error-probability estimates
    v: np.ndarray  # (B, J) residual-fraction estimates
    I: np.ndarray  # (B,) interference-plus-noise power
    stat: np.ndarray  # (B, M) normalised max statistic
    iteration: int = 0
    residual_power: np.ndarray | None = None  # (B, J) measured after cancellation
    estimate: np.ndarray | None = None  # (B, D) current interference estimate

    @property
    def eta(self) -> np.ndarray:
        return 1.0 / self.I


def decode(residual: np.ndarray, codebook: np.ndarray, norm2: np.ndarray | None = None):
    """ML decision among Gaussian codewords and the normalised winning projection.

    Maximises ``<y, c_k> - |c_k|**2 / 2``; returns ``(index, <y, c_win>/|c_win|)``.
    """
    residual = np.asarray(residual, dtype=float)
    corr = codebook @ residual
    n2 = np.einsum("kd,kd->k", codebook, codebook) if norm2 is None else norm2
    k = int(np.argmax(corr - 0.5 * n2))
    nrm = math.sqrt(n2[k])
    return k, (corr[k] / nrm if nrm > 0 else 0.0)


def _decide(corr: np.ndarray, norm2: np.ndarray):
    """Batched :func:`decode` on precomputed correlations ``(B, M, Q)``."""
    idx = np.argmax(corr - 0.5 * norm2[None], axis=2)
    win = np.take_along_axis(corr, idx[..., None], axis=2)[..., 0]
    n2 = np.take_along_axis(np.broadcast_to(norm2, corr.shape), idx[..., None], axis=2)[..., 0]
    nrm = np.sqrt(n2)
    proj = np.divide(win, nrm, out=np.zeros_like(win), where=nrm > 0)
    return idx, proj


def _posteriors(cfg: SimConfig, stat: np.ndarray, I: np.ndarray, decisions, truth) -> np.ndarray:
    if cfg.p_mode == "genie":
        return (decisions != truth).astype(float)
    s = cfg.code.N * cfg.user_power[None, :] / I[:, None]
    x = stat / np.sqrt(I)[:, None]
    return np.asarray(posterior_error_prob(cfg.code, s, x))


def _measured_v(cfg: SimConfig, p: np.ndarray) -> np.ndarray:
    J = len(cfg.group_sizes)
    g = cfg.user_group
    out = np.ones((p.shape[0], J))
    for j in range(J):
        sel = g == j
        if np.any(sel):
            out[:, j] = 1.0 - np.mean((1.0 - p[:, sel]) ** 2, axis=1)
    return out


def _interference_power(cfg: SimConfig, v: np.ndarray) -> np.ndarray:
    noise = 1.0 if cfg.noise else 0.0
    return noise + v @ (cfg.alphas * np.asarray(cfg.powers))


def _safe_ratio(num, den):
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def soft_cancel_iteration(state: SimState, cfg: SimConfig, books: CodebookStore, truth: np.ndarray | None = None):
    """One cancellation-and-redecode pass; returns the next :class:`SimState`.

    The estimate of group ``j`` is ``sqrt(s_j) sum_m c_hat_m (1 - p_m)`` with
    ``s_j = sum_m |c_hat_m|**2 (1 - p_m)**2 / |sum_m c_hat_m (1 - p_m)|**2``;
    the groups are then combined with ``s = sum_j |i_j|**2 / |sum_j i_j|**2``.
    A vanishing denominator sets the scale to zero.  If ``truth`` (transmitted
    indices) is given, the residual interference power per group is recorded.
    """
    B = state.r.shape[0]
    J = len(cfg.group_sizes)
    g = cfg.user_group
    q = 1.0 - state.p
    chosen = books.gather(state.decisions)  # (B, M, D)
    cn2 = np.take_along_axis(books.norm2[None].repeat(B, 0), state.decisions[..., None], axis=2)[..., 0]
    group_sum = np.zeros((B, J, cfg.D))
    for j in range(J):
        sel = g == j
        group_sum[:, j] = np.einsum("bm,bmd->bd", q[:, sel], chosen[:, sel])
    if cfg.renormalize:
        num = np.zeros((B, J))
        for j in range(J):
            sel = g == j
            num[:, j] = np.sum(cn2[:, sel] * q[:, sel] ** 2, axis=1)
        den = np.einsum("bjd,bjd->bj", group_sum, group_sum)
        s_j = _safe_ratio(num, den)
        groups = np.sqrt(s_j)[..., None] * group_sum
        total = groups.sum(axis=1)
        s = _safe_ratio(np.einsum("bjd,bjd->b", groups, groups), np.einsum("bd,bd->b", total, total))
    else:
        s_j = np.ones((B, J))
        groups = group_sum
        total = groups.sum(axis=1)
        s = np.ones(B)
    estimate = np.sqrt(s)[:, None] * total
    own = np.sqrt(s[:, None] * s_j[:, g]) * q  # (B, M) weight of each user's own term
    base = books.correlate(state.r - estimate)
    gram_rows = books.gram[np.arange(cfg.M)[None, :], state.decisions]  # (B, M, Q)
    corr = base + own[..., None] * gram_rows

    v = _measured_v(cfg, state.p)
    I = _interference_power(cfg, v)
    decisions, stat = _decide(corr, books.norm2)
    p = _posteriors(cfg, stat, I, decisions, truth if truth is not None else decisions)

    residual_power = None
    if truth is not None:
        sent = books.gather(truth)
        residual_power = np.zeros((B, J))
        for j in range(J):
            sel = g == j
            diff = sent[:, sel].sum(axis=1) - np.sqrt(s)[:, None] * groups[:, j]
            residual_power[:, j] = np.einsum("bd,bd->b", diff, diff) / cfg.D
    return SimState(state.r, decisions, p, v, I, stat, state.iteration + 1, residual_power, estimate)


def initial_state(cfg: SimConfig, books: CodebookStore, r: np.ndarray, truth: np.ndarray | None = None) -> SimState:
    """Decode from the raw receive word with full-interference power ``I = 1 + P``."""
    B = r.shape[0]
    J = len(cfg.group_sizes)
    v = np.ones((B, J))
    I = _interference_power(cfg, v)
    decisions, stat = _decide(books.correlate(r), books.norm2)
    p = _posteriors(cfg, stat, I, decisions, truth if truth is not None else decisions)
    return SimState(r, decisions, p, v, I, stat, 0)


def draw_batch(cfg: SimConfig, books: CodebookStore, batch: int, size: int):
    """Transmitted indices ``(size, M)`` and receive words ``(size, D)`` for one batch."""
    ss = np.random.SeedSequence(entropy=int(cfg.seed), spawn_key=(_TRIAL_STREAM, int(batch)))
    rng = np.random.Generator(np.random.PCG64(ss))
    truth = rng.integers(0, books.Q, size=(size, cfg.M))
    r = books.gather(truth).sum(axis=1)
    if cfg.noise:
        r = r + rng.standard_normal((size, cfg.D))
    return truth, r


def _run_batch(cfg: SimConfig, books: CodebookStore, batch: int, size: int):
    truth, r = draw_batch(cfg, books, batch, size)
    state = initial_state(cfg, books, r, truth)
    active = np.ones(size, dtype=bool)
    eta_hist = [state.eta.copy()]
    v_hist = [state.v.copy()]
    iters = np.zeros(size, dtype=int)
    decisions = state.decisions.copy()
    residual = np.full((size, len(cfg.group_sizes)), np.nan)
    for it in range(1, cfg.max_iterations + 1):
        if not np.any(active):
            break
        nxt = soft_cancel_iteration(state, cfg, books, truth)
        # frozen trials keep their previous state
        keep = ~active
        dec = np.where(keep[:, None], state.decisions, nxt.decisions)
        p = np.where(keep[:, None], state.p, nxt.p)
        v = np.where(keep[:, None], state.v, nxt.v)
        I = np.where(keep, state.I, nxt.I)
        stat = np.where(keep[:, None], state.stat, nxt.stat)
        step = np.abs(1.0 / I - 1.0 / state.I)
        iters[active] = it
        residual[active] = nxt.residual_power[active]
        active = active & (step >= cfg.eta_tol)
        state = SimState(r, dec, p, v, I, stat, it)
        eta_hist.append(state.eta.copy())
        v_hist.append(state.v.copy())
        decisions = dec
    errors = decisions != truth
    return errors, np.array(eta_hist), np.array(v_hist), iters, ~active, residual


@dataclass(frozen=True)
class SimReport:
    """Aggregated outcome of :func:`run_simulation`."""

    error_rate: float
    errors: int
    decisions: int
    per_user_error_rate: np.ndarray
    eta_trajectory: np.ndarray  # mean measured eta after each iteration (index 0 = raw pass)
    v_trajectory: np.ndarray  # (iterations + 1, J) mean measured residual fractions
    iterations: float  # mean iterations used per trial
    max_iterations_used: int
    converged_fraction: float
    trials: int
    residual_power: np.ndarray  # (J,) mean residual interference power per coordinate after the last pass
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def std_error(self) -> float:
        p = self.error_rate
        return math.sqrt(max(p * (1.0 - p), 0.0) / self.decisions)


def _column_mean(a: np.ndarray) -> np.ndarray:
    """Mean over rows ignoring NaN; all-NaN columns give NaN without a warning."""
    ok = np.isfinite(a)
    cnt = ok.sum(axis=0)
    tot = np.where(ok, a, 0.0).sum(axis=0)
    return np.divide(tot, cnt, out=np.full(a.shape[1], np.nan), where=cnt > 0)


def _pad(hist: np.ndarray, length: int) -> np.ndarray:
    if hist.shape[0] >= length:
        return hist[:length]
    tail = np.repeat(hist[-1:], length - hist.shape[0], axis=0)
    return np.concatenate([hist, tail], axis=0)


def _single_user_errors(cfg: SimConfig, batch: int, size: int) -> np.ndarray:
    """Exact single-user trials in the ``2**K``-dimensional span of the codebook.

    A fresh codebook is drawn for every trial through its Bartlett factor:
    with ``C = L Q`` (``Q`` orthonormal rows) the Gram matrix and the noise
    projections ``Q z ~ N(0, I)`` are all the decoder sees, so the law of the
    decision is exact for any dimension ``D`` at a cost independent of ``D``.
    """
    Q = 1 << cfg.code.K
    D = cfg.D
    if D < Q:
        raise ContractError(f"single-user mode needs M*N >= 2**K, got {D} < {Q}")
    ss = np.random.SeedSequence(entropy=int(cfg.seed), spawn_key=(_TRIAL_STREAM, int(batch)))
    rng = np.random.Generator(np.random.PCG64(ss))
    sigma = math.sqrt(cfg.powers[0])  # per-coordinate std for M = 1
    L = np.tril(rng.standard_normal((size, Q, Q)), -1)
    dof = D - np.arange(Q)
    diag = np.sqrt(rng.chisquare(dof[None, :], size=(size, Q)))
    L[:, np.arange(Q), np.arange(Q)] = diag
    L *= sigma
    truth = rng.integers(0, Q, size=size)
    y = L[np.arange(size), truth]
    if cfg.noise:
        y = y + rng.standard_normal((size, Q))
    corr = np.einsum("bkd,bd->bk", L, y)
    n2 = np.einsum("bkd,bkd->bk", L, L)
    dec = np.argmax(corr - 0.5 * n2, axis=1)
    return dec != truth


def run_simulation(cfg: SimConfig) -> SimReport:
    """Monte-Carlo estimate of the per-user block error rate after soft cancellation.

    Trials are processed in batches of ``cfg.batch_size`` (optionally on
    ``cfg.threads`` workers); each trial stops when its measured ``eta`` moves
    by less than ``cfg.eta_tol`` or after ``cfg.max_iterations`` passes.
    ``M = 1`` runs the exact single-user reduction with a fresh codebook per
    trial and no cancellation.
    """
    sizes = [cfg.batch_size] * (cfg.trials // cfg.batch_size)
    if cfg.trials % cfg.batch_size:
        sizes.append(cfg.trials % cfg.batch_size)
    if cfg.M == 1:
        jobs = list(enumerate(sizes))
        if cfg.threads > 1:
            with ThreadPoolExecutor(cfg.threads) as ex:
                errs = list(ex.map(lambda a: _single_user_errors(cfg, *a), jobs))
        else:
            errs = [_single_user_errors(cfg, *a) for a in jobs]
        e = np.concatenate(errs)
        J = len(cfg.group_sizes)
        eta0 = 1.0 / _interference_power(cfg, np.ones((1, J)))
        return SimReport(
            error_rate=float(e.mean()),
            errors=int(e.sum()),
            decisions=int(e.size),
            per_user_error_rate=np.array([e.mean()]),
            eta_trajectory=np.atleast_1d(eta0),
            v_trajectory=np.ones((1, J)),
            iterations=0.0,
            max_iterations_used=0,
            converged_fraction=1.0,
            trials=cfg.trials,
            residual_power=np.full(J, np.nan),
        )

    books = CodebookStore(cfg)
    jobs = list(enumerate(sizes))
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            results = list(ex.map(lambda a: _run_batch(cfg, books, *a), jobs))
    else:
        results = [_run_batch(cfg, books, *a) for a in jobs]
    errors = np.concatenate([r[0] for r in results])
    length = max(r[1].shape[0] for r in results)
    eta = np.concatenate([_pad(r[1], length) for r in results], axis=1)
    v = np.concatenate([_pad(r[2], length) for r in results], axis=1)
    iters = np.concatenate([r[3] for r in results])
    conv = np.concatenate([r[4] for r in results])
    residual = np.concatenate([r[5] for r in results])
    return SimReport(
        error_rate=float(errors.mean()),
        errors=int(errors.sum()),
        decisions=int(errors.size),
        per_user_error_rate=errors.mean(axis=0),
        eta_trajectory=eta.mean(axis=1),
        v_trajectory=v.mean(axis=1),
        iterations=float(iters.mean()),
        max_iterations_used=int(iters.max(initial=0)),
        converged_fraction=float(conv.mean()),
        trials=cfg.trials,
        residual_power=_column_mean(residual),
        extra={"cached_codebooks": books.cached},
    )
