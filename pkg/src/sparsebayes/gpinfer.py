"""GP regression: evidence, prediction and linear-multiple-kernel weight learning.

The weight learners work with the objective

    l(eta) = y^T C(eta)^-1 y + log det C(eta),   C(eta) = sum_i alpha_i K_i + v I,

which is ``-2 log p(y) - N log(2 pi)``. Writing ``l = g - h`` with
``g = y^T C^-1 y`` and ``h = -log det C`` exposes a difference of convex
functions in ``eta = (alpha, v) >= 0``.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.sparse.linalg import LinearOperator, cg

from ._errors import DomainError, NumericalError
from ._linalg import LOG_2PI, check_conditioning, chol_solve, cholesky, gaussian_logpdf_chol
from .kernels import GramCache, KernelSpec, SEKernel, kernel_matrix, with_weights

__all__ = [
    "V_MIN",
    "FitTrace",
    "GpModel",
    "GpPosterior",
    "LmkFit",
    "admm_fit",
    "admm_lagrangian",
    "dcp_parts",
    "default_init",
    "gamma_curve",
    "gamma_fit",
    "gp_evidence_log",
    "gp_predict",
    "mm_fit",
    "mm_iteration",
    "mm_surrogate",
    "objective",
    "se_fit",
]

V_MIN = 1e-10


@dataclass(frozen=True)
class GpModel:
    """Zero-mean GP with kernel ``kernel`` and Gaussian noise variance ``noise_var``."""

    kernel: KernelSpec
    noise_var: float

    def __post_init__(self):
        v = float(self.noise_var)
        if not (math.isfinite(v) and v >= V_MIN):
            raise DomainError(f"noise variance must be finite and >= {V_MIN:g}")
        object.__setattr__(self, "noise_var", v)


@dataclass(frozen=True)
class GpPosterior:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def var(self) -> np.ndarray:
        return np.diag(self.cov).copy()


@dataclass
class FitTrace:
    """Per-iteration objective ``l``, active-weight count and cumulative wall time."""

    objective: list = field(default_factory=list)
    active: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    converged: bool = False
    info: dict = field(default_factory=dict)

    def record(self, value, n_active, t0):
        self.objective.append(float(value))
        self.active.append(int(n_active))
        self.wall_time.append(time.perf_counter() - t0)

    @property
    def n_iter(self) -> int:
        return max(len(self.objective) - 1, 0)


@dataclass
class LmkFit:
    """Fitted weights of a linear multiple kernel plus the noise variance."""

    alpha: np.ndarray
    noise_var: float
    trace: FitTrace
    pruned: np.ndarray
    n: int
    kernel: KernelSpec | None = None

    @property
    def converged(self) -> bool:
        return self.trace.converged

    @property
    def objective(self) -> float:
        return self.trace.objective[-1]

    @property
    def evidence(self) -> float:
        """Log evidence ``-(l + N log 2 pi) / 2`` at the fitted weights."""
        return -0.5 * (self.objective + self.n * LOG_2PI)

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(~self.pruned)

    @property
    def model(self) -> GpModel:
        if self.kernel is None:
            raise DomainError("fit was made on raw matrices; no kernel spec attached")
        return GpModel(self.kernel, self.noise_var)


# -- evidence and prediction ----------------------------------------------------------


def _targets(y, n=None):
    y = np.asarray(y, dtype=float).ravel()
    if not np.all(np.isfinite(y)):
        raise DomainError("targets must be finite")
    if n is not None and y.size != n:
        raise DomainError(f"expected {n} targets, got {y.size}")
    return y


def _n_inputs(X):
    X = np.asarray(X, dtype=float)
    return 1 if X.ndim == 0 else X.shape[0]


def gp_evidence_log(X, y, model: GpModel) -> float:
    """``log N(y; 0, K(X, X) + v I)``."""
    y = _targets(y, _n_inputs(X))
    if y.size < 1:
        raise DomainError("evidence needs at least one observation")
    C = kernel_matrix(model.kernel, X)
    C[np.diag_indices_from(C)] += model.noise_var
    check_conditioning(C, "GP covariance")
    return float(gaussian_logpdf_chol(y, cholesky(C, what="GP covariance")))


def gp_predict(X, y, X_star, model: GpModel) -> GpPosterior:
    """Predictive mean and covariance of noisy targets at ``X_star``."""
    Kss = kernel_matrix(model.kernel, X_star)
    Kss[np.diag_indices_from(Kss)] += model.noise_var
    n = 0 if X is None else _n_inputs(X)
    if n == 0:
        return GpPosterior(np.zeros(Kss.shape[0]), Kss)
    y = _targets(y, n)
    C = kernel_matrix(model.kernel, X)
    C[np.diag_indices_from(C)] += model.noise_var
    L = cholesky(C, what="GP covariance")
    Ks = kernel_matrix(model.kernel, X, X_star)
    mean = Ks.T @ chol_solve(L, y)
    W = linalg.solve_triangular(L, Ks, lower=True, check_finite=False)
    cov = Kss - W.T @ W
    return GpPosterior(mean, 0.5 * (cov + cov.T))


# -- objective pieces ---------------------------------------------------------------


def _covariance(cache, alpha, v):
    return cache.covariance(alpha, v)


def objective(cache: GramCache, y, alpha, v) -> float:
    """``l = y^T C^-1 y + log det C``."""
    L = cholesky(_covariance(cache, alpha, v), what="kernel covariance")
    z = linalg.solve_triangular(L, y, lower=True, check_finite=False)
    return float(z @ z + 2.0 * np.sum(np.log(np.diag(L))))


def _quad_forms(cache, u):
    """``u^T K_i u`` for every subkernel."""
    Q, N, _ = cache.Ks.shape
    return (cache.Ks.reshape(Q * N, N) @ u).reshape(Q, N) @ u


def _traces(cache, M):
    """``tr(M K_i)`` for symmetric ``M``."""
    Q = cache.n_kernels
    return cache.Ks.reshape(Q, -1) @ M.ravel()


def dcp_parts(cache: GramCache, y, alpha, v):
    """``g``, ``h`` and their gradients with respect to ``(alpha_1..alpha_Q, v)``.

    ``dg/dalpha_i = -y^T C^-1 K_i C^-1 y`` and ``dh/dalpha_i = -tr(C^-1 K_i)``;
    the last gradient entry is the noise-variance coordinate (``K = I``).
    """
    y = np.asarray(y, dtype=float)
    L = cholesky(_covariance(cache, alpha, v), what="kernel covariance")
    u = chol_solve(L, y)
    Ci = chol_solve(L, np.eye(cache.n))
    g = float(y @ u)
    h = -2.0 * float(np.sum(np.log(np.diag(L))))
    grad_g = -np.append(_quad_forms(cache, u), u @ u)
    grad_h = -np.append(_traces(cache, Ci), np.trace(Ci))
    return g, h, grad_g, grad_h


def mm_surrogate(cache: GramCache, y, eta, eta_k) -> float:
    """Majorizer ``g(eta) - h(eta_k) - grad h(eta_k)^T (eta - eta_k)`` of ``l``."""
    eta = np.asarray(eta, dtype=float)
    eta_k = np.asarray(eta_k, dtype=float)
    _, h_k, _, grad_h = dcp_parts(cache, y, eta_k[:-1], eta_k[-1])
    g, _, _, _ = dcp_parts(cache, y, eta[:-1], eta[-1])
    return float(g - h_k - grad_h @ (eta - eta_k))


def default_init(y, Q):
    """``alpha = (y^T y / N) / Q`` for every weight and ``v = 0.1 var(y)``."""
    y = np.asarray(y, dtype=float)
    scale = float(y @ y) / max(y.size, 1)
    if scale <= 0:
        scale = 1.0
    v = 0.1 * float(np.var(y))
    return np.full(Q, scale / Q), max(v if v > 0 else 0.1 * scale, V_MIN)


def _prepare(X, y, spec, cache):
    if cache is None:
        if spec is None or X is None:
            raise DomainError("need either (X, spec) or a Gram cache")
        cache = GramCache(spec, X)
    y = _targets(y, cache.n)
    if y.size < 1:
        raise DomainError("need at least one observation")
    return cache, y


def _init(y, cache, init, noise_var, v_min):
    alpha0, v0 = default_init(y, cache.n_kernels)
    if init is not None:
        alpha0 = np.array(init, dtype=float).ravel()
        if alpha0.size != cache.n_kernels:
            raise DomainError(f"init has {alpha0.size} weights, kernel has {cache.n_kernels}")
        if not np.all(np.isfinite(alpha0) & (alpha0 >= 0)):
            raise DomainError("initial weights must be finite and >= 0")
    if noise_var is not None:
        v0 = float(noise_var)
    if not (math.isfinite(v0) and v0 >= v_min):
        raise DomainError(f"noise variance must be >= {v_min:g}")
    return alpha0, v0


def _prune_mask(alpha, eps_w):
    top = float(np.max(alpha, initial=0.0))
    return alpha <= eps_w * top if top > 0 else np.ones(alpha.shape, dtype=bool)


def _finish(alpha, v, trace, cache, n, eps_w):
    pruned = _prune_mask(alpha, eps_w)
    kernel = None
    if cache.spec is not None:
        kernel = with_weights(cache.spec, np.where(pruned, 0.0, alpha))
    return LmkFit(alpha=alpha, noise_var=float(v), trace=trace, pruned=pruned, n=n, kernel=kernel)


# -- MM / DCP -------------------------------------------------------------------


def mm_iteration(cache: GramCache, y, alpha, v, *, fix_noise=False, v_min=V_MIN,
                 inner_iters=5, inner_tol=1e-10):
    """One outer MM step: linearize ``h`` at ``(alpha, v)`` and descend the surrogate.

    The convex subproblem ``min g(eta) + w^T eta`` with ``w = -grad h`` is
    solved by alternating minimization of its variational form
    ``sum_i z_i^T K_i^+ z_i / eta_i + w_i eta_i`` subject to ``sum_i z_i = y``,
    which gives the multiplicative update ``eta_i <- eta_i sqrt(q_i / w_i)``
    with ``q_i = u^T K_i u`` and ``u = C^-1 y``. Each inner pass lowers the
    surrogate, so ``l`` never increases across outer steps.

    Returns the new ``(alpha, v)`` and the surrogate values of the inner passes.
    """
    L = cholesky(cache.covariance(alpha, v), what="kernel covariance")
    Ci = chol_solve(L, np.eye(cache.n))
    w = _traces(cache, Ci)
    w_v = float(np.trace(Ci))
    alpha = np.array(alpha, dtype=float)
    surrogate = []
    for _ in range(inner_iters):
        u = chol_solve(L, y)
        q = _quad_forms(cache, u)
        val = float(y @ u + w @ alpha + (0.0 if fix_noise else w_v * v))
        surrogate.append(val)
        if len(surrogate) > 1 and surrogate[-2] - val <= inner_tol * abs(val):
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(w > 0, np.sqrt(np.maximum(q, 0.0) / w), 1.0)
        alpha = alpha * ratio
        if not fix_noise:
            v = max(v * math.sqrt(float(u @ u) / w_v), v_min)
        L = cholesky(cache.covariance(alpha, v), what="kernel covariance")
    return alpha, v, surrogate


def mm_fit(X, y, spec: KernelSpec | None = None, init=None, *, noise_var=None,
           fix_noise=False, max_iters=500, tol=1e-9, inner_iters=5, eps_w=1e-6,
           v_min=V_MIN, cache: GramCache | None = None) -> LmkFit:
    """Evidence maximization for linear-multiple-kernel weights by MM.

    Parameters
    ----------
    X, y : array_like
        Training inputs and targets.
    spec : KernelSpec
        A GridSM, spectral-mixture or linear-combination kernel; its own
        weights are ignored.
    init : array_like, optional
        Starting weights (default ``(y^T y / N) / Q`` each). Zero weights stay
        zero under the multiplicative inner update.
    noise_var : float, optional
        Starting noise variance (default ``0.1 var(y)``); held fixed when
        ``fix_noise`` is set.
    tol : float
        Stop when ``|l_k - l_{k+1}| <= tol * max(1, |l_k|)``.
    eps_w : float
        Weights at or below ``eps_w * max(alpha)`` are reported pruned.
    """
    cache, y = _prepare(X, y, spec, cache)
    alpha, v = _init(y, cache, init, noise_var, v_min)
    trace = FitTrace()
    t0 = time.perf_counter()
    l_cur = objective(cache, y, alpha, v)
    trace.record(l_cur, np.count_nonzero(~_prune_mask(alpha, eps_w)), t0)
    for _ in range(max_iters):
        a_new, v_new, _ = mm_iteration(
            cache, y, alpha, v, fix_noise=fix_noise, v_min=v_min, inner_iters=inner_iters
        )
        l_new = objective(cache, y, a_new, v_new)
        if not math.isfinite(l_new):
            raise NumericalError("MM objective became non-finite", alpha=a_new, v=v_new)
        if l_new > l_cur:
            # roundoff at the optimum; keep the previous iterate
            trace.converged = l_new - l_cur <= 1e-9 * max(1.0, abs(l_cur))
            break
        done = l_cur - l_new <= tol * max(1.0, abs(l_cur))
        alpha, v, l_cur = a_new, v_new, l_new
        trace.record(l_cur, np.count_nonzero(~_prune_mask(alpha, eps_w)), t0)
        if done:
            trace.converged = True
            break
    return _finish(alpha, v, trace, cache, y.size, eps_w)


# -- sequential gamma(alpha_i) ascent -------------------------------------------------------


def _low_rank_factors(cache, rel=1e-12):
    """``K_i = F_i F_i^T`` with ``F_i`` keeping eigen-directions above ``rel * max``."""
    out = []
    for K in cache.Ks:
        lam, U = np.linalg.eigh(K)
        keep = lam > rel * max(lam[-1], 0.0)
        out.append(U[:, keep] * np.sqrt(lam[keep]))
    return out


def _gamma_coeffs(L, F, y):
    """Eigenvalues ``s_k`` of ``L^-1 K_i L^-T`` and projections ``b_k`` of ``L^-1 y``."""
    if F.shape[1] == 0:
        return np.zeros(0), np.zeros(0)
    B = linalg.solve_triangular(L, F, lower=True, check_finite=False)
    yt = linalg.solve_triangular(L, y, lower=True, check_finite=False)
    s, V = np.linalg.eigh(B.T @ B)
    keep = s > 1e-14 * max(s[-1], 0.0)
    s, V = s[keep], V[:, keep]
    b = (V.T @ (B.T @ yt)) / np.sqrt(s)
    return s, b


def _gamma(a, s, b):
    a = np.asarray(a, dtype=float)[..., None]
    x = a * s
    return np.sum(-0.5 * np.log1p(x) + 0.5 * b**2 * x / (1.0 + x), axis=-1)


def gamma_curve(cache: GramCache, y, alpha, v, i):
    """``gamma(a) = L(alpha with alpha_i = a) - L(alpha with alpha_i = 0)``.

    Uses the eigen-decomposition of ``L^-1 K_i L^-T`` where ``L L^T`` is the
    covariance without subkernel ``i``:
    ``gamma(a) = sum_k -log(1 + a s_k)/2 + b_k^2 a s_k / (2 (1 + a s_k))``.
    """
    alpha = np.array(alpha, dtype=float)
    alpha[i] = 0.0
    L = cholesky(cache.covariance(alpha, v), what="kernel covariance")
    F = _low_rank_factors(GramCache.from_matrices(cache.Ks[i : i + 1]))[0]
    s, b = _gamma_coeffs(L, F, np.asarray(y, dtype=float))
    return lambda a: _gamma(a, s, b)


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_max(f, lo, hi, tol=1e-10, max_iter=200):
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def _gamma_argmax(s, b, current, lo=1e-12, hi=1e6, n_grid=73):
    """Maximize ``gamma`` over ``{0} U [lo, hi]``; ties prefer zero."""
    if s.size == 0:
        return 0.0, 0.0
    f = lambda t: float(_gamma(math.exp(t), s, b))
    grid = np.linspace(math.log(lo), math.log(hi), n_grid)
    vals = _gamma(np.exp(grid), s, b)
    k = int(np.argmax(vals))
    a_lo = grid[max(k - 1, 0)]
    a_hi = grid[min(k + 1, n_grid - 1)]
    t_gold, g_gold = _golden_max(f, a_lo, a_hi)
    cands = [(math.exp(t_gold), g_gold), (math.exp(grid[k]), float(vals[k]))]
    if current > 0:
        cands.append((current, float(_gamma(current, s, b))))
    a_best, g_best = max(cands, key=lambda c: c[1])
    # sparser model wins unless the gain is resolvable
    if g_best <= 1e-12 * max(1.0, float(np.sum(b**2))):
        return 0.0, 0.0
    return a_best, g_best


def gamma_fit(X, y, spec: KernelSpec | None = None, noise_var: float | None = None,
              init=None, *, max_sweeps=200, tol=1e-9, eps_w=1e-6,
              cache: GramCache | None = None) -> LmkFit:
    """Cyclic coordinate ascent on the subkernel weights with ``v`` held fixed.

    Each coordinate maximizes ``gamma(alpha_i)`` (see :func:`gamma_curve`)
    by a log-grid scan refined with golden-section search on
    ``[1e-12, 1e6]``, compared against ``alpha_i = 0`` and the current value.
    The covariance without subkernel ``i`` is refactorized per coordinate.
    """
    cache, y = _prepare(X, y, spec, cache)
    if noise_var is None:
        raise DomainError("gamma_fit needs a fixed noise variance")
    alpha, v = _init(y, cache, np.zeros(cache.n_kernels) if init is None else init, noise_var, V_MIN)
    factors = _low_rank_factors(cache)
    trace = FitTrace()
    t0 = time.perf_counter()
    l_cur = objective(cache, y, alpha, v)
    trace.record(l_cur, np.count_nonzero(~_prune_mask(alpha, eps_w)), t0)
    for _ in range(max_sweeps):
        for i in range(cache.n_kernels):
            a_i = alpha[i]
            alpha[i] = 0.0
            L = cholesky(cache.covariance(alpha, v), what="kernel covariance")
            s, b = _gamma_coeffs(L, factors[i], y)
            alpha[i], _ = _gamma_argmax(s, b, a_i)
        l_new = objective(cache, y, alpha, v)
        done = abs(l_cur - l_new) <= tol * max(1.0, abs(l_cur))
        l_cur = l_new
        trace.record(l_cur, np.count_nonzero(~_prune_mask(alpha, eps_w)), t0)
        if done:
            trace.converged = True
            break
    return _finish(alpha, v, trace, cache, y.size, eps_w)


# -- ADMM -----------------------------------------------------------------------


def admm_lagrangian(cache: GramCache, y, S, alpha, v, U, rho) -> float:
    """``y^T S y - log det S + (rho/2) ||S C - I + U||_F^2``."""
    C = cache.covariance(alpha, v)
    sign, logdet = np.linalg.slogdet(S)
    if sign <= 0:
        return math.inf
    R = S @ C - np.eye(cache.n) + U
    return float(y @ S @ y - logdet + 0.5 * rho * np.sum(R * R))


def _sym(A):
    return 0.5 * (A + A.T)


def _s_update(S, C, U, yy, rho, tol=1e-11, max_newton=50):
    """Damped Newton on ``f(S) = tr(yy S) - log det S + (rho/2)||S C - I + U||^2``.

    Gradient ``yy - S^-1 + rho sym((S C - I + U) C)``; Hessian action
    ``S^-1 D S^-1 + rho sym(D C^2)``. Backtracking keeps ``S`` positive definite.
    """
    n = S.shape[0]
    I = np.eye(n)
    C2 = C @ C

    def f(S_):
        try:
            Ls = linalg.cholesky(S_, lower=True, check_finite=False)
        except linalg.LinAlgError:
            return math.inf
        R = S_ @ C - I + U
        return float(np.sum(yy * S_) - 2.0 * np.sum(np.log(np.diag(Ls))) + 0.5 * rho * np.sum(R * R))

    f_cur = f(S)
    for _ in range(max_newton):
        Si = np.linalg.inv(S)
        Si = _sym(Si)
        G = _sym(yy - Si + rho * (S @ C - I + U) @ C)
        gnorm = np.linalg.norm(G)
        if gnorm <= tol * max(1.0, np.linalg.norm(Si)):
            break
        if n * n <= 1600:
            H = np.kron(Si, Si) + 0.5 * rho * (np.kron(I, C2) + np.kron(C2, I))
            D = -np.linalg.solve(H, G.ravel()).reshape(n, n)
        else:
            op = LinearOperator(
                (n * n, n * n),
                matvec=lambda d: (Si @ d.reshape(n, n) @ Si
                                  + 0.5 * rho * (d.reshape(n, n) @ C2 + C2 @ d.reshape(n, n))).ravel(),
            )
            d, _ = cg(op, -G.ravel(), rtol=1e-10, maxiter=10 * n)
            D = d.reshape(n, n)
        D = _sym(D)
        slope = float(np.sum(G * D))
        if slope >= 0:
            break
        t = 1.0
        while t > 1e-12:
            f_new = f(S + t * D)
            if f_new <= f_cur + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        S = S + t * D
        f_cur = f_new
    return S


def _alpha_update(cache, S, U, v):
    """Nonnegative least squares for ``alpha`` in the penalty term at fixed ``v``."""
    cols = np.einsum("ij,qjk->qik", S, cache.Ks).reshape(cache.n_kernels, -1).T
    target = (np.eye(cache.n) - U - v * S).ravel()
    alpha, _ = optimize.nnls(cols, target, maxiter=50 * cols.shape[1])
    return alpha


def _best_noise(cache, y, alpha, v, v_min, n_grid=41):
    """Noise variance maximizing the evidence at fixed weights (log-grid plus golden section)."""
    hi = math.log(max(10.0 * float(y @ y) / y.size, 10.0 * v, 1e-300))
    lo = math.log(v_min)

    def f(t):
        try:
            return -objective(cache, y, alpha, math.exp(t))
        except NumericalError:
            return -math.inf

    grid = np.linspace(lo, hi, n_grid)
    vals = np.array([f(t) for t in grid])
    k = int(np.argmax(vals))
    t_best, f_best = _golden_max(f, grid[max(k - 1, 0)], grid[min(k + 1, n_grid - 1)])
    cands = [(math.exp(t_best), f_best), (math.exp(grid[k]), vals[k]), (v, f(math.log(v)))]
    return max(cands, key=lambda c: c[1])[0]


def _admm_inner(cache, y, alpha, v, S, U, rho, max_iters, tol, trace, t0, eps_w):
    n = cache.n
    I = np.eye(n)
    yy = np.outer(y, y)
    C = cache.covariance(alpha, v)
    r_norm = s_norm = math.inf
    converged = False
    for _ in range(max_iters):
        S = _s_update(S, C, U, yy, rho)
        alpha = _alpha_update(cache, S, U, v)
        C_new = cache.covariance(alpha, v)
        R = S @ C_new - I
        U = U + R
        r_norm = float(np.linalg.norm(R))
        s_norm = float(rho * np.linalg.norm(S @ (C_new - C)))
        C = C_new
        try:
            l_val = objective(cache, y, alpha, v)
        except NumericalError:
            l_val = math.inf
        trace.record(l_val, np.count_nonzero(~_prune_mask(alpha, eps_w)), t0)
        if r_norm < tol and s_norm < tol:
            converged = True
            break
        if r_norm > 10.0 * s_norm:
            rho *= 2.0
            U /= 2.0
        elif s_norm > 10.0 * r_norm:
            rho /= 2.0
            U *= 2.0
    return alpha, S, U, rho, r_norm, s_norm, converged


def admm_fit(X, y, spec: KernelSpec | None = None, init=None, *, noise_var=None,
             fix_noise=False, rho_init=1.0, max_iters=5000, tol=1e-6, eps_w=1e-6,
             max_outer=50, outer_tol=1e-10, v_min=V_MIN,
             cache: GramCache | None = None) -> LmkFit:
    """ADMM on ``min y^T S y - log det S`` subject to ``S C(alpha, v) = I``.

    Scaled form with dual ``U``: a damped-Newton ``S`` step, a nonnegative
    least-squares ``alpha`` step and ``U <- U + S C - I``. The penalty
    ``rho`` is rebalanced when the primal and dual residuals differ by more
    than 10x; the inner loop stops when both fall below ``tol``.

    The noise variance is a separate block: after each inner ADMM solve it is
    set to its evidence-maximizing value given ``alpha`` and the ADMM is
    warm-started again. Putting ``v`` inside the least-squares step lets
    ``C`` collapse towards zero on small problems. With ``fix_noise`` a
    single inner solve is run. ``trace.info`` holds the final residuals.
    """
    cache, y = _prepare(X, y, spec, cache)
    alpha, v = _init(y, cache, init, noise_var, v_min)
    n = cache.n
    S = _sym(np.linalg.inv(cache.covariance(alpha, v)))
    U = np.zeros((n, n))
    rho = float(rho_init)
    trace = FitTrace()
    t0 = time.perf_counter()
    l_cur = objective(cache, y, alpha, v)
    trace.record(l_cur, np.count_nonzero(~_prune_mask(alpha, eps_w)), t0)
    budget = max_iters
    converged = False
    r_norm = s_norm = math.inf
    for _ in range(1 if fix_noise else max_outer):
        before = len(trace.objective)
        alpha, S, U, rho, r_norm, s_norm, inner_ok = _admm_inner(
            cache, y, alpha, v, S, U, rho, budget, tol, trace, t0, eps_w
        )
        budget -= len(trace.objective) - before
        if not math.isfinite(trace.objective[-1]):
            raise NumericalError("ADMM ended at a singular covariance", alpha=alpha, v=v)
        if fix_noise:
            converged = inner_ok
            break
        v_new = _best_noise(cache, y, alpha, v, v_min)
        l_new = objective(cache, y, alpha, v_new)
        trace.record(l_new, np.count_nonzero(~_prune_mask(alpha, eps_w)), t0)
        done = inner_ok and abs(l_cur - l_new) <= outer_tol * max(1.0, abs(l_cur))
        v, l_cur = v_new, l_new
        if done or budget <= 0:
            converged = done
            break
        S = _sym(np.linalg.inv(cache.covariance(alpha, v)))
    trace.converged = converged
    trace.info.update(primal_residual=r_norm, dual_residual=s_norm, rho=rho)
    return _finish(alpha, v, trace, cache, y.size, eps_w)


# -- SE baseline --------------------------------------------------------------------


def se_fit(X, y, init=(1.0, 1.0, 0.1), v_min=V_MIN) -> GpModel:
    """SE kernel magnitude, length-scale and noise by L-BFGS on the log evidence."""
    y = _targets(y, _n_inputs(X))
    X = np.asarray(X, dtype=float)
    scale = max(float(np.var(y)), 1e-12)
    x0 = np.log([init[0] * scale, init[1], max(init[2] * scale, v_min)])

    def neg(theta):
        m, ell, v = np.exp(np.clip(theta, -30, 30))
        try:
            return -gp_evidence_log(X, y, GpModel(SEKernel(m, ell), max(v, v_min)))
        except (NumericalError, DomainError):
            return 1e300

    best = None
    for ell0 in (init[1], 3.0 * init[1], 10.0 * init[1]):
        start = x0.copy()
        start[1] = math.log(ell0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = optimize.minimize(neg, start, method="L-BFGS-B")
        if best is None or res.fun < best.fun:
            best = res
    m, ell, v = np.exp(np.clip(best.x, -30, 30))
    return GpModel(SEKernel(m, ell), max(v, v_min))
