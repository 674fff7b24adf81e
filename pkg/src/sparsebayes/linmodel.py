"""Conjugate Bayesian linear regression with ARD hyper-parameter learning."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._errors import DomainError
from ._linalg import check_conditioning, chol_solve, cholesky, gaussian_logpdf_chol

__all__ = [
    "ArdResult",
    "LinRegData",
    "LinRegPosterior",
    "LinRegPrior",
    "ard_fit",
    "bic_score",
    "blr_evidence_log",
    "blr_posterior",
    "blr_predict",
]


@dataclass(frozen=True)
class LinRegData:
    """Design matrix ``X`` (N x L, rows are inputs) and targets ``y`` (N,)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise DomainError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DomainError("X and y must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class LinRegPrior:
    """Independent zero-mean Gaussian prior with per-coefficient precisions ``alpha``."""

    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float).ravel()
        if not np.all(alpha > 0) or np.any(np.isnan(alpha)):
            raise DomainError("prior precisions must be strictly positive")
        object.__setattr__(self, "alpha", alpha)


@dataclass(frozen=True)
class LinRegPosterior:
    mean: np.ndarray
    cov: np.ndarray
    beta: float


def _check_beta(beta):
    if not (np.isfinite(beta) and beta > 0):
        raise DomainError("noise precision beta must be finite and > 0")


def blr_posterior(data: LinRegData, prior: LinRegPrior, beta: float) -> LinRegPosterior:
    """Gaussian posterior ``N(mu, Sigma)`` with ``Sigma = (A + beta X^T X)^-1``, ``mu = beta Sigma X^T y``."""
    _check_beta(beta)
    X, y = data.X, data.y
    if prior.alpha.size != X.shape[1]:
        raise DomainError("prior length does not match the number of features")
    P = np.diag(prior.alpha) + beta * (X.T @ X)
    L = cholesky(P, what="posterior precision")
    cov = chol_solve(L, np.eye(P.shape[0]))
    cov = 0.5 * (cov + cov.T)
    mean = chol_solve(L, beta * (X.T @ y))
    return LinRegPosterior(mean=mean, cov=cov, beta=float(beta))


def blr_evidence_log(data: LinRegData, prior: LinRegPrior, beta: float) -> float:
    """``log N(y; 0, beta^-1 I + X A^-1 X^T)``."""
    _check_beta(beta)
    if data.n < 1:
        raise DomainError("evidence needs at least one observation")
    X = data.X
    C = (X / prior.alpha) @ X.T + np.eye(data.n) / beta
    check_conditioning(C, "evidence covariance")
    return float(gaussian_logpdf_chol(data.y, cholesky(C, what="evidence covariance")))


def blr_predict(x_star, post: LinRegPosterior) -> tuple[float, float]:
    """Predictive mean ``mu^T x*`` and variance ``1/beta + x*^T Sigma x*``."""
    x_star = np.asarray(x_star, dtype=float).ravel()
    if x_star.size != post.mean.size:
        raise DomainError("x_star has the wrong length")
    return float(post.mean @ x_star), float(1.0 / post.beta + x_star @ post.cov @ x_star)


def bic_score(loglik_at_map: float, n_params: int, n_samples: int) -> float:
    """``loglik - (L/2) log N``."""
    if n_samples < 1 or n_params < 0:
        raise DomainError("need n_samples >= 1 and n_params >= 0")
    return float(loglik_at_map - 0.5 * n_params * math.log(n_samples))


# -- ARD -----------------------------------------------------------------------


@dataclass
class ArdResult:
    """Outcome of :func:`ard_fit`.

    ``variances`` are the fitted prior variances ``zeta_l = 1/alpha_l``; a
    coefficient is pruned when its variance falls below ``prune_eps``.
    ``prior`` holds precisions for the surviving coefficients only (pruned
    entries get ``inf``).
    """

    variances: np.ndarray
    beta: float
    trace: list = field(default_factory=list)
    converged: bool = False
    pruned: np.ndarray = None
    posterior: LinRegPosterior = None
    n_iter: int = 0

    @property
    def prior(self) -> LinRegPrior:
        with np.errstate(divide="ignore"):
            return LinRegPrior(np.where(self.pruned, np.inf, 1.0 / self.variances))

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(~self.pruned)


class _ArdState:
    """Evidence and posterior moments in the N x N (weight-variance) form.

    Working with variances rather than precisions lets ``zeta_l = 0`` sit
    exactly on the boundary.
    """

    def __init__(self, X, y, zeta, v):
        self.zeta, self.v = zeta, v
        XZ = X * zeta
        K = XZ @ X.T
        C = K + v * np.eye(X.shape[0])
        L = cholesky(C, what="ARD covariance")
        self.evidence = float(gaussian_logpdf_chol(y, L))
        Ciy = chol_solve(L, y)
        CiXZ = chol_solve(L, XZ)
        self.mean = XZ.T @ Ciy
        self.sigma_diag = zeta - np.einsum("nl,nl->l", XZ, CiXZ)
        self.resid = y - X @ self.mean
        # tr(X Sigma X^T) = tr(K - K C^-1 K)
        self.fit_trace = float(np.trace(K) - np.sum(K * chol_solve(L, K)))


def ard_fit(
    data: LinRegData,
    max_iters: int = 500,
    tol: float = 1e-8,
    prune_eps: float = 1e-8,
    prune_rel: float = 0.0,
    beta: float | None = None,
    init_variance: float = 1.0,
    min_noise_var: float = 1e-10,
) -> ArdResult:
    """Per-coefficient variances (and noise precision) by evidence maximization.

    Each iteration tries the MacKay fixed point ``zeta_l <- mu_l^2 / gamma_l``
    (``gamma_l = 1 - Sigma_ll / zeta_l``) and falls back to the EM update
    ``zeta_l <- mu_l^2 + Sigma_ll`` whenever the fast step would lower the
    evidence, so the evidence trace never decreases.

    Parameters
    ----------
    data : LinRegData
    max_iters : int
        Iteration cap; ``converged`` is False if it is reached first.
    tol : float
        Relative change in log evidence that counts as converged.
    prune_eps : float
        Variance threshold below which a coefficient is reported pruned.
    prune_rel : float
        Additionally prune variances below ``prune_rel * max(variances)``.
        At the exact evidence optimum, irrelevant columns that happen to
        correlate with the noise keep small positive variances; a relative
        cut removes them where the absolute one cannot.
    beta : float, optional
        Fix the noise precision instead of learning it.
    """
    if data.n < 1:
        raise DomainError("ARD needs at least one observation")
    X, y = data.X, data.y
    n = data.n
    fixed_noise = beta is not None
    if fixed_noise:
        _check_beta(beta)
        v = 1.0 / beta
    else:
        var_y = float(np.var(y))
        v = max(0.1 * var_y if var_y > 0 else 1.0, min_noise_var)
    zeta = np.full(data.n_features, float(init_variance))

    state = _ArdState(X, y, zeta, v)
    trace = [state.evidence]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        cand = _mackay_step(state, n, fixed_noise, min_noise_var)
        new = None
        if cand is not None:
            new = _ArdState(X, y, *cand)
            if new.evidence < state.evidence - 1e-12 * abs(state.evidence):
                new = None
        if new is None:
            new = _ArdState(X, y, *_em_step(state, n, fixed_noise, min_noise_var))
            if new.evidence < state.evidence:
                # EM cannot lose evidence; this is roundoff at the optimum
                converged = True
                break
        rel = abs(new.evidence - state.evidence) / max(abs(state.evidence), 1e-300)
        state = new
        trace.append(state.evidence)
        if rel < tol:
            converged = True
            break

    cut = max(prune_eps, prune_rel * float(state.zeta.max(initial=0.0)))
    pruned = state.zeta < cut
    keep = ~pruned
    if keep.any():
        sub = LinRegData(X[:, keep], y)
        post_sub = blr_posterior(sub, LinRegPrior(1.0 / state.zeta[keep]), 1.0 / state.v)
        mean = np.zeros(data.n_features)
        cov = np.zeros((data.n_features, data.n_features))
        mean[keep] = post_sub.mean
        cov[np.ix_(keep, keep)] = post_sub.cov
    else:
        mean = np.zeros(data.n_features)
        cov = np.zeros((data.n_features, data.n_features))
    post = LinRegPosterior(mean=mean, cov=cov, beta=1.0 / state.v)
    return ArdResult(
        variances=state.zeta.copy(), beta=1.0 / state.v, trace=trace, converged=converged,
        pruned=pruned, posterior=post, n_iter=it,
    )


def _mackay_step(state, n, fixed_noise, min_noise_var):
    zeta = state.zeta
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma = np.where(zeta > 0, 1.0 - state.sigma_diag / zeta, 0.0)
        new_zeta = np.where(gamma > 1e-12, state.mean**2 / gamma, 0.0)
    if not np.all(np.isfinite(new_zeta)):
        return None
    v = state.v
    if not fixed_noise:
        dof = n - float(np.sum(np.clip(gamma, 0.0, 1.0)))
        if dof <= 0:
            return None
        v = max(float(state.resid @ state.resid) / dof, min_noise_var)
    return new_zeta, v


def _em_step(state, n, fixed_noise, min_noise_var):
    new_zeta = state.mean**2 + np.maximum(state.sigma_diag, 0.0)
    v = state.v
    if not fixed_noise:
        v = max((float(state.resid @ state.resid) + state.fit_trace) / n, min_noise_var)
    return new_zeta, v
