"""Cholesky helpers shared by the Gaussian models."""

import math
import warnings

import numpy as np
from scipy import linalg

from ._errors import ConditioningWarning, NumericalError

LOG_2PI = math.log(2.0 * math.pi)
COND_LIMIT = 1e12


def cholesky(C, jitter_rel=1e-8, what="covariance"):
    """Lower Cholesky factor, retrying once with ``jitter_rel * trace/N`` on the diagonal."""
    try:
        return linalg.cholesky(C, lower=True, check_finite=False)
    except linalg.LinAlgError:
        pass
    n = C.shape[0]
    jitter = jitter_rel * max(np.trace(C), 1e-300) / max(n, 1)
    try:
        return linalg.cholesky(C + jitter * np.eye(n), lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"Cholesky factorization of the {what} failed", jitter=jitter) from exc


def check_conditioning(C, what="covariance"):
    """Warn when the condition number exceeds ``COND_LIMIT``; returns the estimate."""
    if C.shape[0] == 0:
        return 1.0
    ev = np.linalg.eigvalsh(C)
    cond = math.inf if ev[0] <= 0 else ev[-1] / ev[0]
    if cond > COND_LIMIT:
        warnings.warn(f"{what} is ill-conditioned (cond ~ {cond:.3g})", ConditioningWarning, stacklevel=3)
    return cond


def gaussian_logpdf_chol(y, L):
    """``log N(y; 0, L L^T)`` given the lower Cholesky factor."""
    alpha = linalg.solve_triangular(L, y, lower=True, check_finite=False)
    return -0.5 * (y.size * LOG_2PI + alpha @ alpha) - np.sum(np.log(np.diag(L)))


def chol_solve(L, b):
    return linalg.cho_solve((L, True), b, check_finite=False)
