"""Bayesian CP tensor decomposition by mean-field variational inference.

Model: ``y_i = sum_l prod_p A^(p)[i_p, l] + e_i`` over observed indices ``i``,
with ``e_i ~ N(0, 1/beta)``. Factor rows share a column-wise Student-t prior,
``A^(p)[j] ~ N(0, diag(lambda)^-1)`` with ``lambda_l ~ Gamma(a0, b0)``, and
``beta ~ Gamma(c0, d0)``. The variational family is

    q = prod_p prod_j N(A^(p)[j]; M^(p)[j], Sigma^(p)[j])
        * prod_l Gamma(lambda_l; a_l, b_l) * Gamma(beta; c, d),

every factor updated in closed form. Columns whose posterior power collapses
are pruned, which reveals the rank.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.special import digamma, gammaln

from ._errors import DomainError, NumericalError
from ._linalg import LOG_2PI
from .priors import as_generator

__all__ = [
    "CpdFitOptions",
    "CpdModel",
    "PartialTensor",
    "cpd_complete",
    "cpd_elbo",
    "cpd_fit",
    "cpd_init",
    "cpd_prune",
    "cpd_reconstruct",
    "cpd_update_beta",
    "cpd_update_lambda",
    "cpd_update_mode",
    "cpd_vi_step",
    "column_power",
]

PRIOR_SHAPE = 1e-6
PRIOR_RATE = 1e-6
INIT_COV = 1e-2


class PartialTensor:
    """Observed entries of a ``P``-way tensor.

    Parameters
    ----------
    dims : sequence of int
        Mode sizes ``(J_1, ..., J_P)``, ``P >= 2``.
    indices : array_like of int, shape (n_obs, P)
        Zero-based index tuples, unique and in range.
    values : array_like of float, shape (n_obs,)
        Finite observed values.
    """

    def __init__(self, dims, indices, values):
        dims = tuple(int(d) for d in dims)
        if len(dims) < 2 or min(dims) < 1:
            raise DomainError(f"need at least 2 modes of positive size, got dims={dims}")
        idx = np.asarray(indices, dtype=np.int64)
        vals = np.asarray(values, dtype=float).ravel()
        if idx.ndim != 2 or idx.shape[1] != len(dims):
            raise DomainError(f"indices must have shape (n_obs, {len(dims)})")
        if idx.shape[0] != vals.size:
            raise DomainError("indices and values differ in length")
        if vals.size < 1:
            raise DomainError("at least one observed entry is required")
        if np.any(idx < 0) or np.any(idx >= np.asarray(dims)):
            raise DomainError("index out of range")
        if not np.all(np.isfinite(vals)):
            raise DomainError("observed values must be finite")
        flat = np.ravel_multi_index(idx.T, dims)
        if np.unique(flat).size != flat.size:
            raise DomainError("duplicate indices")
        idx.setflags(write=False)
        vals.setflags(write=False)
        self.dims = dims
        self.indices = idx
        self.values = vals
        # entry-to-row incidence per mode, used to sum per-entry statistics by row
        n = vals.size
        self._incidence = [
            sparse.csr_matrix((np.ones(n), (idx[:, p], np.arange(n))), shape=(J, n))
            for p, J in enumerate(dims)
        ]

    @classmethod
    def from_dense(cls, array, mask=None):
        """Observations from a dense array; ``mask`` (bool) selects observed entries.

        Non-finite entries are treated as missing when no mask is given.
        """
        array = np.asarray(array, dtype=float)
        if mask is None:
            mask = np.isfinite(array)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != array.shape:
            raise DomainError("mask shape differs from array shape")
        idx = np.argwhere(mask)
        return cls(array.shape, idx, array[mask])

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def n_obs(self) -> int:
        return self.values.size

    @property
    def mask(self) -> np.ndarray:
        """Dense boolean observation mask."""
        m = np.zeros(self.dims, dtype=bool)
        m[tuple(self.indices.T)] = True
        return m

    def dense(self, fill=0.0) -> np.ndarray:
        """Dense array with unobserved entries set to ``fill``."""
        out = np.full(self.dims, fill, dtype=float)
        out[tuple(self.indices.T)] = self.values
        return out

    def row_sum(self, p, per_entry):
        """Sum ``per_entry`` (first axis = entries) over the entries in each row of mode ``p``."""
        flat = per_entry.reshape(self.n_obs, -1)
        out = self._incidence[p] @ flat
        return np.asarray(out).reshape((self.dims[p],) + per_entry.shape[1:])


@dataclass
class CpdModel:
    """Variational posterior of a CP model with ``L`` candidate columns.

    Attributes
    ----------
    means : list of ndarray, each (J_p, L)
        Factor posterior means.
    covs : list of ndarray, each (J_p, L, L)
        Per-row factor posterior covariances.
    lam_shape, lam_rate : ndarray (L,)
        Gamma posteriors of the column precisions ``lambda_l``.
    beta_shape, beta_rate : float
        Gamma posterior of the noise precision.
    active : ndarray of bool (L,)
        Columns taking part in the model; inactive ones are ignored everywhere.
    elbo_trace : list of float
        ELBO after each sweep.
    prune_sweeps : list of int
        Sweep counts at which columns were removed.
    prune_elbo : list of float
        ELBO right after each removal (NaN if no data was supplied).
    initial_elbo : float
        ELBO before the first sweep (NaN unless set by ``cpd_fit``).
    """

    means: list
    covs: list
    lam_shape: np.ndarray
    lam_rate: np.ndarray
    beta_shape: float
    beta_rate: float
    active: np.ndarray
    prior: tuple = (PRIOR_SHAPE, PRIOR_RATE, PRIOR_SHAPE, PRIOR_RATE)
    elbo_trace: list = field(default_factory=list)
    prune_sweeps: list = field(default_factory=list)
    prune_elbo: list = field(default_factory=list)
    n_sweeps: int = 0
    converged: bool = False
    initial_elbo: float = math.nan

    @property
    def L(self) -> int:
        return self.lam_shape.size

    @property
    def rank(self) -> int:
        """Number of active columns."""
        return int(np.sum(self.active))

    @property
    def dims(self) -> tuple:
        return tuple(m.shape[0] for m in self.means)

    @property
    def beta_mean(self) -> float:
        return self.beta_shape / self.beta_rate

    @property
    def lam_mean(self) -> np.ndarray:
        return self.lam_shape / self.lam_rate

    def sweep_gains(self) -> np.ndarray:
        """ELBO change of every sweep, measured from the state it started in.

        A sweep that follows a pruning starts from the recomputed ELBO. The
        first sweep is included only when ``initial_elbo`` is known.
        """
        pruned_at = dict(zip(self.prune_sweeps, self.prune_elbo))
        trace = self.elbo_trace
        gains = [trace[k] - pruned_at.get(k, trace[k - 1]) for k in range(1, len(trace))]
        if trace and math.isfinite(self.initial_elbo):
            gains.insert(0, trace[0] - self.initial_elbo)
        return np.array(gains)

    def copy(self) -> "CpdModel":
        return replace(
            self,
            means=[m.copy() for m in self.means],
            covs=[c.copy() for c in self.covs],
            lam_shape=self.lam_shape.copy(),
            lam_rate=self.lam_rate.copy(),
            active=self.active.copy(),
            elbo_trace=list(self.elbo_trace),
            prune_sweeps=list(self.prune_sweeps),
            prune_elbo=list(self.prune_elbo),
        )

    def validate(self):
        """Raise ``DomainError`` unless the invariants hold."""
        if len(self.means) != len(self.covs) or len(self.means) < 2:
            raise DomainError("means and covs must list the same >= 2 modes")
        L = self.L
        for m, c in zip(self.means, self.covs):
            if m.shape[1] != L or c.shape != (m.shape[0], L, L):
                raise DomainError("factor shapes disagree with the column count")
            if not np.allclose(c, np.swapaxes(c, 1, 2)):
                raise DomainError("row covariances must be symmetric")
            if L and np.any(np.linalg.eigvalsh(c)[..., 0] <= 0):
                raise DomainError("row covariances must be positive definite")
        if self.lam_rate.shape != (L,) or self.active.shape != (L,):
            raise DomainError("lambda posterior and active mask must have length L")
        if np.any(self.lam_shape <= 0) or np.any(self.lam_rate <= 0):
            raise DomainError("Gamma parameters must be positive")
        if self.beta_shape <= 0 or self.beta_rate <= 0:
            raise DomainError("Gamma parameters must be positive")
        return self


def _check_consistent(model: CpdModel, data: PartialTensor):
    if model.dims != data.dims:
        raise DomainError(f"model dims {model.dims} differ from data dims {data.dims}")


def cpd_init(data: PartialTensor, L: int, rng=None, *, prior=None,
             noise_scale=1e-3) -> CpdModel:
    """Initial posterior from truncated SVDs of the mode unfoldings.

    Missing entries are zero-filled for the SVDs only. Each mode keeps its
    leading ``min(L, J_p)`` left singular vectors scaled by ``s^(1/P)``; the
    remaining columns are small Gaussian noise. Row covariances start at
    ``1e-2 I`` and the Gamma posteriors at their priors.
    """
    L = int(L)
    if L < 1:
        raise DomainError(f"L must be >= 1, got {L}")
    if L > max(data.dims):
        warnings.warn(f"L={L} exceeds every mode dimension {data.dims}", stacklevel=2)
    rng = as_generator(rng)
    prior = tuple(float(x) for x in (prior or (PRIOR_SHAPE, PRIOR_RATE, PRIOR_SHAPE, PRIOR_RATE)))
    if len(prior) != 4 or min(prior) <= 0:
        raise DomainError("prior must be four positive numbers (a0, b0, c0, d0)")
    Y = data.dense()
    P = data.order
    scale = (np.sqrt(np.mean(data.values ** 2)) + 1e-300) ** (1.0 / P)
    means, covs = [], []
    for p, J in enumerate(data.dims):
        unfold = np.moveaxis(Y, p, 0).reshape(J, -1)
        U, s, _ = np.linalg.svd(unfold, full_matrices=False)
        k = min(L, s.size)
        M = noise_scale * scale * rng.standard_normal((J, L))
        M[:, :k] = U[:, :k] * s[:k] ** (1.0 / P)
        means.append(M)
        covs.append(np.broadcast_to(INIT_COV * np.eye(L), (J, L, L)).copy())
    a0, b0, c0, d0 = prior
    return CpdModel(
        means=means,
        covs=covs,
        lam_shape=np.full(L, a0),
        lam_rate=np.full(L, b0),
        beta_shape=c0,
        beta_rate=d0,
        active=np.ones(L, dtype=bool),
        prior=prior,
    )


def _second_moments(model, cols):
    """Per-row ``E[a a^T] = m m^T + Sigma`` restricted to ``cols``."""
    out = []
    for m, c in zip(model.means, model.covs):
        ma = m[:, cols]
        out.append(ma[:, :, None] * ma[:, None, :] + c[np.ix_(np.arange(c.shape[0]), cols, cols)])
    return out


def _entry_products(data, mats, skip=None):
    """Elementwise product over modes of per-row arrays gathered at each entry."""
    out = None
    for p, A in enumerate(mats):
        if p == skip:
            continue
        g = A[data.indices[:, p]]
        out = g if out is None else out * g
    return out


def _expected_sq_error(model, data, cols):
    """``sum_i E[(y_i - <a_i>)^2]`` over observed entries."""
    y = data.values
    if cols.size == 0:
        return float(y @ y)
    mu = _entry_products(data, [m[:, cols] for m in model.means]).sum(axis=1)
    second = _entry_products(data, _second_moments(model, cols)).sum(axis=(1, 2))
    return float(y @ y - 2.0 * y @ mu + second.sum())


def _batched_inverse(prec, what):
    """Inverse and log-determinant of a stack of SPD matrices, with one jitter retry."""
    n = prec.shape[-1]
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        jitter = 1e-8 * np.trace(prec, axis1=1, axis2=2).max() / max(n, 1)
        try:
            chol = np.linalg.cholesky(prec + jitter * np.eye(n))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"Cholesky factorization of the {what} failed", jitter=jitter) from exc
    inv_chol = np.linalg.solve(chol, np.broadcast_to(np.eye(n), chol.shape))
    cov = np.swapaxes(inv_chol, 1, 2) @ inv_chol
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    return cov


def cpd_update_mode(model: CpdModel, data: PartialTensor, p: int) -> CpdModel:
    """Closed-form Gaussian update of every row of mode ``p`` (in place on a copy).

    Row ``j`` solves the ridge problem with expected moments
    ``Sigma = (E[beta] sum_i E[h_i h_i^T] + diag E[lambda])^-1`` and
    ``m = E[beta] Sigma sum_i y_i E[h_i]``, where ``h_i`` is the product of
    the other modes' rows at entry ``i``.
    """
    _check_consistent(model, data)
    model = model.copy()
    cols = np.flatnonzero(model.active)
    if cols.size == 0:
        return model
    eb = model.beta_mean
    means = [m[:, cols] for m in model.means]
    Eh = _entry_products(data, means, skip=p)
    Ehh = _entry_products(data, _second_moments(model, cols), skip=p)
    G = data.row_sum(p, Ehh)
    r = data.row_sum(p, data.values[:, None] * Eh)
    prec = eb * G + np.diag(model.lam_mean[cols])
    cov = _batched_inverse(prec, f"mode-{p} row precision")
    mean = eb * np.einsum("jkl,jl->jk", cov, r)
    model.means[p][:, cols] = mean
    model.covs[p][np.ix_(np.arange(data.dims[p]), cols, cols)] = cov
    return model


def cpd_update_lambda(model: CpdModel) -> CpdModel:
    """Gamma update of the column precisions shared by all modes."""
    model = model.copy()
    a0, b0, _, _ = model.prior
    cols = np.flatnonzero(model.active)
    power = _column_power(model, cols)
    model.lam_shape[cols] = a0 + 0.5 * sum(model.dims)
    model.lam_rate[cols] = b0 + 0.5 * power
    return model


def _beta_terms(c, d, n_obs, err, c0, d0):
    """ELBO terms that depend on ``q(beta) = Gamma(c, d)``."""
    elog = digamma(c) - math.log(d)
    return (0.5 * n_obs * elog - 0.5 * (c / d) * err
            + (c0 - 1.0) * elog - d0 * c / d
            + c - math.log(d) + gammaln(c) + (1.0 - c) * digamma(c))


def cpd_update_beta(model: CpdModel, data: PartialTensor, damping: float = 0.0) -> CpdModel:
    """Gamma update of the noise precision.

    With ``damping > 0`` the posterior mean moves only part of the way in
    log space, ``log E[beta] <- damping log E_old + (1 - damping) log E_new``.
    A damped step that would lower the ELBO is replaced by the exact update.
    """
    model = model.copy()
    _, _, c0, d0 = model.prior
    cols = np.flatnonzero(model.active)
    err = _expected_sq_error(model, data, cols)
    c_new = c0 + 0.5 * data.n_obs
    d_new = d0 + 0.5 * err
    if damping > 0.0:
        log_mean = damping * math.log(model.beta_mean) + (1.0 - damping) * math.log(c_new / d_new)
        d_damp = c_new / math.exp(log_mean)
        before = _beta_terms(model.beta_shape, model.beta_rate, data.n_obs, err, c0, d0)
        after = _beta_terms(c_new, d_damp, data.n_obs, err, c0, d0)
        if after >= before:
            d_new = d_damp
    model.beta_shape = c_new
    model.beta_rate = d_new
    return model


def _column_power(model, cols):
    """``sum_p sum_j (M[j,l]^2 + Sigma_j[l,l])`` for the given columns."""
    power = np.zeros(cols.size)
    for m, c in zip(model.means, model.covs):
        power += np.sum(m[:, cols] ** 2, axis=0) + np.sum(np.diagonal(c, axis1=1, axis2=2)[:, cols], axis=0)
    return power


def column_power(model: CpdModel, include_variance: bool = True) -> np.ndarray:
    """Posterior power of every column (zero for inactive ones).

    With ``include_variance`` this is ``sum_p (||M_l||^2 + sum_j Sigma_j[l,l])``,
    otherwise the power of the means alone.
    """
    out = np.zeros(model.L)
    cols = np.flatnonzero(model.active)
    if include_variance:
        out[cols] = _column_power(model, cols)
    else:
        out[cols] = sum(np.sum(m[:, cols] ** 2, axis=0) for m in model.means)
    return out


def cpd_vi_step(model: CpdModel, data: PartialTensor, damping: float = 0.0) -> CpdModel:
    """One mean-field sweep: every mode's rows, then ``lambda``, then ``beta``.

    The post-sweep ELBO is appended to ``elbo_trace``.
    """
    _check_consistent(model, data)
    for p in range(data.order):
        model = cpd_update_mode(model, data, p)
    model = cpd_update_lambda(model)
    model = cpd_update_beta(model, data, damping=damping)
    model.n_sweeps += 1
    model.elbo_trace.append(cpd_elbo(model, data))
    return model


def _gamma_entropy(a, b):
    return a - np.log(b) + gammaln(a) + (1.0 - a) * digamma(a)


def _gamma_elogprior(a, b, a0, b0):
    """``E_q[log Gamma(x; a0, b0)]`` under ``q = Gamma(a, b)``."""
    return a0 * math.log(b0) - gammaln(a0) + (a0 - 1.0) * (digamma(a) - np.log(b)) - b0 * a / b


def cpd_elbo(model: CpdModel, data: PartialTensor) -> float:
    """Evidence lower bound ``E_q[log p(Y, A, lambda, beta)] + H[q]`` (active columns only)."""
    _check_consistent(model, data)
    a0, b0, c0, d0 = model.prior
    cols = np.flatnonzero(model.active)
    k = cols.size
    n = data.n_obs
    c, d = model.beta_shape, model.beta_rate
    err = _expected_sq_error(model, data, cols)
    total = 0.5 * n * (digamma(c) - math.log(d) - LOG_2PI) - 0.5 * (c / d) * err
    total += _gamma_elogprior(c, d, c0, d0) + _gamma_entropy(c, d)
    if k:
        la, lb = model.lam_shape[cols], model.lam_rate[cols]
        elog_lam = digamma(la) - np.log(lb)
        n_rows = sum(data.dims)
        total += 0.5 * n_rows * (np.sum(elog_lam) - k * LOG_2PI)
        total -= 0.5 * np.sum((la / lb) * _column_power(model, cols))
        for cov in model.covs:
            sub = cov[np.ix_(np.arange(cov.shape[0]), cols, cols)]
            sign, logdet = np.linalg.slogdet(sub)
            if np.any(sign <= 0):
                raise NumericalError("row covariance is not positive definite")
            total += 0.5 * np.sum(logdet) + 0.5 * cov.shape[0] * k * (1.0 + LOG_2PI)
        total += np.sum(_gamma_elogprior(la, lb, a0, b0) + _gamma_entropy(la, lb))
    return float(total)


def cpd_prune(model: CpdModel, threshold: float, data: PartialTensor | None = None,
              include_variance: bool = False) -> CpdModel:
    """Remove columns whose power is below ``threshold * mean column power``.

    The power is that of the posterior means unless ``include_variance``
    (see ``column_power``). A collapsed column keeps a row variance of about
    ``1 / E[lambda_l]``, which shrinks only very slowly, while its means reach
    zero within a few sweeps.

    Removed columns leave every mode and the ``lambda`` posterior; inactive
    columns are dropped as well. ``threshold = 0`` removes nothing except
    inactive columns. With ``data`` the ELBO is recomputed and recorded in
    ``prune_elbo``.
    """
    if not threshold >= 0:
        raise DomainError(f"threshold must be >= 0, got {threshold}")
    power = column_power(model, include_variance)
    keep = model.active.copy()
    if keep.any() and threshold > 0:
        keep &= power > threshold * power[keep].mean()
    if keep.all():
        return model
    model = model.copy()
    cols = np.flatnonzero(keep)
    model.means = [m[:, cols] for m in model.means]
    model.covs = [c[np.ix_(np.arange(c.shape[0]), cols, cols)] for c in model.covs]
    model.lam_shape = model.lam_shape[cols]
    model.lam_rate = model.lam_rate[cols]
    model.active = np.ones(cols.size, dtype=bool)
    model.prune_sweeps.append(model.n_sweeps)
    model.prune_elbo.append(cpd_elbo(model, data) if data is not None else math.nan)
    return model


@dataclass(frozen=True)
class CpdFitOptions:
    """Controls for ``cpd_fit``.

    ``prune_threshold`` is relative to the mean column power and checked
    every ``prune_every`` sweeps; the noise update is damped by
    ``beta_damping`` during the first ``damping_sweeps`` sweeps.
    """

    max_iters: int = 500
    tol: float = 1e-6
    prune_threshold: float = 1e-6
    prune_every: int = 5
    beta_damping: float = 0.5
    damping_sweeps: int = 10
    prior: tuple | None = None


def cpd_fit(data: PartialTensor, L: int, opts: CpdFitOptions | None = None, rng=None) -> CpdModel:
    """Initialize, then sweep and prune until the ELBO's relative change falls below ``tol``."""
    opts = opts or CpdFitOptions()
    model = cpd_init(data, L, rng, prior=opts.prior)
    prev = model.initial_elbo = cpd_elbo(model, data)
    for it in range(1, opts.max_iters + 1):
        damping = opts.beta_damping if it <= opts.damping_sweeps else 0.0
        model = cpd_vi_step(model, data, damping=damping)
        cur = model.elbo_trace[-1]
        pruned = False
        if opts.prune_threshold > 0 and it % opts.prune_every == 0:
            before = model.L
            model = cpd_prune(model, opts.prune_threshold, data)
            pruned = model.L < before
            if pruned:
                cur = model.prune_elbo[-1]
        if not pruned and it > opts.damping_sweeps and abs(cur - prev) <= opts.tol * abs(cur):
            model.converged = True
            break
        prev = cur
    if opts.prune_threshold > 0:
        model = cpd_prune(model, opts.prune_threshold, data)
    return model


def cpd_reconstruct(model: CpdModel) -> np.ndarray:
    """Dense posterior-mean tensor ``sum_l prod_p M^(p)[:, l]``."""
    cols = np.flatnonzero(model.active)
    if cols.size == 0:
        return np.zeros(model.dims)
    P = len(model.means)
    letters = "abcdefghijklmnopq"[:P]
    expr = ",".join(f"{ch}z" for ch in letters) + "->" + letters
    return np.einsum(expr, *[m[:, cols] for m in model.means])


def _reconstruction_variance(model):
    """Per-entry variance of ``sum_l prod_p a^(p)_l`` under ``q``."""
    cols = np.flatnonzero(model.active)
    if cols.size == 0:
        return np.zeros(model.dims)
    P = len(model.means)
    letters = "abcdefghijklmnopq"[:P]
    expr = ",".join(f"{ch}yz" for ch in letters) + "->" + letters
    second = np.einsum(expr, *_second_moments(model, cols), optimize=True)
    var = second - cpd_reconstruct(model) ** 2
    return np.maximum(var, 0.0)


def cpd_complete(data: PartialTensor, L: int, opts: CpdFitOptions | None = None, rng=None,
                 model: CpdModel | None = None):
    """Fit (unless ``model`` is given) and return ``(mean, variance, model)``.

    ``mean`` is the dense posterior-mean reconstruction and ``variance`` the
    predictive variance, reconstruction variance plus ``1 / E[beta]``.
    """
    if model is None:
        model = cpd_fit(data, L, opts, rng)
    _check_consistent(model, data)
    mean = cpd_reconstruct(model)
    var = _reconstruction_variance(model) + 1.0 / model.beta_mean
    return mean, var, model
