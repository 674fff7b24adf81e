"""Gaussian scale mixture priors and the stick-breaking Indian buffet process.

A GSM prior draws a variance ``zeta`` from a mixing law and then the weight
from ``N(0, zeta)``.  Marginal log densities use closed forms when they exist
and adaptive Gauss-Kronrod quadrature over ``log(zeta)`` otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from ._errors import DomainError, NumericalError

__all__ = [
    "GsmSpec",
    "IbpConfig",
    "IbpDraw",
    "as_generator",
    "gsm_log_density",
    "gsm_log_mixing_density",
    "gsm_sample",
    "grouped_gsm_log_density",
    "ibp_sample",
    "ibp_expected_row_sum",
    "ibp_truncation_bound",
    "mixture_log_density_quad",
]

VARIANTS = ("student_t", "laplacian", "normal_jeffreys", "gen_hyperbolic", "horseshoe")

_LOG_2PI = math.log(2.0 * math.pi)

QUAD_EPSABS = 1e-10


def as_generator(rng=None) -> np.random.Generator:
    """Coerce ``None``, an integer seed or a Generator into a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class GsmSpec:
    """One member of the Gaussian scale mixture family.

    ``a`` and ``b`` carry the mixing hyper-parameters; their meaning depends on
    ``variant``:

    ===============  ==========================================  =================
    variant          mixing law on the variance ``zeta``         marginal
    ===============  ==========================================  =================
    student_t        inverse Gamma, shape ``a``, scale ``b``     Student's t
    laplacian        Gamma, shape ``a``, rate ``b``              (generalized) Laplace
    normal_jeffreys  log-uniform ``1/zeta`` (improper)           ``1/|theta|``
    gen_hyperbolic   GIG ``zeta^(lam-1) exp(-(a zeta + b/zeta)/2)``  generalized hyperbolic
    horseshoe        ``zeta = tau * upsilon``, ``tau ~ C+(0, a)``,   horseshoe-type
                     ``upsilon ~ C+(0, b)``
    ===============  ==========================================  =================
    """

    variant: str
    a: float | None = None
    b: float | None = None
    lam: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DomainError(f"unknown GSM variant {self.variant!r}")
        if self.variant == "normal_jeffreys":
            if self.a is not None or self.b is not None:
                raise DomainError("normal_jeffreys takes no hyper-parameters")
            return
        for name in ("a", "b"):
            val = getattr(self, name)
            if val is None or not np.isfinite(val) or val <= 0:
                raise DomainError(f"{self.variant}: {name} must be finite and > 0, got {val!r}")
        if not np.isfinite(self.lam):
            raise DomainError("lam must be finite")

    @classmethod
    def student_t(cls, a: float, b: float) -> "GsmSpec":
        return cls("student_t", float(a), float(b))

    @classmethod
    def laplacian(cls, a: float, b: float) -> "GsmSpec":
        return cls("laplacian", float(a), float(b))

    @classmethod
    def normal_jeffreys(cls) -> "GsmSpec":
        return cls("normal_jeffreys")

    @classmethod
    def gen_hyperbolic(cls, a: float, b: float, lam: float) -> "GsmSpec":
        return cls("gen_hyperbolic", float(a), float(b), float(lam))

    @classmethod
    def horseshoe(cls, a: float, b: float) -> "GsmSpec":
        return cls("horseshoe", float(a), float(b))

    @property
    def proper(self) -> bool:
        """False for Normal-Jeffreys, whose log density is defined only up to a constant."""
        return self.variant != "normal_jeffreys"


def _log_product_half_cauchy(logz):
    # log density of the product of two standard half-Cauchy variables,
    # (4 / pi^2) * log(z) / (z^2 - 1), written in terms of log(z)
    lz = np.asarray(logz, dtype=float)
    small = np.abs(lz) < 1e-8
    safe = np.where(small, 1.0, lz)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # log|z - 1| and log(z + 1) without overflow at either end
        log_abs_em1 = np.where(safe > 0, safe + np.log1p(-np.exp(-safe)), np.log1p(-np.exp(safe)))
        log_ratio = np.where(small, np.log1p(-0.5 * lz), np.log(np.abs(safe)) - log_abs_em1)
    return math.log(4.0 / math.pi**2) + log_ratio - np.logaddexp(0.0, lz)


def gsm_log_mixing_density(spec: GsmSpec, zeta):
    """Log density of the mixing law at variance ``zeta`` (vectorized)."""
    zeta = np.asarray(zeta, dtype=float)
    a, b = spec.a, spec.b
    with np.errstate(divide="ignore"):
        logz = np.log(zeta)
    if spec.variant == "student_t":
        return a * math.log(b) - special.gammaln(a) - (a + 1.0) * logz - b / zeta
    if spec.variant == "laplacian":
        return a * math.log(b) - special.gammaln(a) + (a - 1.0) * logz - b * zeta
    if spec.variant == "normal_jeffreys":
        return -logz
    if spec.variant == "gen_hyperbolic":
        lam = spec.lam
        omega = math.sqrt(a * b)
        log_norm = 0.5 * lam * math.log(a / b) - math.log(2.0) - _log_kv(lam, omega)
        return log_norm + (lam - 1.0) * logz - 0.5 * (a * zeta + b / zeta)
    # horseshoe: zeta = tau * upsilon with scales a, b
    c = a * b
    return _log_product_half_cauchy(logz - math.log(c)) - math.log(c)


def _log_kv(nu, z):
    """log K_nu(z) for z > 0 without overflow."""
    return np.log(special.kve(nu, z)) - z


def _log_integrand(spec, d, s, u):
    # log of N_d(w; 0, e^u I) * p(e^u) * e^u, with s = ||w||^2
    u = np.asarray(u, dtype=float)
    with np.errstate(over="ignore"):
        quad_term = 0.5 * s * np.exp(-u) if s > 0 else 0.0
    return -0.5 * d * (_LOG_2PI + u) - quad_term + gsm_log_mixing_density(spec, np.exp(u)) + u


def mixture_log_density_quad(spec: GsmSpec, d: int, s: float) -> float:
    """Log of ``int N_d(w; 0, zeta I) p(zeta) dzeta`` by quadrature on ``log(zeta)``.

    ``s`` is the squared norm of ``w``.  The integrand is rescaled by its peak
    so the quadrature works on an O(1) function.  Returns ``+inf`` when the
    integral diverges at ``w = 0``.
    """
    span = 700.0
    grid = np.arange(-span, span + 0.25, 0.25)
    with np.errstate(all="ignore"):
        vals = _log_integrand(spec, d, s, grid)
    vals = np.where(np.isnan(vals), -np.inf, vals)
    k = int(np.argmax(vals))
    peak = vals[k]
    if not np.isfinite(peak):
        raise NumericalError("mixture integrand has no finite mass", variant=spec.variant, s=s, d=d)
    drop = peak - 60.0
    below = np.nonzero(vals[:k] < drop)[0]
    above = np.nonzero(vals[k + 1:] < drop)[0]
    if below.size == 0 or above.size == 0:
        if s == 0.0:
            return math.inf
        raise NumericalError(
            "mixture integrand does not decay inside the search window",
            variant=spec.variant, s=s, d=d, peak_log_u=float(grid[k]),
        )
    lo = grid[below[-1]]
    hi = grid[k + 1 + above[0]]
    u_peak = grid[k]

    def f(u):
        return math.exp(float(_log_integrand(spec, d, s, u)) - peak)

    val, err, info = integrate.quad(
        f, lo, hi, points=[u_peak], epsabs=QUAD_EPSABS, epsrel=1e-10, limit=500, full_output=1
    )[:3]
    if not np.isfinite(val) or val <= 0 or err > 1e-6 * val:
        raise NumericalError(
            "quadrature over the mixing variable did not converge",
            variant=spec.variant, value=val, abserr=err, neval=info.get("neval"),
        )
    return float(peak + math.log(val))


def _closed_form(spec: GsmSpec, d: int, s: float):
    a, b = spec.a, spec.b
    if spec.variant == "student_t":
        return (
            special.gammaln(a + 0.5 * d) - special.gammaln(a) + a * math.log(b)
            - 0.5 * d * _LOG_2PI - (a + 0.5 * d) * math.log(b + 0.5 * s)
        )
    if spec.variant == "laplacian":
        p = a - 0.5 * d
        base = a * math.log(b) - special.gammaln(a) - 0.5 * d * _LOG_2PI
        if s == 0.0:
            return base + special.gammaln(p) - p * math.log(b) if p > 0 else math.inf
        return base + math.log(2.0) + 0.5 * p * math.log(s / (2.0 * b)) + _log_kv(p, math.sqrt(2.0 * b * s))
    if spec.variant == "normal_jeffreys":
        if s == 0.0:
            return math.inf
        return -0.5 * d * _LOG_2PI + special.gammaln(0.5 * d) - 0.5 * d * math.log(0.5 * s)
    return None


def _check_finite(x, what):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{what} must be finite")
    return arr


def gsm_log_density(spec: GsmSpec, theta: float) -> float:
    """Marginal log prior ``log p(theta)``.

    For ``normal_jeffreys`` the value is ``-log|theta|``, i.e. defined only up
    to an additive constant (``spec.proper`` is False).
    """
    theta = float(_check_finite(theta, "theta"))
    return grouped_gsm_log_density(spec, [theta])


def grouped_gsm_log_density(spec: GsmSpec, w) -> float:
    """Log marginal of a group of weights sharing one mixing variance.

    Parameters
    ----------
    spec : GsmSpec
    w : array_like
        The group (e.g. all weights leaving one node, or one rank-1
        component's stacked factor columns).

    Returns
    -------
    float
        ``log int prod_i N(w_i; 0, zeta) p(zeta) dzeta``.  Depends on ``w``
        only through its length and squared norm.
    """
    w = _check_finite(w, "w").ravel()
    if w.size == 0:
        raise DomainError("group must be non-empty")
    d = int(w.size)
    s = float(np.dot(w, w))
    val = _closed_form(spec, d, s)
    if val is not None:
        return float(val)
    return mixture_log_density_quad(spec, d, s)


def _sample_mixing(spec: GsmSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    a, b = spec.a, spec.b
    if spec.variant == "student_t":
        return b / rng.gamma(a, 1.0, size=n)
    if spec.variant == "laplacian":
        return rng.gamma(a, 1.0 / b, size=n)
    if spec.variant == "gen_hyperbolic":
        from scipy.stats import geninvgauss

        return geninvgauss.rvs(spec.lam, math.sqrt(a * b), scale=math.sqrt(b / a), size=n, random_state=rng)
    if spec.variant == "horseshoe":
        tau = a * np.abs(rng.standard_cauchy(n))
        ups = b * np.abs(rng.standard_cauchy(n))
        return tau * ups
    raise DomainError("normal_jeffreys is improper and cannot be sampled")


def gsm_sample(spec: GsmSpec, n: int, rng=None) -> np.ndarray:
    """Draw ``n`` i.i.d. weights: ``zeta`` from the mixing law, then ``N(0, zeta)``."""
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    rng = as_generator(rng)
    zeta = _sample_mixing(spec, int(n), rng)
    return np.sqrt(zeta) * rng.standard_normal(int(n))


# -- Indian buffet process -------------------------------------------------


@dataclass(frozen=True)
class IbpConfig:
    """Stick-breaking IBP: strength ``alpha``, ``rows`` customers, ``truncation`` dishes."""

    alpha: float
    rows: int
    truncation: int = 100

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha <= 0:
            raise DomainError("alpha must be > 0")
        if int(self.rows) != self.rows or self.rows < 1:
            raise DomainError("rows must be a positive integer")
        if int(self.truncation) != self.truncation or self.truncation < 1:
            raise DomainError("truncation must be a positive integer")


@dataclass(frozen=True)
class IbpDraw:
    sticks: np.ndarray
    probs: np.ndarray
    Z: np.ndarray = field(repr=False)


def ibp_sample(cfg: IbpConfig, rng=None) -> IbpDraw:
    """Truncated stick-breaking draw.

    ``u_j ~ Beta(alpha, 1)``, ``pi_j = prod_{l<=j} u_l`` and
    ``Z[i, j] ~ Bernoulli(pi_j)`` independently for every row ``i``.
    """
    rng = as_generator(rng)
    sticks = rng.beta(cfg.alpha, 1.0, size=cfg.truncation)
    probs = np.cumprod(sticks)
    Z = (rng.random((cfg.rows, cfg.truncation)) < probs).astype(np.int8)
    return IbpDraw(sticks=sticks, probs=probs, Z=Z)


def ibp_expected_row_sum(cfg: IbpConfig) -> float:
    """``E[sum_j pi_j]`` under truncation: ``alpha * (1 - r^J)``, ``r = alpha/(1+alpha)``."""
    return cfg.alpha * (1.0 - ibp_truncation_bound(cfg))


def ibp_truncation_bound(cfg: IbpConfig) -> float:
    """Relative row-sum mass lost to truncation, ``(alpha/(1+alpha))**truncation``."""
    return (cfg.alpha / (1.0 + cfg.alpha)) ** cfg.truncation
