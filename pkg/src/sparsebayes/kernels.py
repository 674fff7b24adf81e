"""Covariance functions, Gram assembly and spectral utilities.

Spectral variants act on one-dimensional inputs (usually integer time
indices) with frequencies normalized to ``[0, 1/2)``. The SE kernel accepts
inputs of any dimension.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._errors import DomainError
from ._linalg import cholesky

__all__ = [
    "GramCache",
    "GridSMKernel",
    "KernelSpec",
    "LinearCombo",
    "SEKernel",
    "SparseSpectrumKernel",
    "SpectralMixtureKernel",
    "grid_make",
    "kernel_eval",
    "kernel_from_dict",
    "kernel_from_json",
    "kernel_matrix",
    "kernel_to_dict",
    "kernel_to_json",
    "psd_check",
    "spectral_density",
    "subkernels",
    "with_weights",
]

PSD_SLACK = 1e-10


def _frozen_vector(x, name, *, positive=False, nonneg=False, freq=False):
    a = np.array(x, dtype=float).ravel()
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} must be finite")
    if positive and not np.all(a > 0):
        raise DomainError(f"{name} must be > 0")
    if nonneg and not np.all(a >= 0):
        raise DomainError(f"{name} must be >= 0")
    if freq and not np.all((a >= 0) & (a < 0.5)):
        raise DomainError(f"{name} must lie in [0, 1/2)")
    a.setflags(write=False)
    return a


def _positive_scalar(x, name):
    x = float(x)
    if not (math.isfinite(x) and x > 0):
        raise DomainError(f"{name} must be finite and > 0")
    return x


def _as_inputs(X, one_d):
    """Inputs as an (N, D) array; spectral kernels require D == 1."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X[:, None]
    elif X.ndim != 2:
        raise DomainError("inputs must be a vector or an (N, D) matrix")
    if one_d and X.shape[1] != 1:
        raise DomainError("spectral kernels take one-dimensional inputs")
    return X


def _lags(X, X2):
    X = _as_inputs(X, True)
    X2 = _as_inputs(X2, True)
    return X[:, 0][:, None] - X2[:, 0][None, :]


class KernelSpec:
    """Base class of the immutable kernel specifications."""

    variant: str = ""

    def matrix(self, X, X2) -> np.ndarray:
        raise NotImplementedError

    def stationary(self, tau) -> np.ndarray:
        """Kernel as a function of the lag ``tau = x - x'`` (1-D variants)."""
        raise NotImplementedError

    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        return kernel_to_dict(self) == kernel_to_dict(other)

    def __hash__(self):
        return hash(json.dumps(kernel_to_dict(self), sort_keys=True))


@dataclass(frozen=True, eq=False)
class SEKernel(KernelSpec):
    """``sigma_s^2 exp(-||x - x'||^2 / (2 l^2))``."""

    magnitude: float
    length_scale: float
    variant = "se"

    def __post_init__(self):
        object.__setattr__(self, "magnitude", _positive_scalar(self.magnitude, "magnitude"))
        object.__setattr__(self, "length_scale", _positive_scalar(self.length_scale, "length_scale"))

    def matrix(self, X, X2):
        X = _as_inputs(X, False)
        X2 = _as_inputs(X2, False)
        if X.shape[1] != X2.shape[1]:
            raise DomainError("input dimensions differ")
        d2 = (
            np.sum(X**2, axis=1)[:, None]
            + np.sum(X2**2, axis=1)[None, :]
            - 2.0 * X @ X2.T
        )
        np.maximum(d2, 0.0, out=d2)
        return self.magnitude * np.exp(-0.5 * d2 / self.length_scale**2)

    def stationary(self, tau):
        tau = np.asarray(tau, dtype=float)
        return self.magnitude * np.exp(-0.5 * tau**2 / self.length_scale**2)


@dataclass(frozen=True, eq=False)
class SparseSpectrumKernel(KernelSpec):
    """``(sigma_0^2 / Q) sum_i cos(2 pi omega_i tau)``."""

    magnitude: float
    frequencies: np.ndarray
    variant = "sparse_spectrum"

    def __post_init__(self):
        object.__setattr__(self, "magnitude", _positive_scalar(self.magnitude, "magnitude"))
        w = _frozen_vector(self.frequencies, "frequencies", freq=True)
        if w.size < 1:
            raise DomainError("need at least one frequency")
        object.__setattr__(self, "frequencies", w)

    def stationary(self, tau):
        tau = np.asarray(tau, dtype=float)
        phase = 2.0 * math.pi * tau[..., None] * self.frequencies
        return self.magnitude / self.frequencies.size * np.cos(phase).sum(axis=-1)

    def matrix(self, X, X2):
        return self.stationary(_lags(X, X2))


def _sm_components(tau, means, variances):
    """Unit-weight SM subkernels, shape ``tau.shape + (Q,)``."""
    tau = np.asarray(tau, dtype=float)[..., None]
    return np.exp(-2.0 * math.pi**2 * tau**2 * variances) * np.cos(2.0 * math.pi * tau * means)


@dataclass(frozen=True, eq=False)
class SpectralMixtureKernel(KernelSpec):
    """``sum_i alpha_i exp(-2 pi^2 tau^2 sigma_i^2) cos(2 pi tau mu_i)``."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    variant = "spectral_mixture"

    def __post_init__(self):
        a = _frozen_vector(self.weights, "weights", nonneg=True)
        m = _frozen_vector(self.means, "means", nonneg=True)
        s = _frozen_vector(self.variances, "variances", positive=True)
        if not (a.size == m.size == s.size) or a.size < 1:
            raise DomainError("weights, means and variances need one entry per component")
        object.__setattr__(self, "weights", a)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", s)

    @property
    def n_components(self) -> int:
        return self.weights.size

    def stationary(self, tau):
        return _sm_components(tau, self.means, self.variances) @ self.weights

    def matrix(self, X, X2):
        return self.stationary(_lags(X, X2))

    def with_weights(self, weights):
        return type(self)(weights, self.means, self.variances)


@dataclass(frozen=True, eq=False)
class GridSMKernel(SpectralMixtureKernel):
    """Spectral mixture on a fixed frequency/bandwidth grid; only weights are free."""

    variant = "grid_sm"

    def __post_init__(self):
        super().__post_init__()
        if np.any(np.diff(self.means) <= 0):
            raise DomainError("grid frequencies must be strictly increasing")


@dataclass(frozen=True, eq=False)
class LinearCombo(KernelSpec):
    """``sum_i alpha_i k_i(x, x')`` over arbitrary subkernels."""

    weights: np.ndarray
    kernels: tuple = field(default_factory=tuple)
    variant = "linear_combo"

    def __post_init__(self):
        a = _frozen_vector(self.weights, "weights", nonneg=True)
        ks = tuple(self.kernels)
        if len(ks) != a.size or not ks:
            raise DomainError("need one weight per subkernel")
        if not all(isinstance(k, KernelSpec) for k in ks):
            raise DomainError("subkernels must be KernelSpec instances")
        object.__setattr__(self, "weights", a)
        object.__setattr__(self, "kernels", ks)

    def matrix(self, X, X2):
        out = None
        for a, k in zip(self.weights, self.kernels):
            term = a * k.matrix(X, X2)
            out = term if out is None else out + term
        return out

    def stationary(self, tau):
        return sum(a * k.stationary(tau) for a, k in zip(self.weights, self.kernels))

    def with_weights(self, weights):
        return LinearCombo(weights, self.kernels)


# -- public operations ---------------------------------------------------------


def kernel_eval(spec: KernelSpec, x, x2) -> float:
    """Kernel value for a single pair of inputs."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape or x.ndim != 1:
        raise DomainError("inputs must be vectors of equal length")
    return float(spec.matrix(x[None, :], x2[None, :])[0, 0])


def kernel_matrix(spec: KernelSpec, X, X2=None) -> np.ndarray:
    """Gram matrix ``K[i, j] = k(X[i], X2[j])``; symmetrized when ``X2`` is omitted."""
    if X2 is None:
        K = spec.matrix(X, X)
        return 0.5 * (K + K.T)
    return spec.matrix(X, X2)


def psd_check(K, slack=PSD_SLACK) -> bool:
    """``min eig(K) >= -slack * trace(K)``."""
    K = np.asarray(K, dtype=float)
    if K.size == 0:
        return True
    return bool(np.linalg.eigvalsh(0.5 * (K + K.T))[0] >= -slack * abs(np.trace(K)))


def spectral_density(spec, omega) -> np.ndarray:
    """Mirrored Gaussian-mixture spectral density ``S(omega)``.

    Each component contributes ``alpha_i / 2`` times the sum of Gaussian
    densities centred at ``+mu_i`` and ``-mu_i``.
    """
    if not isinstance(spec, SpectralMixtureKernel):
        raise DomainError("spectral density is defined for spectral mixture kernels")
    w = np.asarray(omega, dtype=float)[..., None]
    norm = spec.weights / np.sqrt(2.0 * math.pi * spec.variances)
    g = np.exp(-((w - spec.means) ** 2) / (2 * spec.variances)) + np.exp(
        -((w + spec.means) ** 2) / (2 * spec.variances)
    )
    out = 0.5 * (g @ norm)
    return float(out) if np.ndim(omega) == 0 else out


def grid_make(Q: int, freq_range=(0.0, 0.5), sigma: float = 1e-3) -> GridSMKernel:
    """Zero-weight GridSM kernel with ``Q`` evenly spaced frequencies.

    Frequencies are ``lo + (hi - lo) i / Q`` for ``i = 0..Q-1`` so the upper
    end is excluded. ``sigma`` is the component standard deviation in the
    frequency domain; every component gets variance ``sigma**2``.
    """
    Q = int(Q)
    if Q < 1:
        raise DomainError("Q must be >= 1")
    lo, hi = (float(v) for v in freq_range)
    if not (0.0 <= lo < hi <= 0.5):
        raise DomainError("frequency range must satisfy 0 <= lo < hi <= 1/2")
    sigma = _positive_scalar(sigma, "sigma")
    means = lo + (hi - lo) * np.arange(Q) / Q
    return GridSMKernel(np.zeros(Q), means, np.full(Q, sigma**2))


def subkernels(spec: KernelSpec) -> tuple[np.ndarray, list]:
    """Split a linear multiple kernel into ``(weights, unit-weight subkernels)``.

    Spectral mixtures split per component; a kernel that is not a linear
    combination is treated as one subkernel with weight 1.
    """
    if isinstance(spec, SpectralMixtureKernel):
        subs = [
            SpectralMixtureKernel([1.0], [m], [s]) for m, s in zip(spec.means, spec.variances)
        ]
        return np.array(spec.weights), subs
    if isinstance(spec, LinearCombo):
        return np.array(spec.weights), list(spec.kernels)
    return np.ones(1), [spec]


def with_weights(spec: KernelSpec, weights) -> KernelSpec:
    """Same linear multiple kernel with new subkernel weights."""
    if isinstance(spec, (SpectralMixtureKernel, LinearCombo)):
        return spec.with_weights(weights)
    weights = np.asarray(weights, dtype=float).ravel()
    if weights.size != 1:
        raise DomainError("a single kernel takes exactly one weight")
    return LinearCombo(weights, (spec,))


class GramCache:
    """Per-subkernel Gram matrices of a linear multiple kernel on fixed inputs.

    ``Ks`` has shape ``(Q, N, N)`` and is read-only after construction.
    """

    def __init__(self, spec: KernelSpec, X):
        self.spec = spec
        self.X = np.asarray(X, dtype=float)
        self.weights, subs = subkernels(spec)
        if isinstance(spec, SpectralMixtureKernel):
            tau = _lags(self.X, self.X)
            Ks = np.moveaxis(_sm_components(tau, spec.means, spec.variances), -1, 0)
            Ks = 0.5 * (Ks + np.swapaxes(Ks, 1, 2))
        else:
            Ks = np.stack([kernel_matrix(k, self.X) for k in subs])
        self.Ks = np.ascontiguousarray(Ks)
        self.Ks.setflags(write=False)

    @classmethod
    def from_matrices(cls, Ks) -> "GramCache":
        """Cache over explicit symmetric PSD matrices (no kernel spec attached)."""
        Ks = np.array(Ks, dtype=float)
        if Ks.ndim != 3 or Ks.shape[1] != Ks.shape[2]:
            raise DomainError("need a (Q, N, N) stack of matrices")
        if not np.all(np.isfinite(Ks)):
            raise DomainError("subkernel matrices must be finite")
        self = cls.__new__(cls)
        self.spec, self.X = None, None
        self.weights = np.ones(Ks.shape[0])
        self.Ks = np.ascontiguousarray(0.5 * (Ks + np.swapaxes(Ks, 1, 2)))
        self.Ks.setflags(write=False)
        return self

    @property
    def n(self) -> int:
        return self.Ks.shape[1]

    @property
    def n_kernels(self) -> int:
        return self.Ks.shape[0]

    def kernel(self, alpha) -> np.ndarray:
        return np.tensordot(np.asarray(alpha, dtype=float), self.Ks, axes=1)

    def covariance(self, alpha, v) -> np.ndarray:
        """``C = sum_i alpha_i K_i + v I``."""
        C = self.kernel(alpha)
        C[np.diag_indices_from(C)] += v
        return C

    def factor(self, alpha, v) -> tuple[np.ndarray, np.ndarray]:
        C = self.covariance(alpha, v)
        return C, cholesky(C, what="kernel covariance")


# -- serialization ---------------------------------------------------------------


def kernel_to_dict(spec: KernelSpec) -> dict:
    """Self-describing plain-data form (variant name plus named parameters)."""
    if isinstance(spec, SEKernel):
        params = {"magnitude": spec.magnitude, "length_scale": spec.length_scale}
    elif isinstance(spec, SparseSpectrumKernel):
        params = {"magnitude": spec.magnitude, "frequencies": spec.frequencies.tolist()}
    elif isinstance(spec, SpectralMixtureKernel):
        params = {
            "weights": spec.weights.tolist(),
            "means": spec.means.tolist(),
            "variances": spec.variances.tolist(),
        }
    elif isinstance(spec, LinearCombo):
        params = {
            "weights": spec.weights.tolist(),
            "kernels": [kernel_to_dict(k) for k in spec.kernels],
        }
    else:
        raise DomainError(f"unknown kernel type {type(spec).__name__}")
    return {"variant": spec.variant, "params": params}


_VARIANTS = {
    "se": SEKernel,
    "sparse_spectrum": SparseSpectrumKernel,
    "spectral_mixture": SpectralMixtureKernel,
    "grid_sm": GridSMKernel,
}


def kernel_from_dict(d: dict) -> KernelSpec:
    try:
        variant = d["variant"]
        params = dict(d["params"])
    except (KeyError, TypeError) as exc:
        raise DomainError("kernel config needs 'variant' and 'params'") from exc
    if variant == "linear_combo":
        subs = tuple(kernel_from_dict(k) for k in params.get("kernels", []))
        return LinearCombo(params.get("weights", []), subs)
    if variant not in _VARIANTS:
        raise DomainError(f"unknown kernel variant {variant!r}")
    try:
        return _VARIANTS[variant](**params)
    except TypeError as exc:
        raise DomainError(f"bad parameters for {variant}: {exc}") from exc


def kernel_to_json(spec: KernelSpec, **kw) -> str:
    # float repr round-trips exactly through json
    return json.dumps(kernel_to_dict(spec), allow_nan=False, **kw)


def kernel_from_json(text: str) -> KernelSpec:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DomainError(f"kernel config is not valid JSON: {exc}") from exc
    return kernel_from_dict(d)
