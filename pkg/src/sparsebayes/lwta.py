"""Stochastic local-winner-takes-all Bayesian network with link-wise IBP utilities.

Each layer maps an input ``x`` (plus a constant bias input) to ``K`` blocks of
``J`` competing linear units,

    h[n,k,j] = sum_i x[n,i] z[i,k] w[i,k,j],     y[n,k,j] = xi[n,k,j] h[n,k,j],

where ``w`` has a Gaussian posterior, ``z[i,k]`` is a Bernoulli utility whose
prior probability ``pi_k = prod_{l<=k} u_l`` comes from per-block sticks
``u_l ~ Beta(alpha, 1)`` (Kumaraswamy posteriors), and the one-hot winner
``xi[n,k]`` is drawn with probabilities ``softmax_j h[n,k,:]``. A Gaussian
linear readout produces class logits. Training maximizes a single-sample
reparameterized ELBO with Adam; gradients come from ``autodiff``.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, expit

from . import autodiff as ad
from ._errors import DomainError, NumericalError
from .priors import as_generator

__all__ = [
    "LwtaLayer",
    "LwtaNetwork",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "draw_noise",
    "bernoulli_kl",
    "categorical_kl",
    "gaussian_kl",
    "kumaraswamy_beta_kl",
    "load_network",
    "lwta_accuracy",
    "lwta_bit_report",
    "lwta_elbo_grad",
    "lwta_forward",
    "lwta_init",
    "lwta_prune",
    "lwta_train",
    "save_network",
]

FORMAT_VERSION = 1
EULER_GAMMA = 0.5772156649015329
KL_SERIES_TERMS = 10
PROB_EPS = 1e-7


class TrainingDiverged(NumericalError):
    """The smoothed ELBO fell far below its starting value; ``trace`` holds the ELBO so far."""

    def __init__(self, message, trace):
        super().__init__(message, trace=trace)
        self.trace = trace


@dataclass
class LwtaLayer:
    """Variational parameters of one LWTA layer.

    Attributes
    ----------
    mu, logvar : ndarray (L_in + 1, K, J)
        Weight posterior means and log-variances; the last input row is the
        bias link (constant input 1).
    logit : ndarray (L_in + 1, K)
        Utility posterior logits, ``pi_tilde = sigmoid(logit)``.
    log_a, log_b : ndarray (K,)
        Log Kumaraswamy stick parameters per block.
    alpha : float
        IBP strength of the stick prior ``Beta(alpha, 1)``.
    keep : ndarray of bool (L_in + 1, K)
        Links not removed by pruning.
    """

    mu: np.ndarray
    logvar: np.ndarray
    logit: np.ndarray
    log_a: np.ndarray
    log_b: np.ndarray
    alpha: float
    keep: np.ndarray

    PARAMS = ("mu", "logvar", "logit", "log_a", "log_b")

    def __post_init__(self):
        L1, K, J = self.mu.shape
        if self.logvar.shape != (L1, K, J) or self.logit.shape != (L1, K) or self.keep.shape != (L1, K):
            raise DomainError("layer parameter shapes disagree")
        if self.log_a.shape != (K,) or self.log_b.shape != (K,):
            raise DomainError("stick parameters must have one entry per block")
        if not self.alpha > 0:
            raise DomainError("alpha must be positive")

    @property
    def n_inputs(self) -> int:
        return self.mu.shape[0] - 1

    @property
    def blocks(self) -> int:
        return self.mu.shape[1]

    @property
    def units(self) -> int:
        return self.mu.shape[2]

    @property
    def width(self) -> int:
        return self.blocks * self.units

    @property
    def utility(self) -> np.ndarray:
        """Posterior link probabilities ``pi_tilde``, strictly inside (0, 1)."""
        return np.clip(expit(self.logit), PROB_EPS, 1 - PROB_EPS)

    def copy(self) -> "LwtaLayer":
        return LwtaLayer(**{k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in vars(self).items()})


@dataclass
class LwtaNetwork:
    """Ordered LWTA layers followed by a Gaussian linear readout to ``C`` logits.

    ``readout_mu`` and ``readout_logvar`` have shape ``(K J + 1, C)`` with the
    bias as last row.
    """

    layers: list
    readout_mu: np.ndarray
    readout_logvar: np.ndarray

    def __post_init__(self):
        if not self.layers:
            raise DomainError("at least one LWTA layer is required")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.width != nxt.n_inputs:
                raise DomainError(f"layer width {prev.width} does not match next input width {nxt.n_inputs}")
        if self.readout_mu.shape[0] != self.layers[-1].width + 1:
            raise DomainError("readout input width mismatch")
        if self.readout_logvar.shape != self.readout_mu.shape:
            raise DomainError("readout parameter shapes disagree")

    @property
    def n_classes(self) -> int:
        return self.readout_mu.shape[1]

    @property
    def n_inputs(self) -> int:
        return self.layers[0].n_inputs

    def copy(self) -> "LwtaNetwork":
        return LwtaNetwork([l.copy() for l in self.layers], self.readout_mu.copy(), self.readout_logvar.copy())

    def parameters(self) -> dict:
        """Trainable arrays keyed by path (views, not copies)."""
        out = {}
        for i, layer in enumerate(self.layers):
            for name in LwtaLayer.PARAMS:
                out[f"layers.{i}.{name}"] = getattr(layer, name)
        out["readout.mu"] = self.readout_mu
        out["readout.logvar"] = self.readout_logvar
        return out


def lwta_init(n_inputs, n_classes, blocks=(8, 8), units=2, alpha=None, rng=None,
              init_logvar=-9.0, init_utility=0.9) -> LwtaNetwork:
    """Random network; ``blocks`` lists ``K`` per layer, ``units`` is ``J``.

    ``alpha`` defaults to ``K`` of each layer. Weight means are
    ``N(0, 1/fan_in)``; sticks start at ``Kumaraswamy(K, 1)``-like values.
    """
    rng = as_generator(rng)
    layers = []
    width = int(n_inputs)
    for K in blocks:
        K = int(K)
        shape = (width + 1, K, int(units))
        layers.append(LwtaLayer(
            mu=rng.standard_normal(shape) / math.sqrt(width + 1),
            logvar=np.full(shape, float(init_logvar)),
            logit=np.full((width + 1, K), math.log(init_utility / (1 - init_utility))),
            log_a=np.full(K, math.log(K)),
            log_b=np.zeros(K),
            alpha=float(alpha if alpha is not None else K),
            keep=np.ones((width + 1, K), dtype=bool),
        ))
        width = K * int(units)
    readout = rng.standard_normal((width + 1, int(n_classes))) / math.sqrt(width + 1)
    return LwtaNetwork(layers, readout, np.full(readout.shape, float(init_logvar)))


@dataclass(frozen=True)
class TrainConfig:
    """Training controls. Temperatures are constant (no annealing)."""

    learning_rate: float = 0.01
    tau_gs: float = 0.67
    tau_z: float = 0.5
    epochs: int = 300
    batch_size: int = 64
    seed: int = 0
    mc_samples: int = 1

    def __post_init__(self):
        if not (self.tau_gs > 0 and self.tau_z > 0):
            raise DomainError("temperatures must be positive")
        if self.mc_samples < 1:
            raise DomainError("mc_samples must be >= 1")
        if self.learning_rate < 0 or self.epochs < 0 or self.batch_size < 1:
            raise DomainError("invalid learning rate, epochs or batch size")


def draw_noise(net: LwtaNetwork, batch: int, rng) -> dict:
    """Base randomness for one reparameterized sample of the whole network."""
    rng = as_generator(rng)
    out = {}
    for i, layer in enumerate(net.layers):
        out[f"layers.{i}.eps"] = rng.standard_normal(layer.mu.shape)
        out[f"layers.{i}.stick"] = rng.uniform(PROB_EPS, 1 - PROB_EPS, layer.blocks)
        out[f"layers.{i}.link"] = rng.uniform(PROB_EPS, 1 - PROB_EPS, layer.logit.shape)
        out[f"layers.{i}.gumbel"] = rng.gumbel(size=(batch, layer.blocks, layer.units))
    out["readout.eps"] = rng.standard_normal(net.readout_mu.shape)
    return out


def gaussian_kl(mu, logvar):
    """``KL(N(mu, e^logvar) || N(0, 1))`` summed: ``1/2 sum(mu^2 + zeta - log zeta - 1)``."""
    return 0.5 * (mu * mu + ad.exp(logvar) - logvar - 1.0).sum()


def categorical_kl(log_p):
    """``KL(Categorical(P) || uniform)`` summed over all but the last axis."""
    J = log_p.shape[-1]
    return (ad.exp(log_p) * (log_p + math.log(J))).sum()


def bernoulli_kl(logit, log_pi, log_1m_pi, keep=None):
    """``KL(Bernoulli(sigmoid(logit)) || Bernoulli(pi))`` summed over kept links.

    ``log_pi`` and ``log_1m_pi`` broadcast against ``logit`` (per block).
    """
    q_log = ad.log_sigmoid(logit)
    q_log1m = ad.log_sigmoid(-logit)
    q = ad.exp(q_log)
    kl = q * (q_log - log_pi) + (1.0 - q) * (q_log1m - log_1m_pi)
    if keep is not None:
        kl = kl * keep
    return kl.sum()


def kumaraswamy_beta_kl(log_a, log_b, alpha, beta=1.0, terms=KL_SERIES_TERMS):
    """``KL(Kumaraswamy(a, b) || Beta(alpha, beta))`` summed over entries.

    Series form with the infinite sum truncated at ``terms``; the dropped tail
    is bounded by ``|beta - 1| b sum_{m > terms} B(m/a, b)/(m + a b)``. For the
    IBP prior ``beta = 1`` and the series vanishes.
    """
    a = ad.exp(log_a)
    b = ad.exp(log_b)
    kl = ((a - alpha) / a) * (-EULER_GAMMA - ad.digamma(b) - 1.0 / b) + log_a + log_b
    kl = kl + betaln(alpha, beta) - (b - 1.0) / b
    if beta != 1.0:
        series = 0.0
        for m in range(1, terms + 1):
            mb = m / a
            series = series + ad.exp(ad.gammaln(mb) + ad.gammaln(b) - ad.gammaln(mb + b)) / (m + a * b)
        kl = kl + (beta - 1.0) * b * series
    return kl.sum()


def _layer_train(layer_vars, layer, x, noise, i, cfg):
    """Sampled layer output and the sample-level KL pieces."""
    mu, logvar, logit, log_a, log_b = layer_vars
    ones = np.ones((x.shape[0], 1))
    xb = ad.concat([x, ones], axis=1)
    w = mu + ad.exp(0.5 * logvar) * noise[f"layers.{i}.eps"]
    # Kumaraswamy sticks by inversion: u = (1 - v^(1/b))^(1/a)
    v = noise[f"layers.{i}.stick"]
    log_u = ad.log1mexp(np.log(v) * ad.exp(-log_b)) * ad.exp(-log_a)
    log_pi = ad.cumsum(log_u, axis=0)
    log_1m_pi = ad.log1mexp(log_pi - 1e-12)
    # relaxed Bernoulli utilities
    U = noise[f"layers.{i}.link"]
    z = ad.sigmoid((logit + (np.log(U) - np.log1p(-U))) / cfg.tau_z) * layer.keep
    h = ad.einsum("ni,ikj->nkj", xb, w * z.reshape(*z.shape, 1))
    log_p = h - ad.logsumexp(h, axis=-1, keepdims=True)
    xi = ad.softmax((h + noise[f"layers.{i}.gumbel"]) / cfg.tau_gs, axis=-1)
    y = (xi * h).reshape(x.shape[0], layer.width)
    kl_xi = categorical_kl(log_p)
    kl_z = bernoulli_kl(logit, log_pi, log_1m_pi, layer.keep)
    kl_w = gaussian_kl(mu, logvar)
    kl_u = kumaraswamy_beta_kl(log_a, log_b, layer.alpha)
    latent = {"z": z.value, "xi": xi.value, "P": np.exp(log_p.value), "y": y.value}
    return y, kl_xi, kl_z + kl_w + kl_u, latent


def _objective(net, params, x, labels, noise, cfg, n_total):
    """Single-sample ELBO estimate as a tape value."""
    B = x.shape[0]
    h = x
    kl_global = 0.0
    kl_local = 0.0
    for i, layer in enumerate(net.layers):
        lv = [params[f"layers.{i}.{n}"] for n in LwtaLayer.PARAMS]
        h, kl_xi, kl_g, _ = _layer_train(lv, layer, h, noise, i, cfg)
        kl_local = kl_local + kl_xi
        kl_global = kl_global + kl_g
    rmu, rlv = params["readout.mu"], params["readout.logvar"]
    w_out = rmu + ad.exp(0.5 * rlv) * noise["readout.eps"]
    hb = ad.concat([h, np.ones((B, 1))], axis=1)
    logits = ad.einsum("nm,mc->nc", hb, w_out)
    log_probs = logits - ad.logsumexp(logits, axis=-1, keepdims=True)
    onehot = np.eye(net.n_classes)[labels]
    loglik = (log_probs * onehot).sum()
    kl_global = kl_global + gaussian_kl(rmu, rlv)
    return (n_total / B) * (loglik - kl_local) - kl_global


def _check_batch(net, x, labels=None):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != net.n_inputs:
        raise DomainError(f"input batch must have shape (n, {net.n_inputs}), got {x.shape}")
    if labels is None:
        return x, None
    labels = np.asarray(labels)
    if labels.shape != (x.shape[0],) or not np.issubdtype(labels.dtype, np.integer):
        raise DomainError("labels must be an integer vector matching the batch")
    if labels.size and (labels.min() < 1 or labels.max() > net.n_classes):
        raise DomainError(f"labels must lie in 1..{net.n_classes}")
    return x, labels - 1


def lwta_elbo_grad(net: LwtaNetwork, x, labels, cfg: TrainConfig | None = None, rng=None,
                   noise=None, n_total=None):
    """Single-sample ELBO estimate and its gradients for every variational parameter.

    Parameters
    ----------
    net : LwtaNetwork
    x : ndarray (B, L_in)
    labels : ndarray of int (B,)
        Class labels ``1..C``.
    cfg : TrainConfig, optional
        Supplies the temperatures and ``mc_samples``.
    rng : seed or Generator, optional
        Used when ``noise`` is not given.
    noise : dict, optional
        Fixed base randomness from ``draw_noise`` (one sample).
    n_total : int, optional
        Dataset size used to scale the data terms (defaults to ``B``).

    Returns
    -------
    elbo : float
    grads : dict
        Path -> gradient array, same keys as ``net.parameters()``.
    """
    cfg = cfg or TrainConfig()
    x, labels = _check_batch(net, x, labels)
    n_total = x.shape[0] if n_total is None else n_total
    rng = as_generator(rng)
    noises = [noise] if noise is not None else [draw_noise(net, x.shape[0], rng) for _ in range(cfg.mc_samples)]
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in net.parameters().items()}
    for nz in noises:
        tape = ad.Tape()
        params = {k: tape.var(v, name=k) for k, v in net.parameters().items()}
        obj = _objective(net, params, x, labels, nz, cfg, n_total)
        g = tape.gradient(obj, list(params.values()))
        total += float(obj.value)
        for k, gk in zip(params, g):
            grads[k] += gk / len(noises)
    for k, gk in grads.items():
        if not np.all(np.isfinite(gk)):
            raise NumericalError(f"non-finite gradient for {k}", path=k)
    return total / len(noises), grads


def lwta_forward(net: LwtaNetwork, x, rng=None, mode="test", winner="sample", cfg=None, z_cut=None):
    """Class probabilities and the sampled latents.

    ``mode="train"`` samples weights, relaxed utilities and Gumbel-softmax
    winners. ``mode="test"`` uses the weight means, hard utilities (links kept
    by pruning, and with ``z_cut`` also ``pi_tilde >= z_cut``) and one-hot
    winners drawn from the winner probabilities (``winner="sample"``) or
    their argmax (``winner="argmax"``).

    Returns
    -------
    probs : ndarray (n, C)
    latents : list of dict
        Per layer ``z``, ``xi``, winner probabilities ``P`` (n, K, J) and the
        layer output ``y`` (n, K J).
    """
    cfg = cfg or TrainConfig()
    x, _ = _check_batch(net, x)
    rng = as_generator(rng)
    if mode not in ("train", "test"):
        raise DomainError(f"mode must be 'train' or 'test', got {mode!r}")
    if winner not in ("sample", "argmax"):
        raise DomainError(f"winner must be 'sample' or 'argmax', got {winner!r}")
    n = x.shape[0]
    latents = []
    if mode == "train":
        noise = draw_noise(net, n, rng)
        h = ad.Var(x, None)
        for i, layer in enumerate(net.layers):
            lv = [ad.Var(getattr(layer, k), None) for k in LwtaLayer.PARAMS]
            h, _, _, lat = _layer_train(lv, layer, h, noise, i, cfg)
            latents.append(lat)
        h = h.value
        w_out = net.readout_mu + np.exp(0.5 * net.readout_logvar) * noise["readout.eps"]
    else:
        h = x
        for layer in net.layers:
            z = layer.keep.astype(float)
            if z_cut is not None:
                z = z * (layer.utility >= z_cut)
            xb = np.hstack([h, np.ones((n, 1))])
            act = np.einsum("ni,ikj->nkj", xb, layer.mu * z[:, :, None])
            P = _softmax(act)
            if winner == "argmax":
                choice = np.argmax(P, axis=-1)
            else:
                cum = np.cumsum(P, axis=-1)
                r = rng.random(P.shape[:2] + (1,))
                choice = np.minimum(np.sum(cum < r, axis=-1), layer.units - 1)
            xi = np.zeros_like(P)
            np.put_along_axis(xi, choice[..., None], 1.0, axis=-1)
            h = (xi * act).reshape(n, layer.width)
            latents.append({"z": z, "xi": xi, "P": P, "y": h})
        w_out = net.readout_mu
    logits = np.hstack([h, np.ones((n, 1))]) @ w_out
    return _softmax(logits), latents


def _softmax(a):
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def lwta_accuracy(net, x, labels, rng=None, winner="sample", z_cut=None) -> float:
    """Test-mode classification accuracy for labels ``1..C``."""
    probs, _ = lwta_forward(net, x, rng=rng, mode="test", winner=winner, z_cut=z_cut)
    return float(np.mean(np.argmax(probs, axis=1) + 1 == np.asarray(labels)))


@dataclass
class TrainResult:
    net: LwtaNetwork
    trace: list = field(default_factory=list)

    def smoothed(self, window=50) -> np.ndarray:
        t = np.asarray(self.trace)
        if t.size < window:
            return t.copy()
        return np.convolve(t, np.ones(window) / window, mode="valid")


class _Adam:
    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m, self.v, self.t = {}, {}, 0

    def ascend(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            m = self.m[k] = self.b1 * self.m.get(k, 0.0) + (1 - self.b1) * g
            v = self.v[k] = self.b2 * self.v.get(k, 0.0) + (1 - self.b2) * g * g
            params[k] += self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def lwta_train(net: LwtaNetwork, x, labels, cfg: TrainConfig | None = None,
               window=50) -> TrainResult:
    """Adam ascent on the single-sample ELBO; the input network is not modified.

    Raises ``TrainingDiverged`` when the ``window``-step smoothed ELBO drops
    below ``start - 9 |start|`` (ten times worse than the first window).
    """
    cfg = cfg or TrainConfig()
    x, _ = _check_batch(net, x, labels)
    labels = np.asarray(labels)
    if x.shape[0] == 0:
        raise DomainError("dataset is empty")
    net = net.copy()
    params = net.parameters()
    opt = _Adam(cfg.learning_rate)
    seeds = np.random.SeedSequence(cfg.seed)
    order_rng = np.random.default_rng(seeds.spawn(1)[0])
    n = x.shape[0]
    result = TrainResult(net)
    start = None
    for epoch in range(cfg.epochs):
        perm = order_rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            step_rng = np.random.default_rng(seeds.spawn(1)[0])
            elbo, grads = lwta_elbo_grad(net, x[idx], labels[idx], cfg, step_rng, n_total=n)
            opt.ascend(params, grads)
            result.trace.append(elbo)
            t = len(result.trace)
            if t == window:
                start = float(np.mean(result.trace))
            elif start is not None and t % window == 0:
                cur = float(np.mean(result.trace[-window:]))
                if cur < start - 9.0 * abs(start):
                    raise TrainingDiverged(f"smoothed ELBO fell from {start:.4g} to {cur:.4g}", result.trace)
    return result


def lwta_prune(net: LwtaNetwork, tau=0.01):
    """Remove links with ``pi_tilde < tau``; returns ``(pruned copy, retained fraction per layer)``."""
    if not 0 < tau < 1:
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    net = net.copy()
    stats = []
    for layer in net.layers:
        layer.keep &= layer.utility >= tau
        stats.append(float(np.mean(layer.keep)))
    return net, stats


def _quantize(x, bits):
    """Round to ``bits`` explicit mantissa bits (float-style, exponent unbounded)."""
    frac, expo = np.frexp(x)
    scale = 2.0 ** (bits + 1)
    return np.ldexp(np.round(frac * scale) / scale, expo)


def lwta_bit_report(net: LwtaNetwork, max_bits=23) -> list:
    """Mantissa bits needed per weight so that rounding error < half a posterior std.

    Returns one dict per weight group (each layer, then the readout) with the
    per-weight ``bits`` array, a ``histogram`` over ``0..max_bits`` and the ``mean``.
    """
    groups = [(l.mu, l.logvar) for l in net.layers] + [(net.readout_mu, net.readout_logvar)]
    report = []
    for mu, logvar in groups:
        half_sd = 0.5 * np.exp(0.5 * logvar)
        bits = np.full(mu.shape, max_bits, dtype=int)
        done = np.zeros(mu.shape, dtype=bool)
        for m in range(max_bits + 1):
            ok = ~done & (np.abs(_quantize(mu, m) - mu) < half_sd)
            bits[ok] = m
            done |= ok
        report.append({
            "bits": bits,
            "histogram": np.bincount(bits.ravel(), minlength=max_bits + 1),
            "mean": float(bits.mean()),
        })
    return report


def save_network(net: LwtaNetwork, path) -> None:
    """Write all posterior parameters to an ``.npz`` container with a version header."""
    header = {"format": "sparsebayes.lwta", "version": FORMAT_VERSION, "n_layers": len(net.layers),
              "alpha": [l.alpha for l in net.layers]}
    arrays = {"header": np.array(json.dumps(header))}
    for i, layer in enumerate(net.layers):
        for name in LwtaLayer.PARAMS + ("keep",):
            arrays[f"layers.{i}.{name}"] = getattr(layer, name)
    arrays["readout.mu"] = net.readout_mu
    arrays["readout.logvar"] = net.readout_logvar
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_network(path) -> LwtaNetwork:
    """Read a network written by ``save_network``."""
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            if header.get("format") != "sparsebayes.lwta":
                raise DomainError("not an LWTA network file")
            if header.get("version") != FORMAT_VERSION:
                raise DomainError(f"unsupported network format version {header.get('version')}")
            layers = []
            for i in range(header["n_layers"]):
                kw = {n: data[f"layers.{i}.{n}"] for n in LwtaLayer.PARAMS + ("keep",)}
                layers.append(LwtaLayer(alpha=float(header["alpha"][i]), **kw))
            return LwtaNetwork(layers, data["readout.mu"], data["readout.logvar"])
    except (KeyError, ValueError, OSError) as exc:
        if isinstance(exc, DomainError):
            raise
        raise DomainError(f"cannot read network file: {exc}") from exc
