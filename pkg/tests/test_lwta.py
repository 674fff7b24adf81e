"""Stochastic LWTA network: forward pass, ELBO gradients, training, pruning, bit report, I/O."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.special import betaln, gammaln

from sparsebayes import autodiff as ad
from sparsebayes import lwta as lw
from sparsebayes._errors import DomainError, NumericalError
from sparsebayes.lwta import (
    LwtaNetwork, TrainConfig, TrainingDiverged, bernoulli_kl, categorical_kl, draw_noise,
    gaussian_kl, kumaraswamy_beta_kl, load_network, lwta_accuracy, lwta_bit_report,
    lwta_elbo_grad, lwta_forward, lwta_init, lwta_prune, lwta_train, save_network,
)
from sparsebayes.synthetic import two_arcs


def const(x):
    return ad.Var(np.asarray(x, dtype=float), None)


def toy_net(blocks=(2,), seed=0):
    """4 inputs, 2 classes, J=2, with utilities and sticks moved off their defaults."""
    rng = np.random.default_rng(seed)
    net = lwta_init(4, 2, blocks=blocks, units=2, rng=rng, init_logvar=-2.0, init_utility=0.7)
    for layer in net.layers:
        layer.logit += 0.5 * rng.standard_normal(layer.logit.shape)
        layer.log_a += 0.3 * rng.standard_normal(layer.log_a.shape)
        layer.log_b += 0.3 * rng.standard_normal(layer.log_b.shape)
    return net


def toy_batch(n=5, seed=1):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, 4)), rng.integers(1, 3, n)


def quad_kuma_beta_kl(a, b, alpha, beta):
    def f(x):
        lq = np.log(a * b) + (a - 1) * np.log(x) + (b - 1) * np.log1p(-x ** a)
        lp = (alpha - 1) * np.log(x) + (beta - 1) * np.log1p(-x) - betaln(alpha, beta)
        return np.exp(lq) * (lq - lp)

    return integrate.quad(f, 0, 1, limit=400, epsabs=1e-12, epsrel=1e-11)[0]


def kuma_kl(a, b, alpha, beta, terms=lw.KL_SERIES_TERMS):
    return float(kumaraswamy_beta_kl(const(np.log([a])), const(np.log([b])), alpha, beta, terms).value)


class TestForward:
    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 30.0))
    @settings(max_examples=40, deadline=None)
    def test_winner_probabilities_sum_to_one(self, seed, scale):
        rng = np.random.default_rng(seed)
        net = lwta_init(3, 3, blocks=(4, 3), units=3, rng=rng, init_logvar=-1.0)
        x = scale * rng.standard_normal((7, 3))
        for mode in ("test", "train"):
            probs, lat = lwta_forward(net, x, rng, mode=mode)
            np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
            for layer in lat:
                np.testing.assert_allclose(layer["P"].sum(axis=-1), 1.0, atol=1e-12)

    @pytest.mark.parametrize("winner", ["sample", "argmax"])
    def test_test_mode_one_hot(self, winner):
        net = lwta_init(3, 2, blocks=(5, 4), units=3, rng=2)
        x = np.random.default_rng(3).standard_normal((20, 3))
        _, lat = lwta_forward(net, x, 4, winner=winner)
        for layer in lat:
            xi = layer["xi"]
            assert set(np.unique(xi)) <= {0.0, 1.0}
            np.testing.assert_array_equal(xi.sum(axis=-1), 1.0)
            y = layer["y"].reshape(xi.shape)
            assert np.all(y[xi == 0] == 0.0)

    def test_argmax_picks_largest(self):
        net = lwta_init(3, 2, blocks=(4,), units=3, rng=5)
        x = np.random.default_rng(6).standard_normal((10, 3))
        _, lat = lwta_forward(net, x, 0, winner="argmax")
        P, xi = lat[0]["P"], lat[0]["xi"]
        np.testing.assert_array_equal(np.argmax(xi, -1), np.argmax(P, -1))

    def test_sampled_winner_frequencies(self):
        net = lwta_init(2, 2, blocks=(1,), units=3, rng=7)
        x = np.tile(np.array([[0.3, -0.8]]), (20000, 1))
        _, lat = lwta_forward(net, x, 8)
        freq = lat[0]["xi"][:, 0].mean(axis=0)
        P = lat[0]["P"][0, 0]
        se = np.sqrt(P * (1 - P) / x.shape[0])
        assert np.all(np.abs(freq - P) < 4 * se)

    def test_single_unit_is_masked_linear_map(self):
        net = lwta_init(3, 2, blocks=(4,), units=1, rng=9)
        layer = net.layers[0]
        layer.keep[0, 1] = False
        x = np.random.default_rng(10).standard_normal((6, 3))
        for mode in ("test", "train"):
            _, lat = lwta_forward(net, x, 11, mode=mode)
            np.testing.assert_array_equal(lat[0]["xi"], 1.0)
        _, lat = lwta_forward(net, x, 11)
        xb = np.hstack([x, np.ones((6, 1))])
        expected = xb @ (layer.mu[:, :, 0] * layer.keep)
        np.testing.assert_allclose(lat[0]["y"], expected, rtol=1e-13)

    def test_symmetric_block_uniform(self):
        net = lwta_init(3, 2, blocks=(3,), units=4, rng=12)
        net.layers[0].mu[:, 1, :] = net.layers[0].mu[:, 1, :1]
        x = np.random.default_rng(13).standard_normal((5, 3))
        _, lat = lwta_forward(net, x, 0)
        np.testing.assert_allclose(lat[0]["P"][:, 1, :], 0.25, atol=1e-15)

    def test_all_utilities_off_gives_zero_output(self):
        net = lwta_init(3, 2, blocks=(4, 2), units=2, rng=14)
        net.layers[0].logit[:] = -40.0
        x = np.random.default_rng(15).standard_normal((5, 3))
        _, lat = lwta_forward(net, x, 0, z_cut=0.01)
        np.testing.assert_array_equal(lat[0]["y"], 0.0)
        np.testing.assert_array_equal(lat[0]["z"], 0.0)

    def test_shape_mismatch(self):
        net = lwta_init(3, 2, blocks=(2,), rng=0)
        with pytest.raises(DomainError):
            lwta_forward(net, np.zeros((4, 2)))
        with pytest.raises(DomainError):
            lwta_forward(net, np.zeros((4, 3)), mode="eval")
        with pytest.raises(DomainError):
            lwta_forward(net, np.zeros((4, 3)), winner="max")

    def test_mismatched_layers_rejected(self):
        a = lwta_init(3, 2, blocks=(2,), units=2, rng=0)
        b = lwta_init(5, 2, blocks=(2,), units=2, rng=0)
        with pytest.raises(DomainError):
            LwtaNetwork([a.layers[0], b.layers[0]], b.readout_mu, b.readout_logvar)


class TestKl:
    def test_gaussian_hand_formula(self):
        rng = np.random.default_rng(0)
        mu, lv = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
        z = np.exp(lv)
        hand = 0.5 * np.sum(mu ** 2 + z - np.log(z) - 1)
        np.testing.assert_allclose(float(gaussian_kl(const(mu), const(lv)).value), hand, rtol=1e-10)

    @given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=8))
    def test_gaussian_nonnegative(self, pairs):
        mu, lv = np.array(pairs).T
        assert float(gaussian_kl(const(mu), const(lv)).value) >= 0.0

    def test_gaussian_zero_only_at_prior(self):
        assert float(gaussian_kl(const(np.zeros(4)), const(np.zeros(4))).value) == 0.0
        assert float(gaussian_kl(const([1e-3, 0]), const([0, 0])).value) > 0.0
        assert float(gaussian_kl(const([0, 0]), const([1e-3, 0])).value) > 0.0

    def test_categorical_uniform_zero(self):
        log_p = np.full((3, 2, 4), -np.log(4))
        assert abs(float(categorical_kl(const(log_p)).value)) < 1e-15

    def test_categorical_hand(self):
        p = np.array([0.7, 0.2, 0.1])
        hand = np.sum(p * np.log(p * 3))
        np.testing.assert_allclose(float(categorical_kl(const(np.log(p))).value), hand, rtol=1e-12)

    def test_bernoulli_hand(self):
        q, pi = 0.3, 0.8
        hand = q * np.log(q / pi) + (1 - q) * np.log((1 - q) / (1 - pi))
        val = bernoulli_kl(const([np.log(q / (1 - q))]), np.log(pi), np.log1p(-pi))
        np.testing.assert_allclose(float(val.value), hand, rtol=1e-12)

    def test_bernoulli_keep_mask(self):
        logit = const([[0.5, -1.0]])
        full = float(bernoulli_kl(logit, np.log(0.4), np.log(0.6)).value)
        half = float(bernoulli_kl(logit, np.log(0.4), np.log(0.6), np.array([[True, False]])).value)
        assert 0 < half < full

    @pytest.mark.parametrize("alpha", [0.5, 2.0, 8.0])
    def test_kumaraswamy_at_prior_is_zero(self, alpha):
        assert abs(kuma_kl(alpha, 1.0, alpha, 1.0)) < 1e-12

    @pytest.mark.parametrize("a,b,alpha", [(3.0, 0.5, 2.0), (0.7, 2.0, 1.5), (5.0, 3.0, 1.0), (1.2, 0.8, 4.0)])
    def test_kumaraswamy_ibp_prior_matches_quadrature(self, a, b, alpha):
        np.testing.assert_allclose(kuma_kl(a, b, alpha, 1.0), quad_kuma_beta_kl(a, b, alpha, 1.0), rtol=1e-8)

    @pytest.mark.parametrize("a,b,alpha,beta", [(2.0, 3.0, 2.0, 2.0), (1.5, 1.5, 1.0, 3.0), (4.0, 2.0, 3.0, 1.5)])
    def test_kumaraswamy_truncation_within_tail_bound(self, a, b, alpha, beta):
        exact = quad_kuma_beta_kl(a, b, alpha, beta)
        m = np.arange(lw.KL_SERIES_TERMS + 1, 2_000_001, dtype=float)
        tail = abs(beta - 1) * b * np.sum(np.exp(gammaln(m / a) + gammaln(b) - gammaln(m / a + b)) / (m + a * b))
        err = abs(kuma_kl(a, b, alpha, beta) - exact)
        assert err <= tail * (1 + 1e-6) + 1e-9
        # more terms approach the exact value
        assert abs(kuma_kl(a, b, alpha, beta, terms=1000) - exact) < err

    def test_posterior_equal_prior_all_terms_small(self):
        net = lwta_init(4, 2, blocks=(3,), units=2, rng=0)
        layer = net.layers[0]
        layer.mu[:] = 0.0
        layer.logvar[:] = 0.0
        rng = np.random.default_rng(1)
        kls = []
        for _ in range(50):
            nz = draw_noise(net, 1, rng)
            a, b = np.exp(layer.log_a), np.exp(layer.log_b)
            u = (1 - nz["layers.0.stick"] ** (1 / b)) ** (1 / a)
            pi = np.cumprod(u)
            logit = np.broadcast_to(np.log(pi) - np.log1p(-pi), layer.logit.shape)
            kls.append([
                float(gaussian_kl(const(layer.mu), const(layer.logvar)).value),
                float(bernoulli_kl(const(logit), np.log(pi), np.log1p(-pi)).value),
                float(categorical_kl(const(np.full((1, 3, 2), -np.log(2)))).value),
                float(kumaraswamy_beta_kl(const(layer.log_a), const(layer.log_b), layer.alpha).value),
            ])
        assert np.all(np.abs(np.mean(kls, axis=0)) <= 1e-6)


class TestGradients:
    @staticmethod
    def fd_check(net, x, y, noise, h=1e-6):
        cfg = TrainConfig()
        _, grads = lwta_elbo_grad(net, x, y, cfg, noise=noise)
        worst = {}
        for path, arr in net.parameters().items():
            g = grads[path]
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                fp, _ = lwta_elbo_grad(net, x, y, cfg, noise=noise)
                arr[idx] = old - h
                fm, _ = lwta_elbo_grad(net, x, y, cfg, noise=noise)
                arr[idx] = old
                fd = (fp - fm) / (2 * h)
                rel = abs(g[idx] - fd) / max(abs(g[idx]), abs(fd), 1e-6)
                worst[path] = max(worst.get(path, 0.0), rel)
        return worst

    @pytest.mark.parametrize("blocks", [(2,), (2, 2)])
    def test_finite_differences(self, blocks):
        net = toy_net(blocks)
        x, y = toy_batch()
        noise = draw_noise(net, x.shape[0], np.random.default_rng(2))
        worst = self.fd_check(net, x, y, noise)
        classes = {p.rsplit(".", 1)[-1] for p in worst}
        assert classes == {"mu", "logvar", "logit", "log_a", "log_b"}
        assert max(worst.values()) < 1e-4, worst

    def test_frozen_noise_reproducible(self):
        net = toy_net()
        x, y = toy_batch()
        noise = draw_noise(net, 5, 3)
        e1, g1 = lwta_elbo_grad(net, x, y, noise=noise)
        e2, g2 = lwta_elbo_grad(net, x, y, noise=noise)
        assert e1 == e2
        for k in g1:
            np.testing.assert_array_equal(g1[k], g2[k])

    def test_mc_samples_average(self):
        net = toy_net()
        x, y = toy_batch()
        cfg = TrainConfig(mc_samples=3)
        e, g = lwta_elbo_grad(net, x, y, cfg, rng=4)
        rng = np.random.default_rng(4)
        parts = [lwta_elbo_grad(net, x, y, noise=draw_noise(net, 5, rng)) for _ in range(3)]
        np.testing.assert_allclose(e, np.mean([p[0] for p in parts]), rtol=1e-12)
        np.testing.assert_allclose(g["readout.mu"], np.mean([p[1]["readout.mu"] for p in parts], axis=0),
                                   rtol=1e-12)

    def test_pruned_links_get_no_gradient(self):
        net = toy_net()
        net.layers[0].keep[1, 0] = False
        x, y = toy_batch()
        _, g = lwta_elbo_grad(net, x, y, rng=0)
        assert g["layers.0.logit"][1, 0] == 0.0

    def test_non_finite_gradient_reports_path(self):
        net = toy_net()
        net.layers[0].mu[0, 0, 0] = np.nan
        x, y = toy_batch()
        with pytest.raises(NumericalError) as err:
            lwta_elbo_grad(net, x, y, rng=0)
        assert err.value.diagnostics["path"].startswith("layers.0.")

    @pytest.mark.parametrize("labels", [[0, 1, 1, 2, 2], [1, 2, 3, 1, 1], [1.0, 2.0, 1.0, 1.0, 2.0], [1, 2]])
    def test_bad_labels(self, labels):
        net = toy_net()
        x, _ = toy_batch()
        with pytest.raises(DomainError):
            lwta_elbo_grad(net, x, np.array(labels), rng=0)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(tau_gs=0.0), dict(tau_z=-1.0), dict(mc_samples=0),
                                    dict(learning_rate=-1e-3), dict(batch_size=0)])
    def test_invalid(self, kw):
        with pytest.raises(DomainError):
            TrainConfig(**kw)


class TestTrain:
    def data(self):
        x, y = two_arcs(n=60, rng=0)
        return x, y + 1

    def test_zero_learning_rate(self):
        x, y = self.data()
        net = lwta_init(2, 2, blocks=(3,), rng=1)
        res = lwta_train(net, x, y, TrainConfig(learning_rate=0.0, epochs=2, batch_size=16))
        for k, v in net.parameters().items():
            np.testing.assert_array_equal(res.net.parameters()[k], v)

    def test_input_not_modified(self):
        x, y = self.data()
        net = lwta_init(2, 2, blocks=(3,), rng=1)
        before = {k: v.copy() for k, v in net.parameters().items()}
        lwta_train(net, x, y, TrainConfig(epochs=2, batch_size=16))
        for k, v in net.parameters().items():
            np.testing.assert_array_equal(v, before[k])

    def test_deterministic(self):
        x, y = self.data()
        net = lwta_init(2, 2, blocks=(3,), rng=1)
        cfg = TrainConfig(epochs=3, batch_size=16, seed=5)
        a, b = lwta_train(net, x, y, cfg), lwta_train(net, x, y, cfg)
        assert a.trace == b.trace
        c = lwta_train(net, x, y, TrainConfig(epochs=3, batch_size=16, seed=6))
        assert a.trace != c.trace

    def test_trace_length(self):
        x, y = self.data()
        res = lwta_train(lwta_init(2, 2, blocks=(3,), rng=1), x, y, TrainConfig(epochs=3, batch_size=16))
        assert len(res.trace) == 3 * 4

    def test_smoothed_elbo_trends_upward(self):
        x, y = self.data()
        res = lwta_train(lwta_init(2, 2, blocks=(4,), rng=1), x, y, TrainConfig(epochs=100, batch_size=16))
        s = res.smoothed(50)
        assert s[-1] > s[0]
        slope = np.polyfit(np.arange(s.size), s, 1)[0]
        assert slope > 0

    def test_divergence_aborts_with_trace(self, monkeypatch):
        x, y = self.data()
        net = lwta_init(2, 2, blocks=(3,), rng=1)
        calls = []

        def worsening(net, xb, yb, cfg, rng, n_total):
            calls.append(1)
            return -1.0 - 0.5 * len(calls), {k: np.zeros_like(v) for k, v in net.parameters().items()}

        monkeypatch.setattr(lw, "lwta_elbo_grad", worsening)
        with pytest.raises(TrainingDiverged) as err:
            lwta_train(net, x, y, TrainConfig(epochs=100, batch_size=16), window=10)
        assert len(err.value.trace) == len(calls)
        assert np.mean(err.value.trace[-10:]) < 10 * np.mean(err.value.trace[:10])

    def test_empty_dataset(self):
        net = lwta_init(2, 2, blocks=(3,), rng=1)
        with pytest.raises(DomainError):
            lwta_train(net, np.zeros((0, 2)), np.zeros(0, dtype=int))


class TestPrune:
    def net(self):
        net = lwta_init(3, 2, blocks=(4, 3), units=2, rng=0)
        rng = np.random.default_rng(1)
        for layer in net.layers:
            layer.logit[:] = rng.uniform(-8, 8, layer.logit.shape)
        return net

    def test_tiny_tau_prunes_nothing(self):
        pruned, stats = lwta_prune(self.net(), 1e-12)
        assert stats == [1.0, 1.0]
        assert all(l.keep.all() for l in pruned.layers)

    def test_tau_near_one_prunes_everything(self):
        pruned, stats = lwta_prune(self.net(), 1 - 1e-12)
        assert stats == [0.0, 0.0]

    def test_idempotent(self):
        once, s1 = lwta_prune(self.net(), 0.3)
        twice, s2 = lwta_prune(once, 0.3)
        assert s1 == s2
        for a, b in zip(once.layers, twice.layers):
            np.testing.assert_array_equal(a.keep, b.keep)

    def test_rule_and_stats(self):
        net = self.net()
        pruned, stats = lwta_prune(net, 0.2)
        for layer, p, frac in zip(net.layers, pruned.layers, stats):
            np.testing.assert_array_equal(p.keep, layer.utility >= 0.2)
            assert frac == pytest.approx(p.keep.mean())
            assert layer.keep.all()

    @pytest.mark.parametrize("tau", [0.0, 1.0, -0.1, 1.5])
    def test_tau_range(self, tau):
        with pytest.raises(DomainError):
            lwta_prune(self.net(), tau)


class TestBitReport:
    def test_unit_variance_needs_two_bits(self):
        net = lwta_init(3, 2, blocks=(4, 3), units=2, rng=0, init_logvar=0.0)
        rng = np.random.default_rng(1)
        for layer in net.layers:
            layer.mu[:] = rng.uniform(-1, 1, layer.mu.shape)
        net.readout_mu[:] = rng.uniform(-1, 1, net.readout_mu.shape)
        for group in lwta_bit_report(net):
            assert group["bits"].max() <= 2

    def test_vanishing_variance_hits_ceiling(self):
        net = lwta_init(3, 2, blocks=(4,), units=2, rng=0, init_logvar=-200.0)
        for group in lwta_bit_report(net):
            assert np.all(group["bits"] == 23)
        for group in lwta_bit_report(net, max_bits=10):
            assert np.all(group["bits"] == 10)

    def test_sign_invariant(self):
        net = lwta_init(3, 2, blocks=(4, 3), units=2, rng=0, init_logvar=-6.0)
        flipped = net.copy()
        for layer in flipped.layers:
            layer.mu *= -1
        flipped.readout_mu *= -1
        for a, b in zip(lwta_bit_report(net), lwta_bit_report(flipped)):
            np.testing.assert_array_equal(a["bits"], b["bits"])

    def test_criterion_and_minimality(self):
        net = lwta_init(3, 2, blocks=(4,), units=2, rng=3, init_logvar=-8.0)
        report = lwta_bit_report(net)
        mu, half = net.layers[0].mu, 0.5 * np.exp(0.5 * net.layers[0].logvar)
        bits = report[0]["bits"]
        assert np.all(np.abs(lw._quantize(mu, bits) - mu) < half)
        below = np.maximum(bits - 1, 0)
        assert np.all((bits == 0) | (np.abs(lw._quantize(mu, below) - mu) >= half))
        assert report[0]["histogram"].sum() == mu.size
        assert report[0]["mean"] == pytest.approx(bits.mean())
        assert len(report) == 2

    def test_zero_bits_keeps_power_of_two(self):
        x = np.array([0.5, -4.0, 0.75])
        np.testing.assert_array_equal(lw._quantize(x, 0), [0.5, -4.0, 1.0])


class TestSerialization:
    def test_round_trip(self, tmp_path):
        net = toy_net((3, 2))
        net.layers[1].keep[0, 1] = False
        path = tmp_path / "net.npz"
        save_network(net, path)
        back = load_network(path)
        for k, v in net.parameters().items():
            np.testing.assert_array_equal(back.parameters()[k], v)
        for a, b in zip(net.layers, back.layers):
            np.testing.assert_array_equal(a.keep, b.keep)
            assert a.alpha == b.alpha

    def test_bad_version(self, tmp_path):
        net = toy_net()
        path = tmp_path / "net.npz"
        save_network(net, path)
        with np.load(path) as data:
            arrays = dict(data)
        header = json.loads(str(arrays["header"]))
        header["version"] = 99
        arrays["header"] = np.array(json.dumps(header))
        np.savez(path, **arrays)
        with pytest.raises(DomainError, match="version"):
            load_network(path)

    def test_not_a_network(self, tmp_path):
        path = tmp_path / "junk.npz"
        path.write_bytes(b"not a zip archive")
        with pytest.raises(DomainError):
            load_network(path)
        np.savez(tmp_path / "other.npz", a=np.zeros(2))
        with pytest.raises(DomainError):
            load_network(tmp_path / "other.npz")


def mean_accuracy(net, x, y, draws=20):
    return float(np.mean([lwta_accuracy(net, x, y, rng=s) for s in range(draws)]))


@pytest.fixture(scope="module")
def two_arcs_run():
    x, y = two_arcs(n=400, rng=0)
    xt, yt = two_arcs(n=400, rng=1)
    net = lwta_init(2, 2, blocks=(8, 8), units=2, rng=0)
    res = lwta_train(net, x, y + 1, TrainConfig(epochs=300, seed=0))
    return res, xt, yt + 1


@pytest.mark.slow
class TestTwoArcs:
    def test_accuracy_above_90_percent(self, two_arcs_run):
        res, xt, yt = two_arcs_run
        assert mean_accuracy(res.net, xt, yt) > 0.9

    def test_pruning_drop_below_2_percent(self, two_arcs_run):
        res, xt, yt = two_arcs_run
        pruned, _ = lwta_prune(res.net, 0.01)
        assert mean_accuracy(res.net, xt, yt) - mean_accuracy(pruned, xt, yt) < 0.02

    def test_trained_elbo_improves(self, two_arcs_run):
        s = two_arcs_run[0].smoothed(50)
        assert s[-1] > s[0]
