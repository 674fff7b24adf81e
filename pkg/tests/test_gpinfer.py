import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from sparsebayes._errors import DomainError
from sparsebayes.gpinfer import (
    GpModel,
    admm_fit,
    admm_lagrangian,
    dcp_parts,
    gamma_curve,
    gamma_fit,
    gp_evidence_log,
    gp_predict,
    mm_fit,
    mm_iteration,
    mm_surrogate,
    objective,
    se_fit,
)
from sparsebayes.kernels import (
    GramCache,
    SEKernel,
    SparseSpectrumKernel,
    grid_make,
    kernel_matrix,
)
from sparsebayes.linmodel import LinRegData, LinRegPrior, blr_evidence_log, blr_posterior, blr_predict
from sparsebayes.synthetic import multi_periodic_series, two_tone_series


def small_problem(seed, N=20, Q=4, sigma=0.01, noise=0.3):
    rng = np.random.default_rng(seed)
    t = np.arange(N, dtype=float)
    g = grid_make(Q, sigma=sigma)
    y = np.sin(2 * np.pi * g.means[1] * t + rng.uniform(0, 6)) + noise * rng.standard_normal(N)
    return t, y, g


def random_state(rng, Q):
    return rng.uniform(0.0, 1.0, Q), rng.uniform(0.01, 0.5)


def gaussian_logpdf_oracle(y, C):
    sign, logdet = np.linalg.slogdet(C)
    return -0.5 * (y.size * math.log(2 * math.pi) + logdet + y @ np.linalg.solve(C, y))


class TestEvidence:
    def test_pure_noise_model(self):
        y = np.array([0.3, -1.2, 2.0, 0.1])
        model = GpModel(grid_make(5), 1.0)
        expect = -2 * math.log(2 * math.pi) - 0.5 * float(y @ y)
        assert gp_evidence_log(np.arange(4.0), y, model) == pytest.approx(expect, abs=1e-13)

    @given(st.integers(0, 2**31 - 1), st.integers(1, 8))
    @settings(max_examples=40, deadline=None)
    def test_brute_force_oracle(self, seed, n):
        rng = np.random.default_rng(seed)
        X = rng.uniform(0, 5, (n, 2))
        y = rng.standard_normal(n)
        model = GpModel(SEKernel(rng.uniform(0.2, 3), rng.uniform(0.3, 3)), rng.uniform(0.05, 1))
        C = np.array([[model.kernel.magnitude * math.exp(-np.sum((a - b) ** 2) / (2 * model.kernel.length_scale**2))
                       for b in X] for a in X]) + model.noise_var * np.eye(n)
        assert gp_evidence_log(X, y, model) == pytest.approx(gaussian_logpdf_oracle(y, C), rel=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_feature_space_equivalence(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 6))
        Q = int(rng.integers(1, 3))
        omegas = rng.uniform(0, 0.5, Q)
        s0 = rng.uniform(0.5, 2.0)
        x = rng.uniform(0, 10, n)
        y = rng.standard_normal(n)
        v = rng.uniform(0.1, 1.0)
        Phi = np.column_stack([np.cos(2 * np.pi * np.outer(x, omegas)), np.sin(2 * np.pi * np.outer(x, omegas))])
        prior = LinRegPrior(np.full(2 * Q, Q / s0))
        model = GpModel(SparseSpectrumKernel(s0, omegas), v)
        blr = blr_evidence_log(LinRegData(Phi, y), prior, 1 / v)
        assert gp_evidence_log(x, y, model) == pytest.approx(blr, rel=1e-10)
        post = blr_posterior(LinRegData(Phi, y), prior, 1 / v)
        xs = rng.uniform(0, 10, 3)
        gp = gp_predict(x, y, xs, model)
        for j, xj in enumerate(xs):
            phi = np.concatenate([np.cos(2 * np.pi * omegas * xj), np.sin(2 * np.pi * omegas * xj)])
            m, var = blr_predict(phi, post)
            assert gp.mean[j] == pytest.approx(m, abs=1e-8)
            assert gp.cov[j, j] == pytest.approx(var, abs=1e-8)

    def test_model_validation(self):
        with pytest.raises(DomainError):
            GpModel(SEKernel(1, 1), 0.0)
        with pytest.raises(DomainError):
            gp_evidence_log(np.arange(3.0), np.ones(2), GpModel(SEKernel(1, 1), 1.0))


class TestPredict:
    def test_prior_predictive(self):
        model = GpModel(SEKernel(2.0, 1.0), 0.3)
        xs = np.array([0.0, 0.5, 3.0])
        post = gp_predict(np.zeros(0), np.zeros(0), xs, model)
        np.testing.assert_array_equal(post.mean, 0.0)
        np.testing.assert_allclose(post.cov, kernel_matrix(model.kernel, xs) + 0.3 * np.eye(3))

    def test_single_point_hand_case(self):
        post = gp_predict([0.0], [1.0], [0.0], GpModel(SEKernel(1.0, 1.0), 0.1))
        assert post.mean[0] == pytest.approx(1 / 1.1, abs=1e-14)
        assert post.cov[0, 0] == pytest.approx(1.1 - 1 / 1.1, abs=1e-14)
        assert post.mean[0] == pytest.approx(0.90909, abs=1e-5)
        assert post.cov[0, 0] == pytest.approx(0.19091, abs=1e-5)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_variance_bounds(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.uniform(0, 10, 8)
        y = rng.standard_normal(8)
        model = GpModel(SEKernel(1.5, rng.uniform(0.5, 3)), rng.uniform(0.01, 1))
        xs = rng.uniform(-2, 12, 6)
        post = gp_predict(X, y, xs, model)
        prior_var = np.diag(kernel_matrix(model.kernel, xs)) + model.noise_var
        assert np.all(post.var <= prior_var + 1e-12)
        assert np.all(post.var >= model.noise_var - 1e-10)
        assert np.linalg.norm(post.cov - post.cov.T) <= 1e-12 * np.linalg.norm(post.cov)

    def test_interpolates_as_noise_vanishes(self):
        rng = np.random.default_rng(0)
        X = np.arange(10.0)
        y = rng.standard_normal(10)
        post = gp_predict(X, y, X, GpModel(SEKernel(1.0, 0.5), 1e-8))
        assert np.max(np.abs(post.mean - y)) < 1e-4


class TestDcpPieces:
    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_match_finite_differences(self, seed):
        t, y, g = small_problem(seed, Q=5)
        cache = GramCache(g, t)
        rng = np.random.default_rng(seed)
        alpha, v = random_state(rng, 5)
        eta = np.append(alpha, v)
        _, _, grad_g, grad_h = dcp_parts(cache, y, alpha, v)

        def parts(e):
            g_, h_, _, _ = dcp_parts(cache, y, e[:-1], e[-1])
            return np.array([g_, h_])

        for i in range(eta.size):
            step = 1e-5 * eta[i]
            up, dn = eta.copy(), eta.copy()
            up[i] += step
            dn[i] -= step
            fd = (parts(up) - parts(dn)) / (2 * step)
            assert grad_g[i] == pytest.approx(fd[0], rel=1e-5)
            assert grad_h[i] == pytest.approx(fd[1], rel=1e-5)

    def test_gradient_formulas(self):
        t, y, g = small_problem(1, Q=3)
        cache = GramCache(g, t)
        alpha, v = np.array([0.2, 0.5, 0.1]), 0.1
        C = cache.covariance(alpha, v)
        Ci = np.linalg.inv(C)
        _, _, grad_g, grad_h = dcp_parts(cache, y, alpha, v)
        for i, K in enumerate(cache.Ks):
            assert grad_g[i] == pytest.approx(-y @ Ci @ K @ Ci @ y, rel=1e-9)
            assert grad_h[i] == pytest.approx(-np.trace(Ci @ K), rel=1e-9)
        assert grad_h[-1] == pytest.approx(-np.trace(Ci), rel=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_surrogate_tangent(self, seed):
        t, y, g = small_problem(seed, Q=5)
        cache = GramCache(g, t)
        alpha, v = random_state(np.random.default_rng(seed), 5)
        eta = np.append(alpha, v)
        assert mm_surrogate(cache, y, eta, eta) == pytest.approx(objective(cache, y, alpha, v), rel=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_surrogate_dominates(self, seed):
        t, y, g = small_problem(seed, Q=5)
        cache = GramCache(g, t)
        rng = np.random.default_rng(100 + seed)
        eta_k = np.append(*random_state(rng, 5))
        for _ in range(100):
            eta = np.append(rng.uniform(0, 2, 5), rng.uniform(1e-3, 1.0))
            assert mm_surrogate(cache, y, eta, eta_k) >= objective(cache, y, eta[:-1], eta[-1]) - 1e-10


class TestMM:
    @pytest.mark.parametrize("seed", range(20))
    def test_trace_monotone(self, seed):
        t, y, g = small_problem(seed, N=30, Q=8)
        fit = mm_fit(t, y, g)
        tr = np.asarray(fit.trace.objective)
        assert np.all(np.diff(tr) <= 1e-9 * np.abs(tr[:-1]))
        assert fit.converged

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_single_step_never_increases(self, seed):
        t, y, g = small_problem(seed % 1000, Q=6)
        cache = GramCache(g, t)
        alpha, v = random_state(np.random.default_rng(seed), 6)
        before = objective(cache, y, alpha, v)
        a2, v2, sur = mm_iteration(cache, y, alpha, v)
        assert objective(cache, y, a2, v2) <= before + 1e-9 * abs(before)
        assert np.all(np.diff(sur) <= 1e-9 * np.abs(sur[:-1]))

    def test_two_tone_recovery(self):
        t, y, g = two_tone_series(rng=0)
        t0 = time.perf_counter()
        fit = mm_fit(t, y, g)
        assert time.perf_counter() - t0 < 60
        assert len(fit.active) <= 4
        for b in (7, 23):
            assert set(range(b - 1, b + 2)) & set(fit.active.tolist())

    def test_fixed_noise_is_kept(self):
        t, y, g = small_problem(0)
        fit = mm_fit(t, y, g, noise_var=0.07, fix_noise=True)
        assert fit.noise_var == 0.07

    def test_iteration_cap(self):
        t, y, g = small_problem(0)
        fit = mm_fit(t, y, g, max_iters=2, tol=0.0)
        assert not fit.converged and fit.trace.n_iter == 2

    def test_pruned_weights_are_relative(self):
        t, y, g = two_tone_series(rng=1)
        fit = mm_fit(t, y, g)
        assert np.all(fit.alpha[fit.pruned] <= 1e-6 * fit.alpha.max())
        np.testing.assert_array_equal(fit.kernel.weights[fit.pruned], 0.0)

    def test_bad_init(self):
        t, y, g = small_problem(0)
        with pytest.raises(DomainError):
            mm_fit(t, y, g, init=[1.0, 2.0])
        with pytest.raises(DomainError):
            mm_fit(t, y, g, init=[-1.0, 1, 1, 1])

    def test_deterministic(self):
        t, y, g = small_problem(3)
        a = mm_fit(t, y, g)
        b = mm_fit(t, y, g)
        np.testing.assert_array_equal(a.alpha, b.alpha)
        assert a.trace.objective == b.trace.objective

    def test_iteration_cost_scaling(self):
        def timed(N):
            rng = np.random.default_rng(0)
            t = np.arange(N, dtype=float)
            y = rng.standard_normal(N)
            cache = GramCache(grid_make(2, sigma=1e-3), t)
            alpha, v = np.full(2, 0.5), 0.1
            runs = []
            for _ in range(3):
                t0 = time.perf_counter()
                mm_iteration(cache, y, alpha, v, inner_iters=5, inner_tol=0.0)
                runs.append(time.perf_counter() - t0)
            return min(runs)

        ratio = timed(1200) / timed(600)
        assert 5.0 <= ratio <= 11.0


class TestGamma:
    def test_curve_matches_evidence_difference(self):
        t, y, g = small_problem(2, Q=5)
        cache = GramCache(g, t)
        alpha, v = random_state(np.random.default_rng(5), 5)
        for i in range(5):
            curve = gamma_curve(cache, y, alpha, v, i)
            base = alpha.copy()
            base[i] = 0.0
            l0 = -0.5 * objective(cache, y, base, v)
            for a in (1e-3, 0.1, 0.7, 5.0):
                trial = base.copy()
                trial[i] = a
                assert float(curve(a)) == pytest.approx(-0.5 * objective(cache, y, trial, v) - l0, abs=1e-10)

    def test_orthogonal_subkernel_stays_zero(self):
        rng = np.random.default_rng(0)
        y = rng.standard_normal(6)
        u = rng.standard_normal(6)
        u -= (u @ y) / (y @ y) * y
        Ks = np.stack([np.outer(y, y), np.outer(u, u)])
        fit = gamma_fit(None, y, noise_var=0.5, cache=GramCache.from_matrices(Ks))
        assert fit.alpha[1] == 0.0
        assert fit.alpha[0] > 0.0

    def test_one_sweep_matches_grid_oracle(self):
        t, y, _ = small_problem(4)
        g = grid_make(1, (0.125, 0.2), sigma=0.01)
        cache = GramCache(g, t)
        v = 0.09
        fit = gamma_fit(t, y, g, noise_var=v, max_sweeps=1)

        def neg_evidence(a):
            return -gp_evidence_log(t, y, GpModel(g.with_weights([a]), v))

        grid = np.exp(np.linspace(math.log(1e-6), math.log(1e3), 4001))
        k = int(np.argmin([neg_evidence(a) for a in grid]))
        res = optimize.minimize_scalar(neg_evidence, bounds=(grid[k - 1], grid[k + 1]), method="bounded",
                                       options={"xatol": 1e-12})
        assert fit.alpha[0] == pytest.approx(res.x, rel=1e-4)
        assert cache.n == t.size

    @pytest.mark.parametrize("seed", range(4))
    def test_evidence_non_decreasing(self, seed):
        t, y, g = small_problem(seed, N=30, Q=8)
        fit = gamma_fit(t, y, g, noise_var=0.09)
        tr = np.asarray(fit.trace.objective)
        assert np.all(np.diff(tr) <= 1e-9 * np.abs(tr[:-1]))
        assert fit.converged

    def test_two_tone_weight_concentration(self):
        t, y, g = two_tone_series(noise=0.1, rng=2)
        fit = gamma_fit(t, y, g, noise_var=0.01)
        near = [i for b in (7, 23) for i in range(b - 1, b + 2)]
        assert fit.alpha[near].sum() > 0.95 * fit.alpha.sum()

    def test_requires_noise(self):
        t, y, g = small_problem(0)
        with pytest.raises(DomainError):
            gamma_fit(t, y, g)


class TestAdmm:
    def test_feasible_point_objective(self):
        t, y, g = small_problem(1)
        cache = GramCache(g, t)
        alpha, v = np.array([0.1, 0.4, 0.0, 0.2]), 0.05
        S = np.linalg.inv(cache.covariance(alpha, v))
        val = admm_lagrangian(cache, y, S, alpha, v, np.zeros((t.size, t.size)), rho=3.0)
        assert val == pytest.approx(objective(cache, y, alpha, v), rel=1e-10)

    @pytest.mark.parametrize("seed", range(4))
    def test_agrees_with_mm_and_gamma_fixed_noise(self, seed):
        t, y, g = small_problem(seed, N=16, Q=8)
        a = mm_fit(t, y, g, noise_var=0.09, fix_noise=True, max_iters=5000, tol=1e-13)
        b = gamma_fit(t, y, g, noise_var=0.09)
        c = admm_fit(t, y, g, noise_var=0.09, fix_noise=True)
        assert c.converged
        assert c.trace.info["primal_residual"] < 1e-6
        for other in (b, c):
            assert other.evidence == pytest.approx(a.evidence, rel=1e-3)

    @pytest.mark.parametrize("seed", range(3))
    def test_agrees_with_mm_learned_noise(self, seed):
        t, y, g = small_problem(seed)
        a = mm_fit(t, y, g, max_iters=5000, tol=1e-13)
        c = admm_fit(t, y, g)
        assert c.converged
        assert c.evidence == pytest.approx(a.evidence, rel=1e-3)
        assert c.noise_var == pytest.approx(a.noise_var, rel=1e-2)

    def test_cap_reports_residuals(self):
        t, y, g = small_problem(0)
        fit = admm_fit(t, y, g, max_iters=3)
        assert not fit.converged
        assert fit.trace.info["primal_residual"] > 0


class TestBaseline:
    def test_gridsm_beats_se_on_periodic_series(self):
        t, y = multi_periodic_series(rng=0)
        tr, te = slice(0, t.size - 20), slice(t.size - 20, None)
        fit = mm_fit(t[tr], y[tr], grid_make(100, sigma=1e-3))
        grid_mse = np.mean((gp_predict(t[tr], y[tr], t[te], fit.model).mean - y[te]) ** 2)
        se = se_fit(t[tr], y[tr])
        se_mse = np.mean((gp_predict(t[tr], y[tr], t[te], se).mean - y[te]) ** 2)
        assert grid_mse <= 0.7 * se_mse
