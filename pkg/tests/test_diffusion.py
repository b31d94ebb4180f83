import numpy as np
import pytest

from wavediff.diffusion import (
    elbo_closed_form,
    elbo_kappas,
    elbo_monte_carlo,
    gaussian_optimal_predictor,
    q_posterior,
    q_sample,
    reverse_step_params,
    simulate_diffusion_chain,
    unweighted_loss,
)
from wavediff.schedule import VarianceSchedule, build_linear_schedule


class TestQSample:
    def test_zero_noise(self, sched4):
        x0 = np.array([0.5, -0.25])
        out = q_sample(x0, 3, np.zeros(2), sched4)
        np.testing.assert_allclose(out, np.sqrt(0.504) * x0)

    def test_hand_value_t2(self, sched4):
        out = q_sample(np.array([1.0]), 2, np.array([1.0]), sched4)
        assert out[0] == pytest.approx(np.sqrt(0.72) + np.sqrt(0.28), abs=1e-12)
        assert out[0] == pytest.approx(1.3776784, abs=1e-6)

    def test_deep_step_is_mostly_noise(self):
        s = build_linear_schedule(200, 1e-4, 0.02)
        # alpha_bar_200 ~ 0.132, so the signal coefficient is sqrt(0.132) ~ 0.36
        coef = np.sqrt(s.alpha_bars[-1])
        x0 = np.full(8, 0.9)
        eps = np.ones(8)
        out = q_sample(x0, 200, eps, s)
        np.testing.assert_allclose(out, coef * x0 + np.sqrt(1 - coef**2) * eps)

    def test_per_example_steps(self, sched4):
        x0 = np.ones((3, 2))
        eps = np.zeros((3, 2))
        out = q_sample(x0, np.array([1, 2, 4]), eps, sched4)
        np.testing.assert_allclose(out[:, 0], np.sqrt([0.9, 0.72, 0.3024]))

    def test_errors(self, sched4):
        with pytest.raises(ValueError):
            q_sample(np.ones(3), 2, np.ones(4), sched4)
        with pytest.raises(ValueError):
            q_sample(np.ones(3), 5, np.ones(3), sched4)

    def test_preserves_dtype(self, sched4):
        out = q_sample(np.ones(4, np.float32), np.array([1, 2, 3, 4]), np.ones(4, np.float32), sched4)
        assert out.dtype == np.float32


class TestQPosterior:
    def test_hand_value_t2(self, sched4):
        mean, var = q_posterior(np.array([1.0]), np.array([1.0]), 2, sched4)
        expected = (np.sqrt(0.9) * 0.2 + np.sqrt(0.8) * 0.1) / 0.28
        assert mean[0] == pytest.approx(expected, abs=1e-12)
        assert mean[0] == pytest.approx(0.9970692, abs=1e-6)
        assert var == pytest.approx(0.0714286, abs=1e-7)

    def test_zero_linearity(self, sched4):
        mean, _ = q_posterior(np.zeros(5), np.zeros(5), 3, sched4)
        np.testing.assert_array_equal(mean, np.zeros(5))

    def test_noise_free_consistency(self, sched4):
        """Feeding x_t = sqrt(abar_t) x0 yields mean sqrt(abar_{t-1}) x0."""
        rng = np.random.default_rng(1)
        x0 = rng.standard_normal(16)
        for t in range(2, 5):
            xt = np.sqrt(sched4.alpha_bars[t - 1]) * x0
            mean, _ = q_posterior(x0, xt, t, sched4)
            np.testing.assert_allclose(mean, np.sqrt(sched4.alpha_bars[t - 2]) * x0, rtol=1e-12)

    def test_t1_convention(self, sched4):
        mean, var = q_posterior(np.array([0.7]), np.array([123.0]), 1, sched4)
        # with abar_0 = 1 the x_t coefficient vanishes and the mean is x0
        assert mean[0] == pytest.approx(0.7)
        assert var == pytest.approx(0.1)

    def test_errors(self, sched4):
        with pytest.raises(ValueError):
            q_posterior(np.ones(2), np.ones(3), 2, sched4)
        with pytest.raises(ValueError):
            q_posterior(np.ones(2), np.ones(2), 0, sched4)


class TestReverseStepParams:
    def test_zero_prediction(self, sched4):
        xt = np.array([2.0, -1.0])
        p = reverse_step_params(xt, 3, np.zeros(2), sched4)
        np.testing.assert_allclose(p.mu, xt / np.sqrt(0.7))

    def test_hand_value_t2(self, sched4):
        xt = np.array([np.sqrt(0.72) + np.sqrt(0.28)])
        p = reverse_step_params(xt, 2, np.array([1.0]), sched4)
        expected = (xt[0] - 0.2 / np.sqrt(0.28)) / np.sqrt(0.8)
        assert p.mu[0] == pytest.approx(expected, abs=1e-12)
        assert p.mu[0] == pytest.approx(1.117714, abs=1e-6)
        assert p.sigma == pytest.approx(np.sqrt(sched4.beta_tildes[1]))

    def test_sigma_t1_is_sqrt_beta1(self, sched4):
        p = reverse_step_params(np.ones(2), 1, np.zeros(2), sched4)
        assert p.sigma == pytest.approx(np.sqrt(0.1))

    def test_step_out_of_range(self, sched4):
        with pytest.raises(ValueError):
            reverse_step_params(np.ones(2), 9, np.ones(2), sched4)


class TestUnweightedLoss:
    def test_perfect_prediction(self):
        eps = np.random.default_rng(0).standard_normal((4, 8))
        assert unweighted_loss(eps, eps) == 0.0

    def test_direct_norm(self):
        assert unweighted_loss(np.array([[1.0, 1.0]]), np.array([[0.0, 0.0]])) == 2.0

    def test_batch_mean(self):
        eps = np.array([[1.0, 1.0, 0.0], [2.0, 0.0, 0.0]])
        assert unweighted_loss(eps, np.zeros_like(eps)) == pytest.approx(3.0)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            unweighted_loss(np.empty((0, 4)), np.empty((0, 4)))


class TestElbo:
    def test_kappa_values(self, sched4):
        kappas = elbo_kappas(sched4)
        assert kappas[0] == pytest.approx(1.0 / (2 * 0.9))
        assert kappas[1] == pytest.approx(0.2 / (2 * 0.8 * (1 - 0.9)))

    def test_perfect_predictor_total_is_c(self):
        """With x0 = 0 the noise is exactly recoverable from x_t, so every
        per-step expectation vanishes and the total reduces to the constant."""
        sched = build_linear_schedule(3, 0.2, 0.5)

        def perfect(xt, t):
            return xt / np.sqrt(1.0 - sched.alpha_bars[t - 1])

        def zeros(rng, n):
            return np.zeros((n, 2))

        terms = elbo_closed_form(perfect, zeros, sched, 500, np.random.default_rng(0))
        np.testing.assert_allclose(terms.per_step_expectations, 0.0, atol=1e-12)
        assert terms.total_neg_elbo == pytest.approx(terms.const_c)

        est, se = elbo_monte_carlo(perfect, zeros, sched, 2000, np.random.default_rng(1))
        assert abs(est - terms.const_c) < 3 * se + 1e-9

    def test_closed_form_matches_monte_carlo(self):
        sched = build_linear_schedule(3, 0.2, 0.5)
        A = np.array([[0.7, -0.2], [0.1, 0.4]])
        c = np.array([0.05, -0.1])

        def model(x, t):
            return x @ A.T + c

        def sample_x0(rng, n):
            return np.array([0.3, -0.5]) + 0.8 * rng.standard_normal((n, 2))

        terms = elbo_closed_form(model, sample_x0, sched, 30_000, np.random.default_rng(11))
        est, se = elbo_monte_carlo(model, sample_x0, sched, 30_000, np.random.default_rng(17))
        assert abs(terms.total_neg_elbo - est) < 3 * np.hypot(se, terms.total_stderr)

    def test_stderr_scales_as_inverse_sqrt_n(self):
        sched = build_linear_schedule(3, 0.2, 0.5)

        def model(x, t):
            return 0.5 * x

        def sample_x0(rng, n):
            return rng.standard_normal((n, 2))

        _, se1 = elbo_monte_carlo(model, sample_x0, sched, 10_000, np.random.default_rng(3))
        _, se2 = elbo_monte_carlo(model, sample_x0, sched, 40_000, np.random.default_rng(4))
        assert se1 / se2 == pytest.approx(2.0, rel=0.2)

    def test_monte_carlo_rejects_degenerate_schedule(self):
        degenerate = VarianceSchedule(
            betas=np.array([0.1, 0.2]),
            alphas=np.array([0.9, 0.8]),
            alpha_bars=np.array([0.9, 0.72]),
            beta_tildes=np.array([0.0, 0.07]),
        )
        with pytest.raises(ValueError):
            elbo_monte_carlo(lambda x, t: x, lambda rng, n: np.zeros((n, 2)), degenerate, 200, np.random.default_rng(0))

    def test_empty_dataset(self, sched4):
        with pytest.raises(ValueError):
            elbo_closed_form(lambda x, t: x, lambda rng, n: np.empty((n, 0)), sched4, 10, np.random.default_rng(0))


class TestSimulateDiffusionChain:
    def test_marginals_match_closed_form(self):
        """Empirical mean and variance of the explicit chain vs q(x_t | x_0)."""
        sched = build_linear_schedule(20, 1e-3, 0.2)
        n, L = 20_000, 4
        x0 = np.tile(np.array([0.8, -0.5, 0.2, 0.0]), (n, 1))
        traj = simulate_diffusion_chain(x0, sched, np.random.default_rng(5))
        for t in (1, 10, 20):
            xt = traj[t - 1]
            abar = sched.alpha_bars[t - 1]
            mean_se = np.sqrt((1 - abar) / n)
            var_se = (1 - abar) * np.sqrt(2.0 / (n - 1))
            np.testing.assert_allclose(xt.mean(0), np.sqrt(abar) * x0[0], atol=4 * mean_se)
            np.testing.assert_allclose(xt.var(0, ddof=1), 1 - abar, atol=4 * var_se + 1e-12)

    def test_zero_beta_is_identity(self):
        degenerate = VarianceSchedule(
            betas=np.zeros(3),
            alphas=np.ones(3),
            alpha_bars=np.ones(3),
            beta_tildes=np.zeros(3),
        )
        x0 = np.array([0.3, -0.7])
        traj = simulate_diffusion_chain(x0, degenerate, np.random.default_rng(0))
        for step in traj:
            np.testing.assert_array_equal(step, x0)


def test_gaussian_optimal_predictor_formula(sched4):
    pred = gaussian_optimal_predictor(sched4)
    xt = np.array([[1.0, -2.0]])
    np.testing.assert_allclose(pred(xt, 2), np.sqrt(1 - 0.72) * xt)


def test_gaussian_optimal_predictor_beats_other_linear_maps(sched4):
    """Among predictors c * x_t on N(0, I) data, c = sqrt(1 - abar_t) minimizes
    the residual; empirical losses on a common sample confirm the ordering."""
    rng = np.random.default_rng(8)
    n, L, t = 60_000, 4, 3
    x0 = rng.standard_normal((n, L))
    eps = rng.standard_normal((n, L))
    xt = q_sample(x0, t, eps, sched4)
    best_c = np.sqrt(1 - sched4.alpha_bars[t - 1])

    def loss(c):
        return np.mean(np.sum((eps - c * xt) ** 2, axis=1))

    optimum = loss(best_c)
    assert optimum == pytest.approx(L * sched4.alpha_bars[t - 1], rel=0.02)
    for c in (0.0, 0.5 * best_c, 1.2 * best_c, 1.0):
        if abs(c - best_c) > 1e-6:
            assert loss(c) > optimum
