"""Closed-form diffusion mathematics.

Forward sampling, the true posterior, the reverse-step parameterization, the
unweighted training loss, and two routes to the negative ELBO: the per-step
closed form and a direct Monte-Carlo trajectory estimator kept as an
independent cross-check.

All functions operate on plain float arrays (a waveform batch is [B, L], a
single waveform [L]) and are pure given an explicit RNG handle. Step indices
t are 1-based and may be a scalar or a per-example integer array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import VarianceSchedule


@dataclass
class ReverseStepParams:
    """Mean and (fixed) standard deviation of one reverse-process step."""

    mu: np.ndarray
    sigma: float


@dataclass
class ElboTerms:
    """Negative ELBO assembled from its closed-form pieces.

    total_neg_elbo = const_c + sum_t kappas[t-1] * per_step_expectations[t-1].
    The expectations are Monte-Carlo estimates; total_stderr propagates their
    standard errors (and the one in the prior term of const_c).
    """

    const_c: float
    kappas: np.ndarray
    per_step_expectations: np.ndarray
    total_neg_elbo: float
    total_stderr: float


def _coef(values: np.ndarray, t, like: np.ndarray):
    """Schedule constant(s) at step(s) t, shaped to broadcast against `like`."""
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > len(values)):
        raise ValueError(f"step t={t} outside 1..{len(values)}")
    picked = values[t - 1]
    if picked.ndim == 0:
        return float(picked)
    return picked.reshape(picked.shape + (1,) * (like.ndim - picked.ndim))


def q_sample(x0: np.ndarray, t, eps: np.ndarray, sched: VarianceSchedule) -> np.ndarray:
    """Draw from q(x_t | x_0) given the noise: sqrt(abar_t) x0 + sqrt(1-abar_t) eps."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    abar = _coef(sched.alpha_bars, t, x0)
    out = np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps
    return out.astype(x0.dtype, copy=False)


def q_posterior(
    x0: np.ndarray, xt: np.ndarray, t: int, sched: VarianceSchedule
) -> tuple[np.ndarray, float]:
    """Mean and variance of the true posterior q(x_{t-1} | x_t, x_0).

    t=1 is allowed under the alpha_bar_0 := 1 convention; the returned
    variance is beta_tilde_t (beta_tilde_1 = beta_1 by definition).
    """
    x0 = np.asarray(x0)
    xt = np.asarray(xt)
    if x0.shape != xt.shape:
        raise ValueError(f"x0 shape {x0.shape} != xt shape {xt.shape}")
    t = int(t)
    if not 1 <= t <= sched.T:
        raise ValueError(f"step t={t} outside 1..{sched.T}")
    abar_prev = 1.0 if t == 1 else sched.alpha_bars[t - 2]
    abar = sched.alpha_bars[t - 1]
    beta = sched.betas[t - 1]
    alpha = sched.alphas[t - 1]
    coef0 = np.sqrt(abar_prev) * beta / (1.0 - abar)
    coeft = np.sqrt(alpha) * (1.0 - abar_prev) / (1.0 - abar)
    return coef0 * x0 + coeft * xt, float(sched.beta_tildes[t - 1])


def reverse_step_params(
    xt: np.ndarray, t: int, eps_pred: np.ndarray, sched: VarianceSchedule
) -> ReverseStepParams:
    """Reverse-step mean from the noise prediction, with fixed sigma = sqrt(beta_tilde_t)."""
    xt = np.asarray(xt)
    eps_pred = np.asarray(eps_pred)
    if xt.shape != eps_pred.shape:
        raise ValueError(f"xt shape {xt.shape} != eps_pred shape {eps_pred.shape}")
    t = int(t)
    if not 1 <= t <= sched.T:
        raise ValueError(f"step t={t} outside 1..{sched.T}")
    alpha = sched.alphas[t - 1]
    beta = sched.betas[t - 1]
    abar = sched.alpha_bars[t - 1]
    mu = (xt - beta / np.sqrt(1.0 - abar) * eps_pred) / np.sqrt(alpha)
    return ReverseStepParams(mu, float(np.sqrt(sched.beta_tildes[t - 1])))


def unweighted_loss(eps: np.ndarray, eps_pred: np.ndarray) -> float:
    """Per-example squared L2 norm of the residual, averaged over the batch."""
    eps = np.atleast_2d(np.asarray(eps))
    eps_pred = np.atleast_2d(np.asarray(eps_pred))
    if eps.shape != eps_pred.shape:
        raise ValueError(f"shape mismatch {eps.shape} vs {eps_pred.shape}")
    if eps.shape[0] == 0:
        raise ValueError("empty batch")
    diff = eps - eps_pred
    return float(np.mean(np.sum(diff.reshape(diff.shape[0], -1) ** 2, axis=1)))


def gaussian_optimal_predictor(sched: VarianceSchedule):
    """The analytic loss-minimizing predictor for standard-normal data.

    For q_data = N(0, I) the conditional expectation of the injected noise
    given x_t is sqrt(1-abar_t) * x_t; useful as an exact oracle for sampler
    and trainer tests.
    """

    def predict(xt: np.ndarray, t) -> np.ndarray:
        xt = np.asarray(xt)
        abar = _coef(sched.alpha_bars, np.asarray(t, dtype=np.int64), xt)
        return np.sqrt(1.0 - abar) * xt

    return predict


def elbo_kappas(sched: VarianceSchedule) -> np.ndarray:
    """Per-step weights of the closed-form negative ELBO."""
    kappas = np.empty(sched.T, dtype=np.float64)
    kappas[0] = 1.0 / (2.0 * sched.alphas[0])
    if sched.T > 1:
        kappas[1:] = sched.betas[1:] / (2.0 * sched.alphas[1:] * (1.0 - sched.alpha_bars[:-1]))
    return kappas


def elbo_closed_form(
    model, sample_x0, sched: VarianceSchedule, n_outer: int, rng: np.random.Generator
) -> ElboTerms:
    """Negative ELBO via the per-step KL expansion.

    `model(xt, t)` predicts the injected noise; `sample_x0(rng, n)` draws a
    data batch [n, L]. The kappa weights and the constant are closed-form;
    the per-step residual expectations are estimated with n_outer draws each.
    """
    if n_outer < 1:
        raise ValueError("n_outer must be at least 1")
    probe = np.atleast_2d(sample_x0(rng, 1))
    if probe.shape[0] == 0 or probe.size == 0:
        raise ValueError("empty dataset")
    d = probe.shape[1]
    kappas = elbo_kappas(sched)

    expectations = np.empty(sched.T)
    stderrs = np.empty(sched.T)
    for t in range(1, sched.T + 1):
        x0 = np.atleast_2d(sample_x0(rng, n_outer))
        eps = rng.standard_normal(x0.shape)
        xt = q_sample(x0, t, eps, sched)
        residual = np.sum((eps - model(xt, t)) ** 2, axis=1)
        expectations[t - 1] = residual.mean()
        stderrs[t - 1] = residual.std(ddof=1) / np.sqrt(n_outer) if n_outer > 1 else 0.0

    x0 = np.atleast_2d(sample_x0(rng, n_outer))
    sq_norms = np.sum(x0**2, axis=1)
    abar_T = sched.alpha_bars[-1]
    beta_1 = sched.betas[0]
    const_c = (
        abar_T / 2.0 * sq_norms.mean()
        - d / 2.0 * (abar_T + np.log(1.0 - abar_T))
        + d / 2.0 * np.log(2.0 * np.pi * beta_1)
    )
    c_stderr = abar_T / 2.0 * (sq_norms.std(ddof=1) / np.sqrt(n_outer) if n_outer > 1 else 0.0)

    total = const_c + float(np.dot(kappas, expectations))
    total_stderr = float(np.sqrt(c_stderr**2 + np.sum((kappas * stderrs) ** 2)))
    return ElboTerms(float(const_c), kappas, expectations, float(total), total_stderr)


def elbo_monte_carlo(
    model, sample_x0, sched: VarianceSchedule, n: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Direct trajectory estimator of the negative ELBO (cross-check oracle).

    Samples full forward trajectories and averages the log density ratio of
    the reverse and forward chains. Unbiased; returns (estimate, stderr).
    """
    if n < 100:
        raise ValueError("n must be at least 100")
    if np.any(sched.beta_tildes <= 0.0):
        raise ValueError("degenerate schedule: beta_tilde must be positive")
    x_prev = np.atleast_2d(sample_x0(rng, n))
    d = x_prev.shape[1]
    log_ratio = np.zeros(n)
    for t in range(1, sched.T + 1):
        alpha = sched.alphas[t - 1]
        beta = sched.betas[t - 1]
        btilde = sched.beta_tildes[t - 1]
        eps = rng.standard_normal(x_prev.shape)
        xt = np.sqrt(alpha) * x_prev + np.sqrt(beta) * eps
        # log q(x_t | x_{t-1}); the quadratic form reduces to |eps|^2 / 2
        log_q = -d / 2.0 * np.log(2.0 * np.pi * beta) - np.sum(eps**2, axis=1) / 2.0
        mu = (xt - beta / np.sqrt(1.0 - sched.alpha_bars[t - 1]) * model(xt, t)) / np.sqrt(alpha)
        log_p = -d / 2.0 * np.log(2.0 * np.pi * btilde) - np.sum(
            (x_prev - mu) ** 2, axis=1
        ) / (2.0 * btilde)
        log_ratio += log_p - log_q
        x_prev = xt
    log_ratio += -d / 2.0 * np.log(2.0 * np.pi) - np.sum(x_prev**2, axis=1) / 2.0
    neg_elbo = -log_ratio
    return float(neg_elbo.mean()), float(neg_elbo.std(ddof=1) / np.sqrt(n))


def simulate_diffusion_chain(
    x0: np.ndarray, sched: VarianceSchedule, rng: np.random.Generator
) -> np.ndarray:
    """Run the forward Markov chain explicitly; returns the trajectory [T, ...].

    Oracle for checking the closed-form marginals of q_sample. x0 may be a
    single waveform [L] or a batch [B, L] of independent chains.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    out = np.empty((sched.T,) + x0.shape)
    x = x0
    for t in range(1, sched.T + 1):
        eps = rng.standard_normal(x.shape)
        x = np.sqrt(sched.alphas[t - 1]) * x + np.sqrt(sched.betas[t - 1]) * eps
        out[t - 1] = x
    return out
