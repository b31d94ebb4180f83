"""Reverse-process samplers: full-schedule, fast, zero-shot denoising, interpolation.

The full and fast samplers share one Gaussian step routine, so a fast
schedule whose etas equal the training betas reproduces the full sampler
bit-for-bit under the same seed. The final reverse step returns the mean
without drawing noise (pass final_noise=True for the literal
noise-at-every-step behavior).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diffusion import q_sample
from .schedule import FastSchedule, VarianceSchedule


@dataclass
class SamplerRun:
    """Reproducibility record for one sampling invocation (embedded in manifests)."""

    mode: str  # "full" | "fast" | "denoise" | "interpolate"
    seed: int
    n_samples: int
    length: int
    steps: int
    conditioner: str = "none"
    extra: dict = field(default_factory=dict)


def _gaussian_step(x, eps_hat, var, cum, tilde, rng, add_noise: bool):
    """One reverse transition x -> mean(x, eps_hat) (+ sqrt(tilde) z).

    var/cum/tilde are (beta_t, alpha_bar_t, beta_tilde_t) for the full
    sampler and (eta_s, gamma_bar_s, eta_tilde_s) for the fast one.
    """
    mu = (x - var / math.sqrt(1.0 - cum) * eps_hat) / math.sqrt(1.0 - var)
    if not add_noise:
        return mu
    return mu + math.sqrt(tilde) * rng.standard_normal(x.shape, dtype=x.dtype)


def _latent(rng, n, length, dtype):
    return rng.standard_normal((n, length), dtype=np.dtype(dtype))


def sample(
    model,
    sched: VarianceSchedule,
    length: int,
    rng: np.random.Generator,
    n_samples: int = 1,
    conditioner=None,
    final_noise: bool = False,
) -> np.ndarray:
    """Full reverse process from white noise; returns [n_samples, length].

    Calls the noise predictor exactly T times. `model` needs only a
    .predict(x, t, conditioner) -> array method, so analytic predictors can
    be injected in place of a trained network.
    """
    x = _latent(rng, n_samples, length, model.dtype)
    for t in range(sched.T, 0, -1):
        eps_hat = model.predict(x, t, conditioner)
        x = _gaussian_step(
            x,
            eps_hat,
            sched.betas[t - 1],
            sched.alpha_bars[t - 1],
            sched.beta_tildes[t - 1],
            rng,
            add_noise=(t > 1 or final_noise),
        )
    return x


def fast_sample(
    model,
    fast: FastSchedule,
    length: int,
    rng: np.random.Generator,
    n_samples: int = 1,
    conditioner=None,
    final_noise: bool = False,
) -> np.ndarray:
    """Short reverse process: T_infer steps, each evaluated at its aligned
    (fractional) training step. The fast schedule must have been built
    against the model's training schedule."""
    x = _latent(rng, n_samples, length, model.dtype)
    for s in range(fast.T_infer, 0, -1):
        eps_hat = model.predict(x, float(fast.aligned_steps[s - 1]), conditioner)
        x = _gaussian_step(
            x,
            eps_hat,
            fast.etas[s - 1],
            fast.gamma_bars[s - 1],
            fast.eta_tildes[s - 1],
            rng,
            add_noise=(s > 1 or final_noise),
        )
    return x


def denoise(
    model,
    sched: VarianceSchedule,
    noisy: np.ndarray,
    t_start: int,
    rng: np.random.Generator,
    conditioner=None,
    final_noise: bool = False,
) -> np.ndarray:
    """Zero-shot denoising: treat the input as x_{t_start} and reverse to x_0."""
    if not 1 <= t_start <= sched.T:
        raise ValueError(f"t_start={t_start} outside 1..{sched.T}")
    noisy = np.asarray(noisy)
    x = np.atleast_2d(noisy).astype(model.dtype)
    for t in range(t_start, 0, -1):
        eps_hat = model.predict(x, t, conditioner)
        x = _gaussian_step(
            x,
            eps_hat,
            sched.betas[t - 1],
            sched.alpha_bars[t - 1],
            sched.beta_tildes[t - 1],
            rng,
            add_noise=(t > 1 or final_noise),
        )
    return x[0] if noisy.ndim == 1 else x


def interpolate(
    model,
    sched: VarianceSchedule,
    x0_a: np.ndarray,
    x0_b: np.ndarray,
    lam: float,
    t_mix: int,
    rng: np.random.Generator,
    conditioner=None,
    shared_noise: bool = False,
    final_noise: bool = False,
) -> np.ndarray:
    """Mix two waveforms in latent space at step t_mix, then reverse to x_0.

    Forward noise is drawn independently for the two endpoints; shared_noise
    uses one draw for both (not a documented behavior of the procedure, just
    an exposed variant).
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda={lam} outside [0, 1]")
    if not 1 <= t_mix <= sched.T:
        raise ValueError(f"t_mix={t_mix} outside 1..{sched.T}")
    x0_a = np.asarray(x0_a)
    x0_b = np.asarray(x0_b)
    if x0_a.shape != x0_b.shape:
        raise ValueError(f"endpoint shapes differ: {x0_a.shape} vs {x0_b.shape}")
    dtype = np.dtype(model.dtype)
    eps_a = rng.standard_normal(x0_a.shape, dtype=dtype)
    eps_b = eps_a if shared_noise else rng.standard_normal(x0_b.shape, dtype=dtype)
    xt_a = q_sample(x0_a.astype(dtype), t_mix, eps_a, sched)
    xt_b = q_sample(x0_b.astype(dtype), t_mix, eps_b, sched)
    mixed = (1.0 - lam) * xt_a + lam * xt_b
    return denoise(
        model, sched, mixed.astype(dtype), t_mix, rng, conditioner, final_noise=final_noise
    )


class FunctionPredictor:
    """Adapt a plain eps(x, t) function to the sampler's model interface."""

    def __init__(self, fn, dtype="float64"):
        self._fn = fn
        self.dtype = np.dtype(dtype)

    def predict(self, x, t, conditioner=None):
        return np.asarray(self._fn(x, t), dtype=x.dtype)
