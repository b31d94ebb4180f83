"""Waveform diffusion engine.

End-to-end pieces: variance schedules with fast-sampling alignment, the
closed-form diffusion math, a dilated-convolution noise predictor on a
self-contained autograd substrate, full/fast samplers with denoising and
latent interpolation, audio plumbing, and generative evaluation metrics.
"""

from .audio import CorpusSpec, MelSpectrogram, Waveform
from .diffusion import (
    ElboTerms,
    ReverseStepParams,
    elbo_closed_form,
    elbo_monte_carlo,
    q_posterior,
    q_sample,
    reverse_step_params,
    simulate_diffusion_chain,
    unweighted_loss,
)
from .model import ModelConfig, NoisePredictor, receptive_field, step_embedding
from .sampler import denoise, fast_sample, interpolate, sample
from .schedule import (
    FastSchedule,
    VarianceSchedule,
    align_diffusion_step,
    build_fast_schedule,
    build_linear_schedule,
)
from .trainer import Adam, TrainConfig, fit, train_step

__version__ = "0.1.0"
