"""Variance schedules for the forward process and user-defined fast-sampling schedules.

A training schedule fixes the per-step noise variances beta_1..beta_T and all
constants derived from them. A fast schedule is a short user-chosen variance
sequence eta_1..eta_S whose cumulative noise levels are mapped back onto
(fractional) training steps, so a model trained with T steps can be sampled
with S << T steps.

Schedules are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ScheduleAlignmentWarning


@dataclass(frozen=True)
class VarianceSchedule:
    """Training-time variance schedule with derived constants.

    betas[t-1] is beta_t for t = 1..T. alphas = 1 - betas, alpha_bars is the
    cumulative product of alphas, and beta_tildes are the posterior variances
    (beta_tilde_1 = beta_1).
    """

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    beta_tildes: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    def __post_init__(self):
        for arr in (self.betas, self.alphas, self.alpha_bars, self.beta_tildes):
            arr.setflags(write=False)


@dataclass(frozen=True)
class FastSchedule:
    """Inference-time schedule with noise levels aligned onto training steps.

    aligned_steps[s-1] is the fractional training step at which the noise
    predictor is evaluated during fast-sampling step s.
    """

    etas: np.ndarray
    gammas: np.ndarray
    gamma_bars: np.ndarray
    eta_tildes: np.ndarray
    aligned_steps: np.ndarray

    @property
    def T_infer(self) -> int:
        return len(self.etas)

    def __post_init__(self):
        for arr in (self.etas, self.gammas, self.gamma_bars, self.eta_tildes, self.aligned_steps):
            arr.setflags(write=False)


def _derive(betas: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    tildes = np.empty_like(betas)
    tildes[0] = betas[0]
    if len(betas) > 1:
        tildes[1:] = (1.0 - alpha_bars[:-1]) / (1.0 - alpha_bars[1:]) * betas[1:]
    return alphas, alpha_bars, tildes


def schedule_from_betas(betas) -> VarianceSchedule:
    """Build a schedule from an explicit beta sequence, validating its range."""
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or len(betas) == 0:
        raise ValueError("betas must be a nonempty 1-D sequence")
    if np.any(betas <= 0.0) or np.any(betas >= 1.0):
        raise ValueError("every beta must lie strictly in (0, 1)")
    return VarianceSchedule(betas, *_derive(betas))


def build_linear_schedule(T: int, beta_start: float, beta_end: float) -> VarianceSchedule:
    """Linearly spaced betas from beta_start (t=1) to beta_end (t=T), inclusive."""
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    if not (0.0 < beta_start < 1.0) or not (0.0 < beta_end < 1.0):
        raise ValueError("beta_start and beta_end must lie strictly in (0, 1)")
    if beta_start > beta_end:
        raise ValueError(f"beta_start ({beta_start}) must not exceed beta_end ({beta_end})")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    return VarianceSchedule(betas, *_derive(betas))


def align_diffusion_step(gamma_bar_s: float, schedule: VarianceSchedule) -> float:
    """Map a cumulative noise level onto a fractional training step.

    Interpolates sqrt(gamma_bar_s) between consecutive training levels
    sqrt(alpha_bar_{t+1}) <= sqrt(gamma_bar_s) <= sqrt(alpha_bar_t), with
    alpha_bar_0 := 1 closing the segment nearest to clean data. Levels above
    sqrt(alpha_bar_1) or below sqrt(alpha_bar_T) fall outside the training
    range; they are clamped (to the boundary segment, or to T) with a
    ScheduleAlignmentWarning.
    """
    level = float(np.sqrt(gamma_bar_s))
    # grid[t] = sqrt(alpha_bar_t) for t = 0..T, with alpha_bar_0 = 1
    grid = np.concatenate(([1.0], np.sqrt(schedule.alpha_bars)))
    T = schedule.T
    if level < grid[T]:
        warnings.warn(
            f"noise level sqrt(gamma_bar)={level:.6g} is below the deepest training "
            f"level {grid[T]:.6g}; clamping aligned step to T={T}",
            ScheduleAlignmentWarning,
            stacklevel=2,
        )
        return float(T)
    if T >= 1 and level > grid[1]:
        warnings.warn(
            f"noise level sqrt(gamma_bar)={level:.6g} is above the shallowest training "
            f"level {grid[1]:.6g}; interpolating in the boundary segment with alpha_bar_0=1",
            ScheduleAlignmentWarning,
            stacklevel=2,
        )
    # smallest index with grid[idx] <= level (grid is strictly decreasing)
    idx = int(np.searchsorted(-grid, -level, side="left"))
    if grid[idx] == level:
        return float(idx)
    t = idx - 1
    return t + (grid[t] - level) / (grid[t] - grid[t + 1])


def build_fast_schedule(etas, training: VarianceSchedule) -> FastSchedule:
    """Derive fast-sampling constants and aligned steps for a user eta sequence."""
    etas = np.asarray(etas, dtype=np.float64)
    if etas.ndim != 1 or len(etas) == 0:
        raise ValueError("etas must be a nonempty 1-D sequence")
    if np.any(etas <= 0.0) or np.any(etas >= 1.0):
        raise ValueError("every eta must lie strictly in (0, 1)")
    gammas, gamma_bars, eta_tildes = _derive(etas)
    aligned = np.array(
        [align_diffusion_step(gb, training) for gb in gamma_bars], dtype=np.float64
    )
    return FastSchedule(etas, gammas, gamma_bars, eta_tildes, aligned)


def default_fast_etas(T: int) -> list[float]:
    """Shipped fast schedules: six steps, last eta 0.7 for large-T models, 0.5 for T<=50."""
    if T <= 50:
        return [0.0001, 0.001, 0.01, 0.05, 0.2, 0.5]
    return [0.0001, 0.001, 0.01, 0.05, 0.2, 0.7]
