"""Training loop: per-step noise regression with Adam, checkpoints, loss logging.

Every source of randomness in a run flows from one seeded generator, and the
generator's state is serialized into checkpoints, so resuming from step s
replays the exact loss sequence of an uninterrupted run.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import audio
from .diffusion import q_sample
from .errors import NumericError
from .model import ModelConfig, NoisePredictor
from .numerics import ops
from .numerics.tensor import ParamStore, Tensor, backward
from .schedule import VarianceSchedule, build_linear_schedule
from .serialization import Checkpoint, atomic_write_bytes, save_checkpoint


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    batch_size: int = 16
    max_steps: int = 1000
    seed: int = 0
    precision: str = "float32"
    checkpoint_interval: int = 1000
    crop_len: int = 16000

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.max_steps < 0:
            raise ValueError("learning_rate, batch_size, max_steps must be nonnegative")
        if self.crop_len < 1 or self.checkpoint_interval < 0:
            raise ValueError("crop_len must be positive, checkpoint_interval nonnegative")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")


class Adam:
    """Bias-corrected first/second-moment optimizer (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params: ParamStore, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def moment_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name in self.params.names():
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_moments(self, moments: dict[str, np.ndarray], step: int) -> None:
        for name in self.params.names():
            self.m[name][...] = moments[f"m.{name}"]
            self.v[name][...] = moments[f"v.{name}"]
        self.t = step


def limit_blas_threads(n: int) -> None:
    """Cap BLAS pool size when threadpoolctl is available (no-op otherwise).

    On small shared VMs the thread wake/sync overhead of multi-threaded BLAS
    exceeds its benefit for this model's skinny GEMMs; one thread is ~1.5x
    faster there.
    """
    try:
        import threadpoolctl
    except ImportError:
        return
    threadpoolctl.threadpool_limits(limits=n, user_api="blas")


def rng_state_bytes(rng: np.random.Generator) -> bytes:
    return json.dumps(rng.bit_generator.state).encode("utf-8")


def rng_from_state(blob: bytes) -> np.random.Generator:
    state = json.loads(blob.decode("utf-8"))
    bit_gen = getattr(np.random, state["bit_generator"])()
    bit_gen.state = state
    return np.random.Generator(bit_gen)


def canonical_config_text(
    model_config: ModelConfig, precision: str, schedule_block: dict
) -> str:
    """Deterministic JSON form of the model identity stored in checkpoints."""
    payload = {
        "model": asdict(model_config),
        "precision": precision,
        "schedule": schedule_block,
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def model_from_config_text(text: str) -> tuple[NoisePredictor, VarianceSchedule]:
    """Rebuild the model skeleton and its training schedule from checkpoint config."""
    payload = json.loads(text)
    config = ModelConfig(**payload["model"])
    sblock = payload["schedule"]
    if sblock.get("type", "linear") != "linear":
        raise ValueError(f"unknown schedule type {sblock.get('type')!r}")
    sched = build_linear_schedule(
        config.diffusion_steps, sblock["beta_start"], sblock["beta_end"]
    )
    model = NoisePredictor(config, dtype=payload["precision"])
    return model, sched


def _mel_batch(x0: np.ndarray, sample_rate: int) -> np.ndarray:
    return np.stack([audio.mel_spectrogram(x, sample_rate).values for x in x0])


def train_step(
    x0: np.ndarray,
    model: NoisePredictor,
    sched: VarianceSchedule,
    opt: Adam,
    rng: np.random.Generator,
    labels=None,
    sample_rate: int | None = None,
) -> float:
    """One noise-regression step: per-example uniform t, Gaussian eps, Adam update."""
    B = x0.shape[0]
    t = rng.integers(1, sched.T + 1, size=B)
    eps = rng.standard_normal(x0.shape, dtype=model.dtype)
    xt = q_sample(x0, t, eps, sched)

    conditioner = None
    if model.config.conditioning == "mel":
        if sample_rate is None:
            raise ValueError("mel conditioning needs the sample rate")
        mels = _mel_batch(x0, sample_rate).astype(model.dtype)
        conditioner = model.conditioner_for(Tensor(mels), x0.shape[1])
    elif model.config.conditioning == "label":
        if labels is None:
            raise ValueError("label conditioning needs labels")
        conditioner = np.asarray(labels)

    pred = model.forward(Tensor(xt), t, conditioner)
    loss = ops.squared_error_loss(pred, eps)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericError(
            f"non-finite loss {value}; drawn steps t={t.tolist()}, schedule T={sched.T}, "
            f"beta range [{sched.betas[0]:.3g}, {sched.betas[-1]:.3g}]"
        )
    model.params.zero_grad()
    backward(loss)
    opt.step()
    return value


def make_checkpoint(
    model: NoisePredictor,
    opt: Adam,
    rng: np.random.Generator,
    step: int,
    config_text: str,
) -> Checkpoint:
    return Checkpoint(
        config_text=config_text,
        params=dict(model.params.arrays()),
        moments=opt.moment_tensors(),
        rng_state=rng_state_bytes(rng),
        step=step,
    )


def fit(
    dataset: "audio.Corpus",
    model: NoisePredictor,
    sched: VarianceSchedule,
    cfg: TrainConfig,
    out_dir: str | None = None,
    config_text: str | None = None,
    resume: Checkpoint | None = None,
    progress=None,
) -> tuple[Checkpoint, list[tuple[int, float]]]:
    """Run train_step over random crops for max_steps; returns (final checkpoint, curve).

    Checkpoints are written to out_dir every checkpoint_interval steps plus a
    final one, along with the loss curve ("step<TAB>loss" per line). Passing
    resume continues that run exactly as if it had never stopped.
    """
    if len(dataset.waves) == 0:
        raise ValueError("empty dataset")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    if config_text is None:
        config_text = canonical_config_text(
            model.config, cfg.precision, {"type": "linear", "beta_start": float(sched.betas[0]), "beta_end": float(sched.betas[-1])}
        )

    opt = Adam(model.params, cfg.learning_rate)
    start_step = 0
    if resume is not None:
        model.params.load_arrays(resume.params)
        opt.load_moments(resume.moments, resume.step)
        rng = rng_from_state(resume.rng_state)
        start_step = resume.step
    else:
        rng = np.random.default_rng(cfg.seed)

    n = len(dataset.waves)
    labeled = model.config.conditioning == "label"
    curve: list[tuple[int, float]] = []
    for step in range(start_step + 1, cfg.max_steps + 1):
        idx = rng.integers(0, n, size=cfg.batch_size)
        crops = [audio.random_crop(dataset.waves[i], cfg.crop_len, rng) for i in idx]
        x0 = np.stack(crops).astype(model.dtype)
        labels = dataset.labels[idx] if labeled else None
        loss = train_step(
            x0, model, sched, opt, rng, labels=labels, sample_rate=dataset.sample_rate
        )
        curve.append((step, loss))
        if progress is not None:
            progress(step, loss)
        if out_dir and cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
            ckpt = make_checkpoint(model, opt, rng, step, config_text)
            save_checkpoint(ckpt, os.path.join(out_dir, f"step{step:08d}.ckpt"))

    final = make_checkpoint(model, opt, rng, max(start_step, cfg.max_steps), config_text)
    if out_dir:
        save_checkpoint(final, os.path.join(out_dir, "final.ckpt"))
        write_loss_curve(os.path.join(out_dir, "loss_curve.tsv"), curve)
    return final, curve


def write_loss_curve(path: str, curve: list[tuple[int, float]]) -> None:
    lines = "".join(f"{step}\t{loss:.17g}\n" for step, loss in curve)
    atomic_write_bytes(path, lines.encode("utf-8"))


def restore_model(ckpt: Checkpoint) -> tuple[NoisePredictor, VarianceSchedule]:
    """Model + schedule rebuilt from a checkpoint, parameters loaded."""
    model, sched = model_from_config_text(ckpt.config_text)
    model.params.load_arrays(ckpt.params)
    return model, sched
