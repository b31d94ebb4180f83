"""The noise-prediction network.

A stack of bidirectional dilated-convolution residual layers with gated-tanh
units. Each layer receives a diffusion-step feature (a sinusoidal encoding of
t pushed through shared and layer-specific fully connected layers) broadcast
over length, and optionally a conditioner bias: an upsampled mel spectrogram
projected per layer, or a learned label embedding.

Activations flow channels-last internally; see numerics.ops for why.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import ops
from .numerics.tensor import ParamStore, Tensor, as_tensor, no_grad

EMBED_DIM = 128
STEP_HIDDEN = 512
CONDITIONING_MODES = ("none", "mel", "label")


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 30
    channels: int = 64
    kernel: int = 3
    dilation_cycle_length: int = 10
    diffusion_steps: int = 200
    conditioning: str = "none"
    mel_bands: int = 80
    label_count: int = 0
    label_dim: int = EMBED_DIM

    def __post_init__(self):
        if self.layers < 1 or self.channels < 1 or self.diffusion_steps < 1:
            raise ValueError("layers, channels and diffusion_steps must be positive")
        if self.kernel % 2 == 0:
            raise ValueError(f"kernel size {self.kernel} must be odd")
        if self.layers % self.dilation_cycle_length != 0:
            raise ValueError(
                f"layers ({self.layers}) must be divisible by the dilation cycle "
                f"length ({self.dilation_cycle_length})"
            )
        if self.conditioning not in CONDITIONING_MODES:
            raise ValueError(f"conditioning must be one of {CONDITIONING_MODES}")
        if self.conditioning == "label" and self.label_count < 1:
            raise ValueError("label conditioning requires label_count >= 1")


def dilations(config: ModelConfig) -> list[int]:
    """Per-layer dilation: doubled within each cycle, cycles repeated."""
    return [2 ** (i % config.dilation_cycle_length) for i in range(config.layers)]


def receptive_field(config: ModelConfig) -> int:
    """Single forward-pass receptive field (k-1) * sum(dilations) + 1."""
    return (config.kernel - 1) * sum(dilations(config)) + 1


def step_embedding(t) -> np.ndarray:
    """128-dim sinusoidal encoding of a (possibly fractional) diffusion step.

    Half j holds sin(10^(4j/63) * t), the other half the matching cosines,
    j = 0..63. Defined on all reals, so fast-sampling's fractional aligned
    steps embed the same way as training's integer steps.
    """
    t = np.asarray(t, dtype=np.float64)
    exponents = np.arange(EMBED_DIM // 2) * (4.0 / (EMBED_DIM // 2 - 1))
    angles = t[..., None] * 10.0**exponents
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


class NoisePredictor:
    """Noise-prediction network over waveform batches.

    Parameters live in a ParamStore keyed by layer-qualified names, which
    also fixes their checkpoint order. The final output projection starts at
    zero, so a freshly built model predicts zero noise everywhere.
    """

    def __init__(self, config: ModelConfig, dtype="float32", rng: np.random.Generator | None = None):
        self.config = config
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ValueError(f"unsupported dtype {dtype}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = ParamStore()
        self.dilations = dilations(config)
        C = config.channels

        def uniform(shape, fan_in):
            scale = 1.0 / math.sqrt(fan_in)
            return ((rng.random(shape) * 2.0 - 1.0) * scale).astype(self.dtype)

        def zeros(shape):
            return np.zeros(shape, dtype=self.dtype)

        add = self.params.add
        add("input.w", uniform((C, 1, 1), 1))
        add("input.b", zeros(C))
        add("temb.fc1.w", uniform((STEP_HIDDEN, EMBED_DIM), EMBED_DIM))
        add("temb.fc1.b", zeros(STEP_HIDDEN))
        add("temb.fc2.w", uniform((STEP_HIDDEN, STEP_HIDDEN), STEP_HIDDEN))
        add("temb.fc2.b", zeros(STEP_HIDDEN))
        if config.conditioning == "mel":
            add("upsample.0.w", uniform((3, 32), 3 * 32))
            add("upsample.0.b", zeros(1))
            add("upsample.1.w", uniform((3, 32), 3 * 32))
            add("upsample.1.b", zeros(1))
        elif config.conditioning == "label":
            add("label.table", uniform((config.label_count, config.label_dim), config.label_dim))
        cond_width = {"none": 0, "mel": config.mel_bands, "label": config.label_dim}[
            config.conditioning
        ]
        for i in range(config.layers):
            prefix = f"layer{i:02d}"
            add(f"{prefix}.step.w", uniform((C, STEP_HIDDEN), STEP_HIDDEN))
            add(f"{prefix}.step.b", zeros(C))
            add(f"{prefix}.dil.w", uniform((2 * C, C, config.kernel), C * config.kernel))
            add(f"{prefix}.dil.b", zeros(2 * C))
            if cond_width:
                add(f"{prefix}.cond.w", uniform((2 * C, cond_width), cond_width))
                add(f"{prefix}.cond.b", zeros(2 * C))
            add(f"{prefix}.res.w", uniform((C, C, 1), C))
            add(f"{prefix}.res.b", zeros(C))
            add(f"{prefix}.skip.w", uniform((C, C, 1), C))
            add(f"{prefix}.skip.b", zeros(C))
        add("head.mid.w", uniform((C, C, 1), C))
        add("head.mid.b", zeros(C))
        add("head.out.w", zeros((1, C, 1)))
        add("head.out.b", zeros(1))

    def receptive_field(self) -> int:
        return receptive_field(self.config)

    def step_features(self, t) -> Tensor:
        """Shared part of the step-feature pathway: embedding through both shared FCs."""
        emb = step_embedding(t).astype(self.dtype)
        if emb.ndim == 1:
            emb = emb[None, :]
        p = self.params
        a = ops.silu(ops.affine(emb, p["temb.fc1.w"], p["temb.fc1.b"]))
        return ops.silu(ops.affine(a, p["temb.fc2.w"], p["temb.fc2.b"]))

    def upsample_mel(self, mel) -> Tensor:
        """Upsample a mel conditioner 256x in time via two strided transposed convs."""
        mel = as_tensor(mel)
        squeeze = mel.data.ndim == 2
        x = ops.reshape(mel, (1,) + mel.data.shape) if squeeze else mel
        p = self.params
        for stage in (0, 1):
            x = ops.conv_transpose2d(x, p[f"upsample.{stage}.w"], (1, 16), (1, 8))
            x = ops.add(x, p[f"upsample.{stage}.b"])
            x = ops.leaky_relu(x, 0.4)
        if squeeze:
            x = ops.reshape(x, x.data.shape[1:])
        return x

    def conditioner_for(self, mel, length: int) -> Tensor:
        """Upsampled mel trimmed to a waveform length, ready for forward()."""
        up = self.upsample_mel(mel)
        if up.data.shape[-1] < length:
            raise ValueError(
                f"upsampled conditioner covers {up.data.shape[-1]} samples, need {length}"
            )
        return ops.trim(up, length, axis=up.data.ndim - 1)

    def forward(self, x, t, conditioner=None) -> Tensor:
        """Predict the injected noise for x_t at diffusion step t.

        x is a waveform batch [B, L] (or [B, 1, L]; the output matches the
        input rank). t is a scalar step, possibly fractional, or a
        per-example array [B]. The conditioner is an upsampled mel tensor
        [B, bands, L] / [bands, L] in mel mode, or integer labels in label
        mode; it must be absent in unconditional mode.
        """
        x = as_tensor(x)
        in_shape = x.data.shape
        if x.data.ndim == 3:
            if in_shape[1] != 1:
                raise ValueError(f"expected a single waveform channel, got shape {in_shape}")
            B, _, L = in_shape
        elif x.data.ndim == 2:
            B, L = in_shape
        else:
            raise ValueError(f"waveform batch must be [B, L] or [B, 1, L], got {in_shape}")
        cfg = self.config
        p = self.params

        cond_cl = None
        label_rows = None
        if cfg.conditioning == "none":
            if conditioner is not None:
                raise ValueError("unconditional model was given a conditioner")
        elif conditioner is None:
            raise ValueError(f"{cfg.conditioning}-conditioned model needs a conditioner")
        elif cfg.conditioning == "mel":
            cond = as_tensor(conditioner)
            if cond.data.ndim == 2:
                cond = ops.reshape(cond, (1,) + cond.data.shape)
            if cond.data.shape[-1] != L:
                raise ValueError(
                    f"conditioner length {cond.data.shape[-1]} != waveform length {L}"
                )
            cond_cl = ops.transpose_12(cond)  # [B, L, bands]
        else:
            labels = np.atleast_1d(np.asarray(conditioner))
            if labels.min() < 0 or labels.max() >= cfg.label_count:
                raise ValueError(f"label outside 0..{cfg.label_count - 1}")
            label_rows = ops.embedding(p["label.table"], labels)  # [B, label_dim]

        shared = self.step_features(t)  # [1 or B, 512]
        h = ops.reshape(x, (B, L, 1))
        h = ops.relu(ops.conv1d(h, p["input.w"], p["input.b"]))

        inv_sqrt2 = 1.0 / math.sqrt(2.0)
        skips = []
        for i, dilation in enumerate(self.dilations):
            prefix = f"layer{i:02d}"
            feat = ops.affine(shared, p[f"{prefix}.step.w"], p[f"{prefix}.step.b"])
            z = ops.add(h, ops.reshape(feat, (feat.data.shape[0], 1, cfg.channels)))
            y = ops.conv1d(z, p[f"{prefix}.dil.w"], p[f"{prefix}.dil.b"], dilation=dilation)
            if cond_cl is not None:
                y = ops.add(
                    y,
                    ops.conv1d(cond_cl, _as_conv1x1(p[f"{prefix}.cond.w"]), p[f"{prefix}.cond.b"]),
                )
            elif label_rows is not None:
                bias = ops.affine(label_rows, p[f"{prefix}.cond.w"], p[f"{prefix}.cond.b"])
                y = ops.add(y, ops.reshape(bias, (bias.data.shape[0], 1, 2 * cfg.channels)))
            gate = ops.gated_tanh(y, axis=-1)
            res = ops.conv1d(gate, p[f"{prefix}.res.w"], p[f"{prefix}.res.b"])
            h = ops.residual_merge(h, res, inv_sqrt2)
            skips.append(ops.conv1d(gate, p[f"{prefix}.skip.w"], p[f"{prefix}.skip.b"]))

        s = ops.scale(ops.add_n(skips), 1.0 / math.sqrt(cfg.layers))
        s = ops.relu(s)
        s = ops.relu(ops.conv1d(s, p["head.mid.w"], p["head.mid.b"]))
        out = ops.conv1d(s, p["head.out.w"], p["head.out.b"])
        return ops.reshape(out, in_shape)

    def predict(self, x, t, conditioner=None) -> np.ndarray:
        """forward() without graph construction; returns a plain array."""
        with no_grad():
            return self.forward(x, t, conditioner).data

    def embed_label(self, label: int) -> np.ndarray:
        """Embedding-table row for one class label."""
        if self.config.conditioning != "label":
            raise ValueError("model has no label table")
        if not 0 <= label < self.config.label_count:
            raise ValueError(f"label {label} outside 0..{self.config.label_count - 1}")
        return self.params["label.table"].data[label]


def _as_conv1x1(param) -> Tensor:
    """An [out, in] matrix reshaped to an [out, in, 1] conv weight."""
    return ops.reshape(param, param.data.shape + (1,))
