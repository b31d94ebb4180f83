"""WAV I/O, mel-spectrogram conditioners, cropping, and a synthetic tone corpus.

The mel pipeline: Hann-windowed STFT (window 1024, hop 256, reflect-centered),
magnitude spectra, an 80-band HTK-scale triangular filterbank spanning 0 Hz
to Nyquist, then natural log with a 1e-5 floor. Frame count is ceil(L / hop),
so two 16x upsampling stages cover the waveform exactly when L is a multiple
of 256 and overshoot by less than one hop otherwise.
"""

from __future__ import annotations

import os
import struct
import wave as wave_module
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .serialization import atomic_write_bytes, load_tensor_file, save_tensor_file

MEL_BANDS = 80
STFT_WINDOW = 1024
STFT_HOP = 256
LOG_FLOOR = 1e-5


@dataclass(frozen=True)
class Waveform:
    """1-D sample array; training inputs are normalized to [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.samples.ndim != 1 or len(self.samples) < 1:
            raise ValueError("samples must be a nonempty 1-D array")
        if self.sample_rate < 1:
            raise ValueError("sample_rate must be positive")


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray  # [MEL_BANDS, F], log-compressed
    sample_rate: int
    hop: int = STFT_HOP
    window: int = STFT_WINDOW
    fft: int = STFT_WINDOW


@dataclass
class CorpusSpec:
    num_utterances: int
    length: int
    sample_rate: int
    frequencies: tuple[float, ...]
    amplitude: tuple[float, float] = (0.4, 0.8)
    noise_floor: float = 0.0
    seed: int = 0
    chord_prob: float = 0.0

    def __post_init__(self):
        nyquist = self.sample_rate / 2.0
        if any(f <= 0 or f >= nyquist for f in self.frequencies):
            raise ValueError(f"tone frequencies must lie in (0, {nyquist})")
        if not self.frequencies:
            raise ValueError("at least one tone frequency required")


@dataclass
class Corpus:
    """In-memory dataset: waveform arrays plus integer labels."""

    waves: list[np.ndarray]
    labels: np.ndarray
    sample_rate: int
    paths: list[str] = field(default_factory=list)


def read_wav(path) -> Waveform:
    try:
        with wave_module.open(os.fspath(path), "rb") as wf:
            if wf.getnchannels() != 1:
                raise FormatError(f"{path}: expected mono, got {wf.getnchannels()} channels")
            if wf.getsampwidth() != 2 or wf.getcomptype() != "NONE":
                raise FormatError(f"{path}: expected 16-bit PCM")
            n = wf.getnframes()
            raw = wf.readframes(n)
            if len(raw) != 2 * n:
                raise FormatError(f"{path}: truncated sample data")
            samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
            return Waveform(samples, wf.getframerate())
    except (wave_module.Error, EOFError, struct.error) as exc:
        raise FormatError(f"{path}: not a readable PCM WAV ({exc})") from exc


def write_wav(wave: Waveform, path) -> None:
    scaled = np.clip(wave.samples, -1.0, 1.0) * 32768.0
    quantized = np.copysign(np.floor(np.abs(scaled) + 0.5), scaled)
    quantized = np.clip(quantized, -32768, 32767).astype("<i2")
    import io

    buf = io.BytesIO()
    with wave_module.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(wave.sample_rate)
        wf.writeframes(quantized.tobytes())
    atomic_write_bytes(path, buf.getvalue())


def _hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int = STFT_WINDOW, n_mels: int = MEL_BANDS) -> np.ndarray:
    """[n_mels, n_fft//2+1] triangular filters (peak 1) on the HTK mel scale, 0..Nyquist."""
    points_mel = np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate / 2.0), n_mels + 2)
    points_hz = _mel_to_hz(points_mel)
    bin_hz = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, center, upper = points_hz[:-2], points_hz[1:-1], points_hz[2:]
    up = (bin_hz[None, :] - lower[:, None]) / (center - lower)[:, None]
    down = (upper[:, None] - bin_hz[None, :]) / (upper - center)[:, None]
    return np.maximum(0.0, np.minimum(up, down))


def stft_magnitude(samples: np.ndarray, window: int = STFT_WINDOW, hop: int = STFT_HOP) -> np.ndarray:
    """Magnitude spectrogram [window//2+1, F] with reflect-centered framing, F = ceil(L/hop)."""
    L = len(samples)
    half = window // 2
    if L < half + 1:
        raise ValueError(f"waveform length {L} too short to reflect-pad {half} samples")
    n_frames = -(-L // hop)
    padded = np.pad(samples, (half, half), mode="reflect")
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = padded[idx] * _hann(window)[None, :]
    return np.abs(np.fft.rfft(frames, axis=1)).T


def mel_spectrogram(x, sample_rate: int | None = None) -> MelSpectrogram:
    """Log-compressed mel conditioner for a waveform (array + rate, or Waveform)."""
    if isinstance(x, Waveform):
        samples, sample_rate = x.samples, x.sample_rate
    else:
        if sample_rate is None:
            raise ValueError("sample_rate required for a bare array")
        samples = np.asarray(x)
    mag = stft_magnitude(samples.astype(np.float64))
    mel = mel_filterbank(sample_rate) @ mag
    return MelSpectrogram(np.log(np.maximum(mel, LOG_FLOOR)), sample_rate)


def random_crop(x: np.ndarray, crop_len: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random window of crop_len samples; zero-pads on the right if short."""
    if crop_len < 1:
        raise ValueError("crop_len must be positive")
    L = len(x)
    if L < crop_len:
        return np.concatenate([x, np.zeros(crop_len - L, dtype=x.dtype)])
    offset = int(rng.integers(0, L - crop_len + 1))
    return x[offset : offset + crop_len]


def default_tone_frequencies(length: int, sample_rate: int, count: int = 10) -> tuple[float, ...]:
    """Tone set placed on exact FFT bins of a length-`length` transform.

    Keeping tones on bins makes the dominant-bin membership test exact; the
    bins span a comfortable low-to-mid band away from DC and Nyquist.
    """
    low, high = max(8, length // 32), length // 6
    bins = sorted({int(round(b)) for b in np.linspace(low, high, count)})
    if len(bins) < count:
        raise ValueError(f"length {length} too short for {count} distinct tone bins")
    return tuple(b * sample_rate / length for b in bins)


def make_synthetic_corpus(spec: CorpusSpec, out_dir) -> str:
    """Write a seeded corpus of faded sinusoids plus a path<TAB>label manifest.

    Utterance i carries tone i mod K (label i mod K); with chord_prob a second
    random tone is mixed in at half amplitude, keeping the primary label.
    Returns the manifest path. Regeneration with the same spec is
    byte-identical.
    """
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.length) / spec.sample_rate
    fade = min(spec.length // 8, 256)
    envelope = np.ones(spec.length)
    if fade:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        envelope[:fade] = ramp
        envelope[-fade:] = ramp[::-1]

    lines = []
    k = len(spec.frequencies)
    for i in range(spec.num_utterances):
        label = i % k
        amp = rng.uniform(*spec.amplitude)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        samples = amp * np.sin(2.0 * np.pi * spec.frequencies[label] * t + phase)
        if spec.chord_prob > 0.0 and rng.random() < spec.chord_prob:
            other = int(rng.integers(0, k))
            samples += 0.5 * amp * np.sin(
                2.0 * np.pi * spec.frequencies[other] * t + rng.uniform(0.0, 2.0 * np.pi)
            )
        if spec.noise_floor > 0.0:
            samples = samples + spec.noise_floor * rng.standard_normal(spec.length)
        samples = np.clip(samples * envelope, -1.0, 1.0)
        name = f"tone_{i:05d}.wav"
        write_wav(Waveform(samples, spec.sample_rate), os.path.join(out_dir, name))
        lines.append(f"{name}\t{label}\n")

    manifest = os.path.join(out_dir, "manifest.tsv")
    atomic_write_bytes(manifest, "".join(lines).encode("utf-8"))
    return manifest


def load_corpus(directory) -> Corpus:
    """Read a corpus directory via its manifest (falls back to *.wav, label 0)."""
    directory = os.fspath(directory)
    manifest = os.path.join(directory, "manifest.tsv")
    entries: list[tuple[str, int]] = []
    if os.path.exists(manifest):
        with open(manifest, encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if not line:
                    continue
                rel, label = line.split("\t")
                entries.append((rel, int(label)))
    else:
        entries = [(name, 0) for name in sorted(os.listdir(directory)) if name.endswith(".wav")]
    if not entries:
        raise FormatError(f"no corpus entries found under {directory}")
    waves, labels, paths = [], [], []
    rate = None
    for rel, label in entries:
        wav = read_wav(os.path.join(directory, rel))
        if rate is None:
            rate = wav.sample_rate
        elif rate != wav.sample_rate:
            raise FormatError(f"{rel}: sample rate {wav.sample_rate} != corpus rate {rate}")
        waves.append(wav.samples)
        labels.append(label)
        paths.append(rel)
    return Corpus(waves, np.asarray(labels), rate, paths)


def save_mel_cache(path, mels: dict[str, np.ndarray]) -> None:
    """Persist mel tensors using the checkpoint tensor framing."""
    save_tensor_file(path, mels)


def load_mel_cache(path) -> dict[str, np.ndarray]:
    return load_tensor_file(path)
