"""Command-line interface over a declarative run config.

Subcommands: train, sample, fast-sample, denoise, interpolate, evaluate,
inspect-schedule, receptive-field, make-corpus. Settings resolve with
flag > config file > default precedence; --set model.layers=12 style
overrides reach any key. Exit codes: 0 success, 2 config error, 3 I/O
error, 4 numeric failure, 5 schedule-alignment warning escalated by
--strict. Errors print one machine-parseable line: error[<category>]: detail
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import warnings

import numpy as np

from . import audio, metrics, sampler, trainer
from .errors import ConfigError, FormatError, NumericError, ScheduleAlignmentWarning
from .model import ModelConfig, NoisePredictor, receptive_field
from .schedule import build_fast_schedule, build_linear_schedule, default_fast_etas
from .serialization import atomic_write_bytes, load_checkpoint

SPEC_VERSION = 1

DEFAULT_CONFIG = {
    "spec_version": SPEC_VERSION,
    "model": {
        "layers": 30,
        "channels": 64,
        "kernel": 3,
        "dilation_cycle_length": 10,
        "diffusion_steps": 200,
        "conditioning": "none",
        "mel_bands": 80,
        "label_count": 0,
        "label_dim": 128,
    },
    "schedule": {"type": "linear", "beta_start": 1e-4, "beta_end": 0.02},
    "fast": {"etas": None},
    "training": {
        "learning_rate": 2e-4,
        "batch_size": 16,
        "max_steps": 1000,
        "seed": 0,
        "precision": "float32",
        "checkpoint_interval": 1000,
        "crop_len": 16000,
    },
    "audio": {"sample_rate": 16000},
    "paths": {"data_dir": None, "output_dir": None, "checkpoint": None},
}


def canonical_config_text(config: dict) -> str:
    """Deterministic textual form; parsing and re-emitting is byte-identical."""
    return json.dumps(config, sort_keys=True, indent=2) + "\n"


def _merge(base: dict, override: dict, path: str = "") -> None:
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge(base[key], value, where)
        else:
            base[key] = value


def load_config(path: str | None, sets: list[str]) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        try:
            with open(path, encoding="utf-8") as f:
                file_config = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: invalid JSON ({exc})") from exc
        if not isinstance(file_config, dict):
            raise ConfigError(f"config file {path}: top level must be an object")
        _merge(config, file_config)
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set expects key.path=value, got {item!r}")
        key_path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        parts = key_path.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config key {key_path!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key_path!r}")
        node[parts[-1]] = value
    return config


def _require_path(path, what: str) -> str:
    if not path:
        raise ConfigError(f"{what} is not set")
    if not os.path.exists(path):
        raise ConfigError(f"{what} {path!r} does not exist")
    return path


def _model_config(config: dict) -> ModelConfig:
    try:
        return ModelConfig(**config["model"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model block: {exc}") from exc


def _schedule(config: dict):
    block = config["schedule"]
    if block["type"] != "linear":
        raise ConfigError(f"unknown schedule type {block['type']!r}")
    try:
        return build_linear_schedule(
            config["model"]["diffusion_steps"], block["beta_start"], block["beta_end"]
        )
    except ValueError as exc:
        raise ConfigError(f"schedule block: {exc}") from exc


def _fast_etas(config: dict) -> list[float]:
    etas = config["fast"]["etas"]
    if etas is None:
        return default_fast_etas(config["model"]["diffusion_steps"])
    return list(etas)


def _write_json(path: str, payload: dict) -> None:
    atomic_write_bytes(path, (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode())


def _load_model(args, config):
    ckpt_path = args.checkpoint or config["paths"]["checkpoint"]
    _require_path(ckpt_path, "checkpoint")
    ckpt = load_checkpoint(ckpt_path)
    model, sched = trainer.restore_model(ckpt)
    return model, sched, ckpt_path


def _mel_conditioner_from_wav(model: NoisePredictor, wav_path: str):
    """Mel conditioner for one WAV, cached beside it in the tensor framing."""
    wav = audio.read_wav(wav_path)
    cache_path = wav_path + ".melcache"
    if os.path.exists(cache_path):
        mel = audio.load_mel_cache(cache_path)["mel"]
    else:
        mel = audio.mel_spectrogram(wav).values
        audio.save_mel_cache(cache_path, {"mel": mel})
    length = len(wav.samples)
    cond = model.conditioner_for(mel.astype(model.dtype), length)
    return cond, length, wav.sample_rate


def _sampling_conditioner(args, model, config):
    """(conditioner, length, description) for sample/fast-sample."""
    mode = model.config.conditioning
    if mode == "mel":
        if not args.condition_wav:
            raise ConfigError("mel-conditioned model needs --condition-wav")
        cond, length, _ = _mel_conditioner_from_wav(model, _require_path(args.condition_wav, "condition wav"))
        return cond, length, f"mel:{os.path.basename(args.condition_wav)}"
    if mode == "label":
        if args.label is None:
            raise ConfigError("label-conditioned model needs --label")
        if not 0 <= args.label < model.config.label_count:
            raise ConfigError(f"label {args.label} outside 0..{model.config.label_count - 1}")
        length = args.length or config["training"]["crop_len"]
        return np.full(args.count, args.label), length, f"label:{args.label}"
    if args.condition_wav or args.label is not None:
        raise ConfigError("model is unconditional; drop --condition-wav/--label")
    return None, args.length or config["training"]["crop_len"], "none"


def _cmd_make_corpus(args, config) -> int:
    sample_rate = config["audio"]["sample_rate"]
    if args.freqs:
        freqs = tuple(float(f) for f in args.freqs.split(","))
    else:
        freqs = audio.default_tone_frequencies(args.length, sample_rate, args.tones)
    spec = audio.CorpusSpec(
        num_utterances=args.count,
        length=args.length,
        sample_rate=sample_rate,
        frequencies=freqs,
        amplitude=(args.amp_low, args.amp_high),
        noise_floor=args.noise,
        seed=args.seed if args.seed is not None else 0,
        chord_prob=args.chord_prob,
    )
    manifest = audio.make_synthetic_corpus(spec, args.out)
    meta = {
        "spec_version": SPEC_VERSION,
        "command": "make-corpus",
        "corpus": {
            "num_utterances": spec.num_utterances,
            "length": spec.length,
            "sample_rate": spec.sample_rate,
            "frequencies": list(spec.frequencies),
            "amplitude": list(spec.amplitude),
            "noise_floor": spec.noise_floor,
            "seed": spec.seed,
            "chord_prob": spec.chord_prob,
        },
    }
    _write_json(os.path.join(args.out, "corpus_meta.json"), meta)
    print(manifest)
    return 0


def _cmd_inspect_schedule(args, config) -> int:
    sched = _schedule(config)
    lines = ["t,beta,alpha_bar,beta_tilde,t_align\n"]
    if args.fast:
        fast = build_fast_schedule(_fast_etas(config), sched)
        for s in range(fast.T_infer):
            lines.append(
                f"{s + 1},{fast.etas[s]:.12g},{fast.gamma_bars[s]:.12g},"
                f"{fast.eta_tildes[s]:.12g},{fast.aligned_steps[s]:.12g}\n"
            )
    else:
        for t in range(sched.T):
            lines.append(
                f"{t + 1},{sched.betas[t]:.12g},{sched.alpha_bars[t]:.12g},"
                f"{sched.beta_tildes[t]:.12g},{t + 1}\n"
            )
    text = "".join(lines)
    if args.out:
        atomic_write_bytes(args.out, text.encode())
    else:
        sys.stdout.write(text)
    return 0


def _cmd_receptive_field(args, config) -> int:
    print(receptive_field(_model_config(config)))
    return 0


def _cmd_train(args, config) -> int:
    data_dir = _require_path(args.data or config["paths"]["data_dir"], "data directory")
    out_dir = args.out or config["paths"]["output_dir"]
    if not out_dir:
        raise ConfigError("output directory is not set")
    os.makedirs(out_dir, exist_ok=True)
    corpus = audio.load_corpus(data_dir)
    if corpus.sample_rate != config["audio"]["sample_rate"]:
        raise ConfigError(
            f"corpus rate {corpus.sample_rate} != configured rate {config['audio']['sample_rate']}"
        )
    model_config = _model_config(config)
    if model_config.conditioning == "label":
        observed = int(corpus.labels.max()) + 1
        if model_config.label_count < observed:
            raise ConfigError(
                f"label_count {model_config.label_count} < labels present ({observed})"
            )
    sched = _schedule(config)
    tcfg_block = dict(config["training"])
    if args.seed is not None:
        tcfg_block["seed"] = args.seed
    if args.steps is not None:
        tcfg_block["max_steps"] = args.steps
    try:
        tcfg = trainer.TrainConfig(**tcfg_block)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"training block: {exc}") from exc

    model = NoisePredictor(
        model_config, dtype=tcfg.precision, rng=np.random.default_rng(tcfg.seed)
    )
    resume = None
    if args.resume:
        resume = load_checkpoint(_require_path(args.resume, "resume checkpoint"))
    config_text = trainer.canonical_config_text(
        model_config, tcfg.precision, config["schedule"]
    )
    _, curve = trainer.fit(
        corpus, model, sched, tcfg, out_dir=out_dir, config_text=config_text, resume=resume
    )
    manifest = {
        "spec_version": SPEC_VERSION,
        "command": "train",
        "config": config,
        "steps_run": len(curve),
        "final_loss": curve[-1][1] if curve else None,
        "parameters": model.params.total_parameters(),
    }
    _write_json(os.path.join(out_dir, "train_manifest.json"), manifest)
    return 0


def _cmd_sample(args, config, fast: bool) -> int:
    model, sched, ckpt_path = _load_model(args, config)
    out_dir = args.out or config["paths"]["output_dir"]
    if not out_dir:
        raise ConfigError("output directory is not set")
    os.makedirs(out_dir, exist_ok=True)
    seed = args.seed if args.seed is not None else config["training"]["seed"]
    rng = np.random.default_rng(seed)
    conditioner, length, cond_desc = _sampling_conditioner(args, model, config)

    if fast:
        fast_sched = build_fast_schedule(_fast_etas(config), sched)
        waves = sampler.fast_sample(
            model, fast_sched, length, rng, n_samples=args.count, conditioner=conditioner
        )
        steps = fast_sched.T_infer
        mode = "fast"
    else:
        waves = sampler.sample(
            model, sched, length, rng, n_samples=args.count, conditioner=conditioner
        )
        steps = sched.T
        mode = "full"
    if not np.all(np.isfinite(waves)):
        raise NumericError("sampler produced non-finite samples")

    rate = config["audio"]["sample_rate"]
    names = []
    for i in range(args.count):
        name = f"sample_{i:04d}.wav"
        audio.write_wav(audio.Waveform(np.clip(waves[i], -1.0, 1.0), rate), os.path.join(out_dir, name))
        names.append(name)
    if model.config.conditioning == "label":
        # labeled manifest so `evaluate` can compute per-class FID and accuracy
        lines = "".join(f"{name}\t{args.label}\n" for name in names)
        atomic_write_bytes(os.path.join(out_dir, "manifest.tsv"), lines.encode())
    run = sampler.SamplerRun(
        mode=mode, seed=seed, n_samples=args.count, length=length, steps=steps, conditioner=cond_desc
    )
    manifest = {
        "spec_version": SPEC_VERSION,
        "command": "fast-sample" if fast else "sample",
        "checkpoint": os.path.abspath(ckpt_path),
        "config": config,
        "run": {
            "mode": run.mode,
            "seed": run.seed,
            "n_samples": run.n_samples,
            "length": run.length,
            "steps": run.steps,
            "conditioner": run.conditioner,
        },
        "outputs": names,
    }
    if fast:
        manifest["etas"] = _fast_etas(config)
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return 0


def _cmd_denoise(args, config) -> int:
    model, sched, _ = _load_model(args, config)
    wav = audio.read_wav(_require_path(args.input, "input wav"))
    t_start = args.t_start
    if not 1 <= t_start <= sched.T:
        raise ConfigError(f"--t-start {t_start} outside 1..{sched.T}")
    seed = args.seed if args.seed is not None else config["training"]["seed"]
    rng = np.random.default_rng(seed)
    conditioner = None
    if model.config.conditioning == "mel":
        cond, length, _ = _mel_conditioner_from_wav(model, args.input)
        conditioner = cond
    elif model.config.conditioning == "label":
        if args.label is None:
            raise ConfigError("label-conditioned model needs --label")
        conditioner = np.array([args.label])
    out = sampler.denoise(model, sched, wav.samples.astype(model.dtype), t_start, rng, conditioner)
    audio.write_wav(audio.Waveform(np.clip(out, -1.0, 1.0), wav.sample_rate), args.output)
    return 0


def _cmd_interpolate(args, config) -> int:
    model, sched, ckpt_path = _load_model(args, config)
    out_dir = args.out or config["paths"]["output_dir"]
    if not out_dir:
        raise ConfigError("output directory is not set")
    os.makedirs(out_dir, exist_ok=True)
    wav_a = audio.read_wav(_require_path(args.wav_a, "wav-a"))
    wav_b = audio.read_wav(_require_path(args.wav_b, "wav-b"))
    if len(wav_a.samples) != len(wav_b.samples):
        raise ConfigError("interpolation endpoints must have equal lengths")
    lambdas = [float(v) for v in args.lambdas.split(",")]
    if any(not 0.0 <= lam <= 1.0 for lam in lambdas):
        raise ConfigError("every lambda must lie in [0, 1]")
    seed = args.seed if args.seed is not None else config["training"]["seed"]
    conditioner = np.array([args.label]) if args.label is not None else None
    names = []
    for lam in lambdas:
        rng = np.random.default_rng(seed)
        out = sampler.interpolate(
            model, sched, wav_a.samples, wav_b.samples, lam, args.t_mix, rng, conditioner
        )
        name = f"interp_{lam:.3f}.wav"
        audio.write_wav(
            audio.Waveform(np.clip(out, -1.0, 1.0), wav_a.sample_rate),
            os.path.join(out_dir, name),
        )
        names.append(name)
    manifest = {
        "spec_version": SPEC_VERSION,
        "command": "interpolate",
        "checkpoint": os.path.abspath(ckpt_path),
        "config": config,
        "run": {"seed": seed, "t_mix": args.t_mix, "lambdas": lambdas},
        "outputs": names,
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return 0


def _cmd_evaluate(args, config) -> int:
    train_corpus = audio.load_corpus(_require_path(args.train_dir, "train directory"))
    gen_corpus = audio.load_corpus(_require_path(args.gen_dir, "generated directory"))
    lengths = {len(w) for w in train_corpus.waves} | {len(w) for w in gen_corpus.waves}
    if len(lengths) != 1:
        raise ConfigError(f"evaluation needs equal-length waveforms, got lengths {sorted(lengths)}")
    (length,) = lengths
    num_classes = int(train_corpus.labels.max()) + 1

    extractor = metrics.SpectralToneClassifier(
        length, num_classes, feature_dim=args.feature_dim, seed=args.seed or 0
    )
    train_waves = np.stack(train_corpus.waves)
    gen_waves = np.stack(gen_corpus.waves)
    extractor.fit(train_waves, train_corpus.labels, steps=args.classifier_steps)

    train_feats, train_probs = extractor.extract_batch(train_waves)
    gen_feats, gen_probs = extractor.extract_batch(gen_waves)

    k = min(args.ndb_k, len(train_corpus.waves))
    ndb_count, ndb_ratio = metrics.ndb(train_feats, gen_feats, k=k, seed=args.seed or 0)
    report = metrics.MetricReport(
        fid=metrics.fid(train_feats, gen_feats),
        inception_score=metrics.inception_score(gen_probs),
        modified_inception_score=metrics.modified_inception_score(gen_probs),
        am_score=metrics.am_score(train_probs, gen_probs),
        ndb=ndb_count,
        ndb_over_k=ndb_ratio,
        config={
            "train_dir": os.path.abspath(args.train_dir),
            "gen_dir": os.path.abspath(args.gen_dir),
            "feature_dim": args.feature_dim,
            "ndb_k": k,
            "classifier_steps": args.classifier_steps,
            "seed": args.seed or 0,
            "extractor_train_accuracy": metrics.classifier_accuracy(
                extractor, train_waves, train_corpus.labels
            ),
        },
    )
    gen_manifest = os.path.join(args.gen_dir, "manifest.tsv")
    if os.path.exists(gen_manifest) and gen_corpus.labels.max() > 0:
        by_label_train = {
            int(lbl): train_feats[train_corpus.labels == lbl]
            for lbl in np.unique(train_corpus.labels)
        }
        by_label_gen = {
            int(lbl): gen_feats[gen_corpus.labels == lbl] for lbl in np.unique(gen_corpus.labels)
        }
        if sorted(by_label_gen) == sorted(by_label_train):
            mean, std = metrics.fid_class(by_label_gen, by_label_train)
            report.fid_class_mean = mean
            report.fid_class_std = std
            report.accuracy = metrics.classifier_accuracy(
                extractor, gen_waves, gen_corpus.labels
            )

    payload = {"spec_version": SPEC_VERSION, "command": "evaluate", **report.to_dict()}
    if args.out:
        _write_json(args.out, payload)
    else:
        print(json.dumps(payload, sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wavediff", description=__doc__)
    parser.add_argument("--config", help="JSON run-config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    parser.add_argument("--strict", action="store_true",
                        help="escalate schedule-alignment warnings to exit code 5")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus", help="generate the synthetic tone corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=120)
    p.add_argument("--length", type=int, default=1024)
    p.add_argument("--tones", type=int, default=10)
    p.add_argument("--freqs", help="comma-separated tone frequencies in Hz")
    p.add_argument("--amp-low", type=float, default=0.4)
    p.add_argument("--amp-high", type=float, default=0.8)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--chord-prob", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("inspect-schedule", help="dump the schedule table as CSV")
    p.add_argument("--fast", action="store_true", help="dump the fast schedule instead")
    p.add_argument("--out")

    sub.add_parser("receptive-field", help="print the single-pass receptive field")

    p = sub.add_parser("train", help="fit the noise predictor on a corpus")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", help="checkpoint to continue from")

    for name in ("sample", "fast-sample"):
        p = sub.add_parser(name, help=f"{name} from a trained checkpoint")
        p.add_argument("--checkpoint")
        p.add_argument("--out")
        p.add_argument("--count", type=int, default=1)
        p.add_argument("--length", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--condition-wav", help="WAV whose mel conditions the vocoder")
        p.add_argument("--label", type=int, default=None)

    p = sub.add_parser("denoise", help="run the reverse chain on a noisy input")
    p.add_argument("--checkpoint")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--t-start", type=int, default=25)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--label", type=int, default=None)

    p = sub.add_parser("interpolate", help="latent-space mix of two waveforms")
    p.add_argument("--checkpoint")
    p.add_argument("--wav-a", required=True)
    p.add_argument("--wav-b", required=True)
    p.add_argument("--lambdas", default="0,0.25,0.5,0.75,1")
    p.add_argument("--t-mix", type=int, default=50)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--label", type=int, default=None)

    p = sub.add_parser("evaluate", help="metric report for generated audio")
    p.add_argument("--train-dir", required=True)
    p.add_argument("--gen-dir", required=True)
    p.add_argument("--out")
    p.add_argument("--feature-dim", type=int, default=64)
    p.add_argument("--ndb-k", type=int, default=50)
    p.add_argument("--classifier-steps", type=int, default=400)
    p.add_argument("--seed", type=int, default=None)

    return parser


_HANDLERS = {
    "make-corpus": _cmd_make_corpus,
    "inspect-schedule": _cmd_inspect_schedule,
    "receptive-field": _cmd_receptive_field,
    "train": _cmd_train,
    "denoise": _cmd_denoise,
    "interpolate": _cmd_interpolate,
    "evaluate": _cmd_evaluate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            if args.strict:
                warnings.simplefilter("error", ScheduleAlignmentWarning)
            config = load_config(args.config, args.set)
            if args.command == "sample":
                return _cmd_sample(args, config, fast=False)
            if args.command == "fast-sample":
                return _cmd_sample(args, config, fast=True)
            return _HANDLERS[args.command](args, config)
    except ScheduleAlignmentWarning as exc:
        print(f"error[validation]: {exc}", file=sys.stderr)
        return 5
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error[numeric]: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
