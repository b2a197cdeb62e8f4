"""Command line entry points.

Configuration precedence everywhere: built-in defaults, then --config JSON,
then explicit flags. Every run writes the fully resolved configuration next
to its outputs so results stay reproducible from the directory alone.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .frontend import FeatureMatrix, MelConfig, load_wav, log_mel, write_features
from .model import ModelConfig
from .objectives import ObjectiveConfig
from .probe import (ProbeConfig, apply_collapse, corpus_pairs, fit_probe,
                    probe_predict, read_collapse_map, write_fer_report)
from .sweep import SweepSpec, report_horizon_chart, run_sweep
from .synthdata import SynthConfig, generate_corpus, load_corpus, write_corpus
from .trainer import TrainConfig, pretrain

# keys --config may set; flags with the same name win over the file
_CONFIG_KEYS = ("seed", "epochs", "batch_size", "lr", "objective", "val_fraction",
                "n", "s", "l", "lam", "p_anchor", "hidden", "layers")
_OBJ_KEYS = ("n", "s", "l", "lam", "p_anchor")
_MODEL_KEYS = ("hidden", "layers")


def _limit_threads(n):
    if n is None:
        return
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(int(n))
    except ImportError:
        pass


def _load_config_file(path) -> dict:
    cfg = json.loads(Path(path).read_text())
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    unknown = set(cfg) - set(_CONFIG_KEYS)
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    return cfg


def _resolve(args) -> dict:
    """defaults < config file < flags, over the shared training keys."""
    merged = {}
    if getattr(args, "config", None):
        merged.update(_load_config_file(args.config))
    for key in _CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def _train_configs(args, dim: int):
    merged = _resolve(args)
    obj = ObjectiveConfig(**{k: merged[k] for k in _OBJ_KEYS if k in merged})
    train = TrainConfig(obj=obj, **{k: merged[k] for k in merged
                                    if k not in _OBJ_KEYS + _MODEL_KEYS})
    model = ModelConfig(dim=dim, **{k: merged[k] for k in _MODEL_KEYS if k in merged})
    train.validate()
    model.validate()
    return model, train


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _effective_config(model: ModelConfig, train: TrainConfig) -> dict:
    return {"model": dataclasses.asdict(model), "train": dataclasses.asdict(train)}


def _load_split(data, val_data):
    """A data dir may hold .pcf files directly or train/ and val/ subdirs.
    Returns (train corpus, val corpus or None)."""
    data = Path(data)
    if (data / "train").is_dir():
        train = load_corpus(data / "train")
        val = load_corpus(data / "val") if (data / "val").is_dir() else None
    else:
        train = load_corpus(data)
        val = None
    if val_data is not None:
        val = load_corpus(val_data)
    return train, val


def _int_list(text: str) -> list:
    return [int(tok) for tok in text.split(",") if tok.strip()]


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    cfg = SynthConfig(classes=args.classes, dim=args.dim, seed=args.seed,
                      noise_scale=args.noise_scale, mean_scale=args.mean_scale,
                      mean_duration=args.mean_duration,
                      successor_bias=args.successor_bias,
                      min_len=args.min_len, max_len=args.max_len)
    cfg.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.split:
        counts = _int_list(args.split)
        if not 2 <= len(counts) <= 3:
            raise ValueError("--split needs 2 or 3 comma-separated counts")
        corpus = generate_corpus(cfg, sum(counts))
        names = ("train", "val", "test")[:len(counts)]
        pos = 0
        for name, count in zip(names, counts):
            write_corpus(corpus[pos:pos + count], out / name)
            pos += count
    else:
        write_corpus(generate_corpus(cfg, args.count), out)
    payload = dataclasses.asdict(cfg)
    payload["transition"] = None if cfg.transition is None else np.asarray(cfg.transition).tolist()
    _write_json(out / "config.json", {"synth": payload, "count": args.count,
                                      "split": args.split})
    print(f"wrote corpus under {out}")


def cmd_featurize(args):
    cfg = MelConfig(sample_rate=args.sample_rate, window=args.window,
                    hop=args.hop, n_fft=args.fft, n_mels=args.mels,
                    fmin=args.fmin, fmax=args.fmax)
    cfg.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wavs = sorted(Path(args.audio).glob("*.wav"))
    if not wavs:
        raise FileNotFoundError(f"no .wav files under {args.audio}")
    for wav in wavs:
        rate, samples = load_wav(wav)
        if rate != cfg.sample_rate:
            raise ValueError(f"{wav}: sample rate {rate}, expected {cfg.sample_rate}")
        write_features(out / (wav.stem + ".pcf"), log_mel(samples, cfg))
    _write_json(out / "config.json", {"mel": dataclasses.asdict(cfg)})
    print(f"featurized {len(wavs)} files into {out}")


def cmd_pretrain(args):
    _limit_threads(args.threads)
    train_corpus, val_corpus = _load_split(args.data, args.val_data)
    dim = train_corpus[0][1].frames.shape[1]
    model, train = _train_configs(args, dim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", _effective_config(model, train))
    result = pretrain(train_corpus, val_corpus, model, train, out,
                      resume=args.resume, log=lambda msg: print(msg, flush=True))
    print(f"best validation prediction loss {result.best_val_lf:.6f}")
    print(f"checkpoints: {result.best_path} {result.last_path}")


def cmd_extract(args):
    from .checkpoint import load_checkpoint
    from .model import extract_features
    _limit_threads(args.threads)
    state, _opt, _epoch = load_checkpoint(args.ckpt)
    corpus = load_corpus(args.data, expected_dim=state.model_cfg.dim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, mat in corpus:
        feats = extract_features(state.params, mat.frames,
                                 state.norm_mean, state.norm_std)
        write_features(out / (name + ".pcf"),
                       FeatureMatrix(frames=feats, frame_period=mat.frame_period,
                                     labels=mat.labels, n_classes=mat.n_classes))
    print(f"extracted {len(corpus)} utterances ({state.model_cfg.hidden} dims) into {out}")


def _probe_corpus(path):
    corpus = load_corpus(path)
    utts = []
    for name, mat in corpus:
        if mat.labels is None:
            raise ValueError(f"{name} carries no labels; probe needs labeled features")
        utts.append((mat.frames, mat.labels))
    n_classes = max(mat.n_classes for _name, mat in corpus)
    return utts, n_classes


def cmd_probe(args):
    _limit_threads(args.threads)
    train_utts, n_classes = _probe_corpus(args.train)
    val_utts, n_val = _probe_corpus(args.val)
    n_classes = max(n_classes, n_val)
    collapse = read_collapse_map(args.collapse) if args.collapse else None
    cfg = ProbeConfig(epochs=args.epochs, lr=args.lr)
    shifts = _int_list(args.shifts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fers = {}
    for shift in shifts:
        tx, ty = corpus_pairs(train_utts, shift)
        vx, vy = corpus_pairs(val_utts, shift)
        result = fit_probe(tx, ty, vx, vy, n_classes, cfg)
        fer = result.val_fer
        if collapse is not None:
            fer = float(np.mean(apply_collapse(probe_predict(result.weights, result.bias, vx), collapse)
                                != apply_collapse(vy, collapse)))
        fers[shift] = fer
        print(f"shift {shift:+d}: frame error rate {100 * fer:.1f}%")
    write_fer_report(out / "probe_report.csv", {args.name: fers}, shifts)
    _write_json(out / "probe_config.json",
                {"probe": dataclasses.asdict(cfg), "shifts": shifts,
                 "source": args.name, "collapse": args.collapse})
    print(f"report: {out / 'probe_report.csv'}")


def cmd_sweep(args):
    _limit_threads(args.threads)
    train_corpus, val_corpus = _load_split(args.data, args.val_data)
    dim = train_corpus[0][1].frames.shape[1]
    model, train = _train_configs(args, dim)
    spec = SweepSpec(ns=tuple(_int_list(args.ns)),
                     sl_pairs=tuple((s, l) for s in _int_list(args.ss)
                                    for l in _int_list(args.ls)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json",
                {**_effective_config(model, train),
                 "sweep": {"ns": list(spec.ns), "sl_pairs": [list(p) for p in spec.sl_pairs]}})
    run_sweep(train_corpus, val_corpus, model, train, spec, out,
              force=args.force, log=lambda msg: print(msg, flush=True))
    print(f"summary: {out / 'summary.csv'}")


def cmd_report(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "horizon_loss.csv"
    png_path = out / "horizon_loss.png"
    report_horizon_chart(args.sweep, csv_path, png_path)
    print(f"wrote {csv_path} and {png_path}")


# ---------------------------------------------------------------- parser

def _add_train_flags(p):
    p.add_argument("--config", help="JSON file of training keys; flags win")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--objective", choices=("lf", "lm"))
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--n", type=int, help="prediction horizon in frames")
    p.add_argument("--s", type=int, help="reconstruction window offset")
    p.add_argument("--l", type=int, help="reconstruction window length")
    p.add_argument("--lambda", dest="lam", type=float,
                   help="weight of the reconstruction term")
    p.add_argument("--p-anchor", dest="p_anchor", type=float,
                   help="per-frame anchor probability")
    p.add_argument("--hidden", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--threads", type=int, help="best-effort BLAS thread cap")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcrep",
        description="Self-supervised speech representation training and probing")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--split", help="comma counts for train,val[,test] subdirs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--dim", type=int, default=20)
    p.add_argument("--noise-scale", dest="noise_scale", type=float, default=1.0)
    p.add_argument("--mean-scale", dest="mean_scale", type=float, default=1.0)
    p.add_argument("--mean-duration", dest="mean_duration", type=float, default=7.0)
    p.add_argument("--successor-bias", dest="successor_bias", type=float, default=0.5)
    p.add_argument("--min-len", dest="min_len", type=int, default=60)
    p.add_argument("--max-len", dest="max_len", type=int, default=120)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="wav files to log Mel feature files")
    p.add_argument("--audio", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sample-rate", dest="sample_rate", type=int, default=16000)
    p.add_argument("--window", type=int, default=400)
    p.add_argument("--hop", type=int, default=160)
    p.add_argument("--fft", type=int, default=512)
    p.add_argument("--mels", type=int, default=80)
    p.add_argument("--fmin", type=float, default=0.0)
    p.add_argument("--fmax", type=float, default=8000.0)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("pretrain", help="train an encoder on a feature corpus")
    p.add_argument("--data", required=True)
    p.add_argument("--val-data", dest="val_data")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true")
    _add_train_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("extract", help="frozen features from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("probe", help="linear probe over time-shifted labels")
    p.add_argument("--train", required=True, help="labeled feature dir")
    p.add_argument("--val", required=True, help="labeled feature dir")
    p.add_argument("--out", required=True)
    p.add_argument("--shifts", default="0",
                   help="comma list; write --shifts=-5,0,5 for negatives")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--collapse", help="label collapse map file")
    p.add_argument("--name", default="features", help="row label in the report")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("sweep", help="horizon and window grid of training runs")
    p.add_argument("--data", required=True)
    p.add_argument("--val-data", dest="val_data")
    p.add_argument("--out", required=True)
    p.add_argument("--ns", default="1,3,5,7,9")
    p.add_argument("--ss", default="7,14,20")
    p.add_argument("--ls", default="3,7")
    p.add_argument("--force", action="store_true",
                   help="retrain cells left partial by an interrupted sweep")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="loss-by-horizon table and chart from a sweep")
    p.add_argument("--sweep", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
