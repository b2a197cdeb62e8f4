"""Probe frozen features across time shifts and tabulate the error rates.

Loads one or more pretraining checkpoints, extracts hidden-state features
for a labeled corpus, then fits a linear probe per (source, shift) cell.
A raw-frame baseline row makes the representations' gain visible, and the
asymmetry between negative and positive shifts shows how much more the
features remember than they anticipate.

    python3 scripts/probe_shifts.py --data runs/sweep/data \\
        --ckpt runs/sweep/n5_base/best.pckp runs/sweep/n5_s7_l3/best.pckp \\
        --out runs/probe
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from pcrep.checkpoint import load_checkpoint
from pcrep.model import extract_features
from pcrep.probe import ProbeConfig, corpus_pairs, fit_probe, write_fer_report
from pcrep.synthdata import load_corpus


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", type=Path, required=True, help="labeled features")
    ap.add_argument("--ckpt", type=Path, nargs="+", required=True,
                    help="checkpoints to probe, one report row each")
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--val-utts", type=int, default=40)
    ap.add_argument("--shifts", type=int, nargs="+",
                    default=[-15, -10, -5, -2, 0, 2, 5, 10, 15])
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--lr", type=float, default=1e-2)
    return ap.parse_args()


def probe_row(train_pairs, val_pairs, n_classes, shifts, cfg):
    row = {}
    for shift in shifts:
        tx, ty = corpus_pairs(train_pairs, shift)
        vx, vy = corpus_pairs(val_pairs, shift)
        row[shift] = fit_probe(tx, ty, vx, vy, n_classes, cfg).val_fer
        print(f"  shift {shift:+d}: FER {row[shift]:.4f}")
    return row


def main():
    args = parse_args()
    corpus = load_corpus(args.data)
    split = len(corpus) - args.val_utts
    train, val = corpus[:split], corpus[split:]
    n_classes = train[0][1].n_classes
    if n_classes is None:
        raise SystemExit("corpus has no labels to probe against")
    cfg = ProbeConfig(epochs=args.epochs, lr=args.lr)

    rows = {}
    print("raw frames")
    rows["raw"] = probe_row([(u.frames, u.labels) for _, u in train],
                            [(u.frames, u.labels) for _, u in val],
                            n_classes, args.shifts, cfg)
    for ckpt in args.ckpt:
        state, _, _ = load_checkpoint(ckpt)
        name = ckpt.parent.name or ckpt.stem
        print(name)
        feats = [[(extract_features(state.params, u.frames, state.norm_mean,
                                    state.norm_std), u.labels)
                  for _, u in part] for part in (train, val)]
        rows[name] = probe_row(feats[0], feats[1], n_classes, args.shifts, cfg)

    args.out.mkdir(parents=True, exist_ok=True)
    write_fer_report(args.out / "probe_report.csv", rows, args.shifts)
    print(f"report -> {args.out / 'probe_report.csv'}")


if __name__ == "__main__":
    main()
