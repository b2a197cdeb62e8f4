"""Train the horizon x window grid on a synthetic corpus and chart it.

Generates the corpus on first use, trains one prediction-only baseline plus
one regularized model per window shape at every horizon, then writes the
grid summary and the grouped-bar chart of final validation losses.

    python3 scripts/horizon_sweep.py --out runs/sweep
    python3 scripts/horizon_sweep.py --out runs/big --ns 1 3 5 7 9 --epochs 100
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from pcrep.model import ModelConfig
from pcrep.objectives import ObjectiveConfig
from pcrep.sweep import SweepSpec, report_horizon_chart, run_sweep
from pcrep.synthdata import SynthConfig, generate_corpus, load_corpus, write_corpus
from pcrep.trainer import TrainConfig


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True, help="sweep directory")
    ap.add_argument("--data", type=Path, default=None,
                    help="feature directory (default: <out>/data, generated)")
    ap.add_argument("--utts", type=int, default=240)
    ap.add_argument("--val-utts", type=int, default=40)
    ap.add_argument("--noise", type=float, default=1.0)
    ap.add_argument("--corpus-seed", type=int, default=100)
    ap.add_argument("--ns", type=int, nargs="+", default=[1, 3, 5, 7, 9])
    ap.add_argument("--windows", type=str, nargs="+",
                    default=["7:3", "7:7", "14:3", "14:7", "20:3", "20:7"],
                    help="history:length pairs, e.g. 7:3 14:7")
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--layers", type=int, default=3)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--force", action="store_true",
                    help="retrain cells left behind by interrupted runs")
    return ap.parse_args()


def load_or_make_corpus(args):
    data = args.data or args.out / "data"
    if not data.exists():
        cfg = SynthConfig(seed=args.corpus_seed, noise_scale=args.noise)
        corpus = generate_corpus(cfg, args.utts)
        write_corpus(corpus, data)
        print(f"generated {args.utts} utterances under {data}")
    corpus = load_corpus(data)
    split = len(corpus) - args.val_utts
    return corpus[:split], corpus[split:]


def main():
    args = parse_args()
    train, val = load_or_make_corpus(args)
    dim = train[0][1].frames.shape[1]
    pairs = tuple(tuple(int(x) for x in w.split(":")) for w in args.windows)
    spec = SweepSpec(ns=tuple(args.ns), sl_pairs=pairs)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                      objective="lm", seed=args.seed,
                      obj=ObjectiveConfig(n=args.ns[0], s=pairs[0][0], l=pairs[0][1],
                                          p_anchor=0.15, lam=0.1))
    mc = ModelConfig(layers=args.layers, hidden=args.hidden, dim=dim)
    records = run_sweep(train, val, mc, cfg, spec, args.out,
                        force=args.force, log=print)
    report_horizon_chart(args.out, args.out / "horizon_loss.csv",
                         args.out / "horizon_loss.png")
    print(f"{len(records)} cells -> {args.out / 'summary.csv'}")
    print(f"chart -> {args.out / 'horizon_loss.png'}")


if __name__ == "__main__":
    main()
