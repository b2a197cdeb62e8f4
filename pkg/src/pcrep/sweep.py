"""Grid runs over prediction horizon and reconstruction window geometry.

Each cell trains one model (a pure-prediction baseline per horizon, plus one
composite run per window shape) into its own subdirectory. A cell.json marker
written after training makes completed cells skippable, so an interrupted
sweep picks up where it stopped.
"""

from __future__ import annotations

import json
import shutil
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

from .model import ModelConfig
from .trainer import TrainConfig, pretrain

SUMMARY_COLUMNS = ["n", "s", "l", "objective", "val_Lf", "val_Lr"]


class SweepError(ValueError):
    pass


@dataclass
class SweepSpec:
    ns: tuple = (1, 3, 5, 7, 9)
    sl_pairs: tuple = ((7, 3), (7, 7), (14, 3), (14, 7), (20, 3), (20, 7))

    def validate(self):
        if not self.ns:
            raise SweepError("need at least one horizon")
        if len(set(self.ns)) != len(self.ns):
            raise SweepError("duplicate horizons")
        if len(set(self.sl_pairs)) != len(self.sl_pairs):
            raise SweepError("duplicate window shapes")


def _cells(spec: SweepSpec):
    for n in spec.ns:
        yield {"n": int(n), "s": None, "l": None, "objective": "lf"}
        for s, l in spec.sl_pairs:
            yield {"n": int(n), "s": int(s), "l": int(l), "objective": "lm"}


def cell_name(cell: dict) -> str:
    if cell["objective"] == "lf":
        return f"n{cell['n']}_base"
    return f"n{cell['n']}_s{cell['s']}_l{cell['l']}"


def _cell_cfg(base: TrainConfig, cell: dict) -> TrainConfig:
    obj = replace(base.obj, n=cell["n"])
    if cell["objective"] == "lm":
        obj = replace(obj, s=cell["s"], l=cell["l"])
    return replace(base, objective=cell["objective"], obj=obj)


def run_sweep(train_corpus: list, val_corpus: list, model_cfg: ModelConfig,
              train_cfg: TrainConfig, spec: SweepSpec, out_dir,
              force: bool = False, log=None) -> list:
    """Train every cell of the grid, returning the cell records in grid order.

    A directory with contents but no completion marker is a partial run:
    refused unless force, which clobbers and retrains that cell. Reported
    losses are final-epoch validation values; the reconstruction loss of a
    baseline is recorded as 0 since no window shape belongs to it.
    """
    spec.validate()
    train_cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for cell in _cells(spec):
        cdir = out_dir / cell_name(cell)
        marker = cdir / "cell.json"
        if marker.exists():
            records.append(json.loads(marker.read_text()))
            continue
        if cdir.exists() and any(cdir.iterdir()):
            if not force:
                raise SweepError(
                    f"{cdir} holds a partial run; pass force=True to redo it")
            shutil.rmtree(cdir)
        cfg = _cell_cfg(train_cfg, cell)
        if log:
            log(f"training {cell_name(cell)}")
        result = pretrain(train_corpus, val_corpus, model_cfg, cfg, cdir)
        record = dict(cell)
        record["val_Lf"] = float(result.final_val.lf)
        record["val_Lr"] = float(result.final_val.lr) if cell["objective"] == "lm" else 0.0
        record["epochs"] = cfg.epochs
        record["seed"] = cfg.seed
        marker.write_text(json.dumps(record, indent=2) + "\n")
        records.append(record)
    write_summary(out_dir / "summary.csv", records)
    return records


def write_summary(path, records: list):
    with open(path, "w") as fh:
        fh.write(",".join(SUMMARY_COLUMNS) + "\n")
        for r in records:
            s = "-" if r["s"] is None else str(r["s"])
            l = "-" if r["l"] is None else str(r["l"])
            fh.write(f"{r['n']},{s},{l},{r['objective']},"
                     f"{r['val_Lf']!r},{r['val_Lr']!r}\n")


def _series(record: dict) -> str:
    if record["objective"] == "lf":
        return "baseline"
    return f"s{record['s']}l{record['l']}"


def load_records(sweep_dir) -> list:
    """All completed cell records under a sweep directory, in canonical order
    (horizon, baseline first, then window shape)."""
    sweep_dir = Path(sweep_dir)
    records = [json.loads(p.read_text()) for p in sorted(sweep_dir.glob("*/cell.json"))]
    records.sort(key=lambda r: (r["n"], r["objective"] != "lf",
                                r["s"] or 0, r["l"] or 0))
    return records


def report_horizon_chart(sweep_dir, out_csv, out_png=None,
                         spec: SweepSpec | None = None) -> list:
    """Emit the horizon-vs-loss data table (and optionally a grouped bar
    chart) from the completed cells of a sweep.

    With a spec, expected-but-missing cells produce a warning and are left
    out. Re-running over the same cells rewrites the CSV byte-identically.
    """
    records = load_records(sweep_dir)
    if spec is not None:
        have = {cell_name(r) for r in records}
        for cell in _cells(spec):
            if cell_name(cell) not in have:
                warnings.warn(f"sweep cell {cell_name(cell)} missing, omitted")
    if not records:
        raise SweepError(f"no completed cells under {sweep_dir}")

    with open(out_csv, "w") as fh:
        fh.write("n,series,val_Lf,val_Lr\n")
        for r in records:
            fh.write(f"{r['n']},{_series(r)},{r['val_Lf']!r},{r['val_Lr']!r}\n")

    if out_png is not None:
        _plot_grouped_bars(records, out_png)
    return records


def _plot_grouped_bars(records: list, out_png):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ns = sorted({r["n"] for r in records})
    series = []
    for r in records:
        name = _series(r)
        if name not in series:
            series.append(name)
    width = 0.8 / len(series)
    fig, ax = plt.subplots(figsize=(7, 4))
    for k, name in enumerate(series):
        xs, ys = [], []
        for i, n in enumerate(ns):
            for r in records:
                if r["n"] == n and _series(r) == name:
                    xs.append(i + (k - (len(series) - 1) / 2) * width)
                    ys.append(r["val_Lf"])
        ax.bar(xs, ys, width=width, label=name)
    ax.set_xticks(range(len(ns)))
    ax.set_xticklabels([str(n) for n in ns])
    ax.set_xlabel("prediction horizon (frames)")
    ax.set_ylabel("validation prediction loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
