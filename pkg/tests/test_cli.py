import csv
import json

import numpy as np
import pytest
from scipy.io import wavfile

from pcrep.cli import main
from pcrep.frontend import read_features
from pcrep.synthdata import load_corpus

TRAIN_FLAGS = ["--epochs", "2", "--batch-size", "4", "--lr", "1e-3",
               "--hidden", "8", "--layers", "1",
               "--n", "1", "--s", "4", "--l", "3", "--p-anchor", "0.25"]


def synth_args(out, train=6, val=2):
    return ["synth", "--out", str(out), "--split", f"{train},{val}",
            "--classes", "4", "--dim", "6", "--min-len", "30",
            "--max-len", "36", "--seed", "3"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> pretrain -> extract, shared by the downstream tests."""
    root = tmp_path_factory.mktemp("cli")
    data, run = root / "data", root / "run"
    assert main(synth_args(data)) == 0
    assert main(["pretrain", "--data", str(data), "--out", str(run),
                 "--seed", "1"] + TRAIN_FLAGS) == 0
    for split in ("train", "val"):
        assert main(["extract", "--ckpt", str(run / "best.pckp"),
                     "--data", str(data / split),
                     "--out", str(root / "feats" / split)]) == 0
    return root


# ------------------------------------------------------------ synth

def test_synth_split_layout(tmp_path):
    assert main(synth_args(tmp_path, 5, 2)) == 0
    assert len(load_corpus(tmp_path / "train")) == 5
    assert len(load_corpus(tmp_path / "val")) == 2
    cfg = json.loads((tmp_path / "config.json").read_text())
    assert cfg["synth"]["classes"] == 4
    first = load_corpus(tmp_path / "train")[0][1]
    assert first.labels is not None and first.n_classes == 4


def test_synth_rejects_bad_split(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--split", "5"]) == 1
    assert "error:" in capsys.readouterr().err


# ------------------------------------------------------------ pretrain

def test_pretrain_outputs(pipeline):
    run = pipeline / "run"
    rows = list(csv.DictReader(open(run / "metrics.csv")))
    assert len(rows) == 4                     # 2 epochs x (train + val)
    assert (run / "best.pckp").exists() and (run / "last.pckp").exists()
    effective = json.loads((run / "config.json").read_text())
    assert effective["train"]["epochs"] == 2
    assert effective["model"]["hidden"] == 8


def test_pretrain_resume_noop(pipeline, capsys):
    run = pipeline / "run"
    before = (run / "last.pckp").read_bytes()
    assert main(["pretrain", "--data", str(pipeline / "data"),
                 "--out", str(run), "--seed", "1", "--resume"] + TRAIN_FLAGS) == 0
    assert (run / "last.pckp").read_bytes() == before


def test_config_file_precedence(pipeline, tmp_path):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"epochs": 1, "lr": 0.002, "hidden": 8,
                                    "layers": 1, "n": 1, "s": 4, "l": 3,
                                    "p_anchor": 0.25}))
    out = tmp_path / "run"
    assert main(["pretrain", "--data", str(pipeline / "data"),
                 "--out", str(out), "--config", str(cfg_file),
                 "--epochs", "2", "--batch-size", "4", "--seed", "1"]) == 0
    effective = json.loads((out / "config.json").read_text())
    assert effective["train"]["epochs"] == 2        # flag beats file
    assert effective["train"]["lr"] == 0.002        # file beats default


def test_unknown_config_key_fails(pipeline, tmp_path, capsys):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"epoch": 5}))
    assert main(["pretrain", "--data", str(pipeline / "data"),
                 "--out", str(tmp_path / "x"), "--config", str(cfg_file)]) == 1
    assert "unknown config keys" in capsys.readouterr().err


def test_missing_data_dir_fails(tmp_path, capsys):
    assert main(["pretrain", "--data", str(tmp_path / "nowhere"),
                 "--out", str(tmp_path / "out")]) == 1
    assert "error:" in capsys.readouterr().err


# ------------------------------------------------------------ extract + probe

def test_extracted_features_shape(pipeline):
    feats = load_corpus(pipeline / "feats" / "train")
    assert len(feats) == 6
    mat = feats[0][1]
    assert mat.frames.shape[1] == 8            # encoder width, not input dim
    assert mat.labels is not None and mat.n_classes == 4


def test_probe_over_shifts(pipeline):
    out = pipeline / "probe"
    assert main(["probe", "--train", str(pipeline / "feats" / "train"),
                 "--val", str(pipeline / "feats" / "val"),
                 "--out", str(out), "--shifts=-1,0,1",
                 "--epochs", "5", "--name", "encoder"]) == 0
    lines = (out / "probe_report.csv").read_text().splitlines()
    assert lines[0] == "source,-1,0,1"
    assert lines[1].startswith("encoder,")
    assert json.loads((out / "probe_config.json").read_text())["shifts"] == [-1, 0, 1]


def test_probe_with_collapse_map(pipeline, tmp_path):
    collapse = tmp_path / "map.txt"
    collapse.write_text("0 0\n1 0\n2 1\n3 1\n")
    out = tmp_path / "probe"
    assert main(["probe", "--train", str(pipeline / "feats" / "train"),
                 "--val", str(pipeline / "feats" / "val"),
                 "--out", str(out), "--shifts", "0", "--epochs", "5",
                 "--collapse", str(collapse)]) == 0
    row = (out / "probe_report.csv").read_text().splitlines()[1]
    fer = float(row.split(",")[1])
    assert 0.0 <= fer <= 100.0


# ------------------------------------------------------------ featurize

def test_featurize_wavs(tmp_path):
    audio = tmp_path / "audio"
    audio.mkdir()
    t = np.arange(16000) / 16000.0
    for name, freq in (("a", 440.0), ("b", 1000.0)):
        tone = (0.4 * np.sin(2 * np.pi * freq * t) * 32767).astype(np.int16)
        wavfile.write(audio / f"{name}.wav", 16000, tone)
    out = tmp_path / "feats"
    assert main(["featurize", "--audio", str(audio), "--out", str(out)]) == 0
    mat = read_features(out / "a.pcf")
    assert mat.frames.shape == (98, 80)
    assert mat.frame_period == pytest.approx(0.01)


def test_featurize_rejects_rate_mismatch(tmp_path, capsys):
    audio = tmp_path / "audio"
    audio.mkdir()
    wavfile.write(audio / "slow.wav", 8000, np.zeros(8000, dtype=np.int16))
    assert main(["featurize", "--audio", str(audio),
                 "--out", str(tmp_path / "o")]) == 1
    assert "sample rate" in capsys.readouterr().err


# ------------------------------------------------------------ sweep + report

def test_sweep_and_report(tmp_path):
    data = tmp_path / "data"
    assert main(synth_args(data)) == 0
    sweep = tmp_path / "sweep"
    assert main(["sweep", "--data", str(data), "--out", str(sweep),
                 "--ns", "1", "--ss", "4", "--ls", "3", "--epochs", "1",
                 "--batch-size", "4", "--hidden", "8", "--layers", "1",
                 "--p-anchor", "0.25", "--seed", "0"]) == 0
    lines = (sweep / "summary.csv").read_text().splitlines()
    assert len(lines) == 3                     # header + baseline + one window
    report = tmp_path / "report"
    assert main(["report", "--sweep", str(sweep), "--out", str(report)]) == 0
    assert (report / "horizon_loss.csv").exists()
    assert (report / "horizon_loss.png").exists()


# ------------------------------------------------------------ parser

def test_subcommand_required():
    with pytest.raises(SystemExit):
        main([])


def test_pretrain_requires_data_flag():
    with pytest.raises(SystemExit):
        main(["pretrain", "--out", "/tmp/x"])
