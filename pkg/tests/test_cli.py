import json
import subprocess
import sys

import pytest

from tlaser.cli import main
from tlaser.train import read_log

RUN = {
    "synth": {"seed": 4, "n_languages": 3, "base_vocab_size": 40,
              "sentences_per_split": {"train": 60, "dev": 16, "test": 20}, "doc_length": [2, 6]},
    "model": {"d_model": 16, "n_heads": 2, "d_fc": 32, "n_enc_layers": 1, "n_dec_layers": 1,
              "d_lang": 4, "max_positions": 24},
    "train": {"seed": 1, "n_epochs": 1, "base_lr": 0.003, "warmup_steps": 5, "max_tokens": 96, "dropout_p": 0.1},
    "loss": {"beta": 0.25, "n_neg": 2},
    "data": {"pivots": ["L0", "L1"]},
    "eval": {"seed": 0, "max_epochs": 3, "hidden": 8},
}


def pipeline(root):
    root.mkdir()
    cfg = root / "run.json"
    cfg.write_text(json.dumps(RUN))
    c, v, m = root / "corpus", root / "vocab.txt", root / "model"
    steps = [
        ["gen-corpus", "--config", cfg, "--out", c],
        ["learn-bpe", "--corpus", c, "--vocab-size", "150", "--out", v],
        ["train", "--config", cfg, "--corpus", c, "--vocab", v, "--out", m],
        ["embed", "--checkpoint", m / "checkpoint_last.tlck", "--input", c / "test.L0.txt",
         "--out", root / "a.emb", "--lang", "L0"],
        ["embed", "--checkpoint", m / "checkpoint_last.tlck", "--input", c / "test.L2.txt",
         "--out", root / "b.emb", "--lang", "L2"],
        ["eval", "--checkpoint", m / "checkpoint_last.tlck", "--dataset", c, "--report",
         root / "report.json", "--config", cfg],
        ["plot", "--emb-a", root / "a.emb", "--emb-b", root / "b.emb", "--out", root / "pairs.svg"],
    ]
    for argv in steps:
        assert main([str(x) for x in argv]) == 0, argv


def artifacts(root):
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != "train_log.jsonl":
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


def test_pipeline_is_idempotent(tmp_path):
    pipeline(tmp_path / "x")
    pipeline(tmp_path / "y")
    x, y = artifacts(tmp_path / "x"), artifacts(tmp_path / "y")
    assert x.keys() == y.keys()
    assert [k for k in x if x[k] != y[k]] == []
    logs = [read_log(tmp_path / r / "model" / "train_log.jsonl", drop_timing=True) for r in "xy"]
    assert logs[0] == logs[1] and logs[0]
    report = json.loads((tmp_path / "x" / "report.json").read_text())
    assert report["languages"] == ["L0", "L1", "L2"]
    assert set(report) >= {"cross", "same", "all", "x_cross", "paired_distance"}
    assert (tmp_path / "x" / "report.tsv").exists() and (tmp_path / "x" / "pairs.tsv").exists()


def test_help_and_usage_errors(capsys):
    assert main(["--help"]) == 0
    assert "grad-check" in capsys.readouterr().out
    assert main(["frobnicate"]) == 1
    assert "invalid choice" in capsys.readouterr().err
    assert main([]) == 1
    assert main(["train", "--bogus"]) == 1
    assert main(["embed", "--help"]) == 0


def test_data_errors_exit_2(tmp_path, caplog):
    assert main(["gen-corpus", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    (tmp_path / "bad.json").write_text(json.dumps({"synth": {"seed": 0, "colour": 1}}))
    assert main(["gen-corpus", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path)]) == 2
    assert "colour" in caplog.text
    (tmp_path / "empty.json").write_text("{}")
    assert main(["gen-corpus", "--config", str(tmp_path / "empty.json"), "--out", str(tmp_path)]) == 2
    assert main(["learn-bpe", "--corpus", str(tmp_path), "--vocab-size", "50", "--out", "v"]) == 2


def test_grad_check_config_errors(tmp_path):
    (tmp_path / "g.json").write_text(json.dumps({"loss": {"n_neg": 3}, "grad_check": {"n_pairs": 2}}))
    assert main(["grad-check", "--config", str(tmp_path / "g.json")]) == 2


@pytest.mark.slow
def test_grad_check_toy_passes(tmp_path):
    (tmp_path / "toy.json").write_text(json.dumps({"grad_check": {"seed": 0}}))
    proc = subprocess.run([sys.executable, "-m", "tlaser", "grad-check", "--config", str(tmp_path / "toy.json")],
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.strip().splitlines()[-1].startswith("PASS")
