import json

import numpy as np
import pytest

from avel_refine import cli
from avel_refine.model import ModelConfig, save_checkpoint, zero_params

TINY_INI = """\
[corpus]
n_event = 24
n_background = 4
T = 10
n_classes = 3
d_audio = 4
d_visual = 4

[model]
hidden = 8

[train]
stage1_epochs = 3
stage3_epochs = 3
batch_size = 8

[run]
taus = 0.05,0.1
"""


@pytest.fixture
def ini(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI)
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def metrics_records(path):
    return {r["variant"]: r for r in map(json.loads, path.read_text().splitlines())
            if r["record"] == "metrics"}


def test_gen_idempotent(tmp_path, ini, capsys):
    for name in ("a", "b"):
        assert run("gen", "--config", ini, "--seed", 3, "--out", tmp_path / name) == 0
    assert (tmp_path / "a/corpus.jsonl").read_bytes() == (tmp_path / "b/corpus.jsonl").read_bytes()
    out = capsys.readouterr().out
    assert "background segment fraction" in out and "event length histogram" in out


def test_resolved_config_reproduces_run(tmp_path, ini):
    assert run("gen", "--config", ini, "--seed", 5, "--out", tmp_path / "a") == 0
    assert run("gen", "--config", tmp_path / "a/resolved_config.ini", "--out", tmp_path / "b") == 0
    assert (tmp_path / "a/corpus.jsonl").read_bytes() == (tmp_path / "b/corpus.jsonl").read_bytes()


def test_usage_errors(tmp_path, ini, capsys):
    assert run("frobnicate") == 1
    assert run("gen", "--window", "4;2", "--config", ini, "--out", tmp_path) == 1
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nlearning_rate = 3\n")
    assert run("gen", "--config", bad, "--out", tmp_path) == 1
    assert "learning_rate" in capsys.readouterr().err
    bad.write_text("[extras]\nx = 1\n")
    assert run("gen", "--config", bad, "--out", tmp_path) == 1


def test_data_errors(tmp_path, ini, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text(TINY_INI.replace("T = 10", "T = 10\nmin_event_len = 11"))
    assert run("gen", "--config", bad, "--out", tmp_path) == 2
    assert run("train", "--config", ini, "--out", tmp_path / "empty") == 2
    assert str(tmp_path / "empty" / "corpus.jsonl") in capsys.readouterr().err
    assert run("gen", "--config", ini, "--out", tmp_path) == 0
    corpus = tmp_path / "corpus.jsonl"
    lines = corpus.read_text().splitlines(keepends=True)
    header = json.loads(lines[0])
    header["version"] = 0
    corpus.write_text(json.dumps(header) + "\n" + "".join(lines[1:]))
    assert run("train", "--config", ini, "--out", tmp_path) == 2
    assert "version" in capsys.readouterr().err


def test_numeric_failure(tmp_path, ini):
    assert run("gen", "--config", ini, "--out", tmp_path) == 0
    ini.write_text(TINY_INI.replace("batch_size = 8", "batch_size = 8\nlr = 1e300"))
    with np.errstate(all="ignore"):
        assert run("train", "--config", ini, "--out", tmp_path) == 3


def test_staged_equals_monolithic(tmp_path, ini):
    staged, mono = tmp_path / "staged", tmp_path / "mono"
    for cmd in ("gen", "train", "refine", "retrain", "eval"):
        assert run(cmd, "--config", ini, "--seed", 2, "--out", staged, "--threads", 1) == 0
    assert run("gen", "--config", ini, "--seed", 2, "--out", mono) == 0
    assert run("ablate", "--config", ini, "--seed", 2, "--out", mono) == 0
    staged_m = metrics_records(staged / "eval.jsonl")["model"]
    mono_m = metrics_records(mono / "ablation.jsonl")["BASE+A+LR"]
    for rec in (staged_m, mono_m):
        rec.pop("variant")
    assert staged_m == mono_m
    table = (mono / "ablation.txt").read_text()
    for name in ("BASE", "BASE+PL", "BASE+LRdummy", "BASE+LR", "BASE+A+LR"):
        assert f"\n{name} " in table


def test_commands_idempotent(tmp_path, ini):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        for cmd in ("gen", "train", "refine", "retrain", "eval"):
            assert run(cmd, "--config", ini, "--out", out) == 0
        outs.append(out)
    for f in sorted(p.name for p in outs[0].iterdir()):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f


def test_eval_zero_checkpoint(tmp_path, ini):
    assert run("gen", "--config", ini, "--out", tmp_path) == 0
    save_checkpoint(zero_params(ModelConfig(d_audio=4, d_visual=4, hidden=8, n_classes=3)),
                    tmp_path / "stage3.ckpt")
    assert run("eval", "--config", ini, "--out", tmp_path) == 0
    cm = np.array(metrics_records(tmp_path / "eval.jsonl")["model"]["confusion"])
    assert cm[:, 1:].sum() == 0 and cm[:, 0].sum() > 0


def test_sweeps(tmp_path, ini):
    assert run("gen", "--config", ini, "--out", tmp_path) == 0
    assert run("sweep", "tau", "--config", ini, "--out", tmp_path) == 0
    recs = [json.loads(x) for x in (tmp_path / "sweep_tau.jsonl").read_text().splitlines()]
    assert [r["key"] for r in recs] == [[0.05], [0.1]]
    assert run("sweep", "window", "--config", ini, "--out", tmp_path) == 0
    recs = [json.loads(x) for x in (tmp_path / "sweep_window.jsonl").read_text().splitlines()]
    assert {tuple(r["key"]): r["T1"] for r in recs} == {(2, 2): 5, (3, 1): 8, (4, 2): 4, (5, 5): 2}
    assert all(r["rejected"] is None and "accuracy" in r for r in recs)
