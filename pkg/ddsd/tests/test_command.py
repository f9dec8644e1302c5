import json
import os
from io import StringIO

import pytest
from django.core.management import call_command
from django.core.management.base import CommandError

from Key import Key
from benchmark.dataset import read_dataset
from ddsd.cli import run_command
from machine_learning.ablation import read_rows

TINY = """
[run]
seed = 5

[model]
embedding_width = 16
layers = 2
heads = 2
ffn_width = 32
max_length = 32
vocab_size = 512
max_tokens = 8

[pretrain]
corpus_size = 60
epochs = 1
batch_size = 16

[train]
epochs = 1
batch_size = 16

[ablation Uni 1]
modalities = t
seeds = 0
providers = specialized-256

[ablation Multi 4]
modalities = t,a,b
seeds = 0
providers = specialized-256

[ablation Multi 4.5]
modalities = t,a,b
train_size = 10
seeds = 0
providers = specialized-256
"""

SWEEP_FILES = [Key.FILE_REPORT, Key.FILE_TABLE, Key.FILE_CHECKS]


def read_bytes(directory, names):
    contents = []
    for name in names:
        with open(os.path.join(directory, name), "rb") as f:
            contents.append(f.read())
    return contents


def ddsd(*args):
    out = StringIO()
    call_command("ddsd", *[str(a) for a in args], stdout = out)
    return out.getvalue()


def test_gen_data(tmp_path):
    out = os.path.join(str(tmp_path), "data")
    text = ddsd(
        "gen-data", "--out", out, "--train", 10, "--eval", 6, "--seed", 3,
        "--trigger-marker",
    )
    assert "written to" in text
    train, eval_examples, manifest = read_dataset(out)
    assert len(train) == 10 and len(eval_examples) == 6
    assert manifest["spec"]["seed"] == 3
    assert manifest["spec"]["trigger_marker"] is True
    with open(os.path.join(out, Key.FILE_CONFIG)) as f:
        effective = f.read()
    assert "seed = 3" in effective
    assert "train_size = 10" in effective


def test_gen_data_is_reproducible(tmp_path):
    manifests = []
    for name in ["first", "second"]:
        out = os.path.join(str(tmp_path), name)
        ddsd("gen-data", "--out", out, "--train", 8, "--eval", 4)
        with open(os.path.join(out, "manifest.json")) as f:
            manifests.append(json.load(f))
    assert manifests[0] == manifests[1]


def test_odd_train_size_is_a_command_error(tmp_path):
    with pytest.raises(CommandError):
        ddsd("gen-data", "--out", str(tmp_path), "--train", 9)


def test_unknown_subcommand():
    with pytest.raises(CommandError):
        ddsd("fit")


def test_missing_inputs(tmp_path):
    with pytest.raises(CommandError, match = "does not exist"):
        ddsd("report", "--input", os.path.join(str(tmp_path), "report.jsonl"))
    with pytest.raises(CommandError, match = "missing input"):
        ddsd(
            "train", "--out", str(tmp_path),
            "--base", os.path.join(str(tmp_path), "base.ckpt"),
            "--data", str(tmp_path),
        )
    with pytest.raises(CommandError, match = "--config"):
        ddsd("sweep", "--out", str(tmp_path))


def test_report(tmp_path):
    row = {
        "name": "Uni 1", "lora": True, "modalities": ["t"], "train_size": 40,
        "seed": "median", "parameters": {"specialized-256": 100},
        "eer": {"specialized-256": 0.25},
    }
    path = os.path.join(str(tmp_path), "report.jsonl")
    with open(path, "w") as f:
        f.write(json.dumps(row) + "\n")
    text = ddsd("report", "--input", path)
    assert "25.00%" in text
    assert "skip" in text


def test_run_command_exit_status(tmp_path):
    assert run_command(
        ["report", "--input", os.path.join(str(tmp_path), "none.jsonl")]
    ) == 1
    assert run_command(["fit"]) == 2


@pytest.mark.slow
def test_pipeline(tmp_path):
    root = str(tmp_path)
    config = os.path.join(root, "tiny.cfg")
    with open(config, "w") as f:
        f.write(TINY)
    data = os.path.join(root, "data")
    base = os.path.join(root, "base")
    model = os.path.join(root, "model")
    evaluation = os.path.join(root, "eval")
    grid = os.path.join(root, "grid")

    ddsd("gen-data", "--config", config, "--out", data, "--train", 40,
         "--eval", 20)
    assert "held-out perplexity" in ddsd(
        "pretrain", "--config", config, "--out", base,
    )
    base_path = os.path.join(base, Key.FILE_BASE)
    train = [
        "train", "--config", config, "--out", model, "--base", base_path,
        "--data", data, "--modalities", "t,a,b",
    ]
    ddsd(*train)
    trained = read_bytes(model, [Key.FILE_MODEL, Key.FILE_TRAIN_REPORT])
    ddsd(*train)
    assert read_bytes(model, [Key.FILE_MODEL, Key.FILE_TRAIN_REPORT]) \
        == trained
    with open(os.path.join(model, Key.FILE_TRAIN_REPORT)) as f:
        report = json.load(f)
    assert report["provenance"]["train_examples"] == 40
    assert len(report["epoch_losses"]) == 1

    assert "EER" in ddsd(
        "eval", "--config", config, "--out", evaluation, "--base", base_path,
        "--data", data, "--model", os.path.join(model, Key.FILE_MODEL),
    )
    with open(os.path.join(evaluation, Key.FILE_EVAL)) as f:
        result = json.load(f)
    assert abs(result["eer"] - result["oracle_eer"]) < 1e-9
    assert result["counts"] == {"directed": 8, "non_directed": 12}
    for name in [Key.FILE_SCORES, Key.FILE_DET, Key.FILE_DET_PLOT]:
        assert os.path.exists(os.path.join(evaluation, name))

    sweep = [
        "sweep", "--config", config, "--out", grid, "--base", base_path,
        "--data", data,
    ]
    text = ddsd(*sweep)
    reports = read_bytes(grid, SWEEP_FILES)
    ddsd(*sweep)
    assert read_bytes(grid, SWEEP_FILES) == reports
    assert "Multi 4.5" in text
    rows = read_rows(os.path.join(grid, Key.FILE_REPORT))
    assert [r["name"] for r in rows] == [
        "Uni 1", "Multi 4", "Multi 4.5", "Uni 1", "Multi 4", "Multi 4.5",
    ]
    assert rows[2]["train_size"] == 10
    assert len({r["config_hash"] for r in rows}) == 1
    for name in [Key.FILE_TABLE, Key.FILE_CHECKS, Key.FILE_SIZE_SWEEP]:
        assert os.path.exists(os.path.join(grid, name))


@pytest.mark.slow
def test_sweep_over_two_bases(tmp_path):
    root = str(tmp_path)
    config = os.path.join(root, "tiny.cfg")
    with open(config, "w") as f:
        f.write(TINY)
    data = os.path.join(root, "data")
    ddsd("gen-data", "--config", config, "--out", data, "--train", 20,
         "--eval", 10)
    bases = []
    for label, seed in [("first", 5), ("second", 6)]:
        out = os.path.join(root, label)
        ddsd("pretrain", "--config", config, "--out", out, "--seed", seed)
        bases.append("{}={}".format(label, os.path.join(out, Key.FILE_BASE)))

    grid = os.path.join(root, "grid")
    text = ddsd("sweep", "--config", config, "--out", grid, "--base",
                ",".join(bases), "--data", data)
    assert "base second" in text
    rows = read_rows(os.path.join(grid, Key.FILE_REPORT))
    assert [(r["base"], r["seed"]) for r in rows[:3]] == [("first", 0)] * 3
    assert [r["base"] for r in rows[3:6]] == ["second"] * 3
    assert len({r["base_digest"] for r in rows}) == 2
    with open(os.path.join(grid, Key.FILE_CHECKS)) as f:
        assert list(json.load(f)) == ["first", "second"]
