import json
import os

import numpy as np
import pytest

from benchmark.dataset import (
    MANIFEST, DatasetFormatError, DatasetSpec, DatasetSpecError, FrameSource,
    content_hash, gen_dataset, read_dataset, read_records, text_bayes_error,
    write_dataset, write_records,
)
from benchmark.features import DIRECTED, NON_DIRECTED
from benchmark.grammar import TRIGGER_MARKER, TemplateGrammar
from machine_learning.Vocabulary import normalize_words

GOLDEN = os.path.join(
    os.path.dirname(os.path.abspath(__file__)), "golden", "seed42_ten.jsonl",
)


def test_generation_is_deterministic(tiny_dataset):
    again = gen_dataset(DatasetSpec(train_size = 40, eval_size = 20, seed = 7))
    assert again == tiny_dataset
    other = gen_dataset(DatasetSpec(train_size = 40, eval_size = 20, seed = 8))
    assert content_hash(*other) != content_hash(*tiny_dataset)


def test_class_balance(tiny_dataset):
    train, eval_examples = tiny_dataset
    assert sum(e.label == DIRECTED for e in train) == 20
    assert sum(e.label == DIRECTED for e in eval_examples) == 8
    assert [e.id for e in train[:2]] == ["train-000000", "train-000001"]
    assert all(e.split == "eval" for e in eval_examples)


def test_spec_validation():
    with pytest.raises(DatasetSpecError):
        DatasetSpec(train_size = 41)
    with pytest.raises(DatasetSpecError):
        DatasetSpec(provider = "external")
    with pytest.raises(DatasetSpecError):
        DatasetSpec(frame_storage = "tape")
    with pytest.raises(DatasetSpecError):
        DatasetSpec(eval_directed_fraction = 1.5)


def test_text_bayes_error():
    grammar = TemplateGrammar()
    assert text_bayes_error(grammar, 0.25) == pytest.approx(0.125)
    assert text_bayes_error(grammar, 0.) == 0.
    assert text_bayes_error(
        grammar, 0.25, directed_prior = 0.4, trigger_rate = 0.5,
    ) == pytest.approx(0.05)
    overlapping = TemplateGrammar(ambiguous = ["Tell me a joke"])
    with pytest.raises(DatasetSpecError):
        text_bayes_error(overlapping, 0.25)


def test_trigger_marker_only_opens_directed_text():
    train, _ = gen_dataset(DatasetSpec(
        train_size = 200, eval_size = 0, trigger_marker = True, seed = 3,
    ))
    marked = [
        e for e in train
        if e.text.lower().startswith(TRIGGER_MARKER + " ")
    ]
    assert len(marked) > 0
    assert all(e.label == DIRECTED for e in marked)


def test_reference_frames_match_inline_frames():
    spec = dict(train_size = 4, eval_size = 2, seed = 11)
    referenced = gen_dataset(DatasetSpec(**spec))
    inline = gen_dataset(DatasetSpec(frame_storage = "inline", **spec))
    assert content_hash(*referenced) == content_hash(*inline)
    source = FrameSource()
    for ref, full in zip(referenced[0] + referenced[1], inline[0] + inline[1]):
        assert np.array_equal(source.frames(ref), full.frames)


def test_dataset_round_trip(tmp_path, tiny_dataset):
    out = str(tmp_path)
    manifest = write_dataset(out, *tiny_dataset, config_hash = "cfg")
    train, eval_examples, read_manifest = read_dataset(out)
    assert (train, eval_examples) == tiny_dataset
    assert read_manifest["content_hash"] == manifest["content_hash"]
    assert read_manifest["counts"]["eval"] == {
        DIRECTED: 8, NON_DIRECTED: 12,
    }


def test_sidecar_frames(tmp_path):
    spec = DatasetSpec(
        train_size = 4, eval_size = 2, seed = 2, frame_storage = "sidecar",
    )
    train, eval_examples = gen_dataset(spec)
    out = str(tmp_path)
    write_dataset(out, train, eval_examples, spec)
    assert os.path.exists(os.path.join(out, "frames_train.ckpt"))
    read_train, _, _ = read_dataset(out)
    assert read_train[0].frames is None
    source = FrameSource(out)
    for original, stored in zip(train, read_train):
        assert np.array_equal(source.frames(stored), original.frames)


def test_tampered_records_are_detected(tmp_path, tiny_dataset):
    out = str(tmp_path)
    write_dataset(out, *tiny_dataset)
    path = os.path.join(out, "train.jsonl")
    with open(path) as f:
        lines = f.readlines()
    record = json.loads(lines[0])
    record["label"] = (
        NON_DIRECTED if record["label"] == DIRECTED else DIRECTED
    )
    lines[0] = json.dumps(record) + "\n"
    with open(path, "w") as f:
        f.writelines(lines)
    with pytest.raises(DatasetFormatError):
        read_dataset(out)


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_dataset(os.path.join(str(tmp_path), "nowhere"))
    assert MANIFEST == "manifest.json"


def test_bad_records(tmp_path, tiny_dataset):
    train, _ = tiny_dataset
    path = os.path.join(str(tmp_path), "train.jsonl")
    write_records(train[:2] + train[:1], path)
    with pytest.raises(DatasetFormatError, match = "duplicate"):
        read_records(path)
    with open(path, "w") as f:
        f.write('{"id": "x", "label": "directed"}\n')
    with pytest.raises(DatasetFormatError, match = "line 1"):
        read_records(path)


def test_stored_frames_follow_the_requested_provider(tmp_path):
    spec = dict(train_size = 2, eval_size = 2, seed = 5)
    referenced = gen_dataset(DatasetSpec(**spec))[0]
    inline_spec = DatasetSpec(frame_storage = "inline", **spec)
    inline = gen_dataset(inline_spec)[0]

    regenerated = FrameSource(provider = "generic-1024").pooled(referenced)
    source = FrameSource(provider = "generic-1024", stored = {
        "provider": "specialized-256", "seed": 5,
    })
    pooled = source.pooled(inline)
    assert pooled.shape == (2, 1024)
    assert np.array_equal(pooled, regenerated)
    assert FrameSource().pooled(inline).shape == (2, 256)

    out = str(tmp_path)
    manifest = write_dataset(
        out, *gen_dataset(DatasetSpec(frame_storage = "sidecar", **spec)),
        DatasetSpec(frame_storage = "sidecar", **spec),
    )
    stored, _, _ = read_dataset(out)
    sidecar = FrameSource.for_dataset(out, manifest, provider = "generic-384")
    assert np.array_equal(
        sidecar.pooled(stored),
        FrameSource(provider = "generic-384").pooled(referenced),
    )
    same = FrameSource.for_dataset(out, manifest, provider = "specialized-256")
    assert np.array_equal(same.pooled(stored), FrameSource(out).pooled(stored))


def test_stored_frames_of_unknown_origin_are_not_relabelled():
    inline = gen_dataset(DatasetSpec(
        train_size = 2, eval_size = 0, frame_storage = "inline",
    ))[0]
    with pytest.raises(DatasetFormatError, match = "unknown provider"):
        FrameSource(provider = "generic-1024").pooled(inline)
    source = FrameSource.for_dataset(None, {"spec": None}, "generic-1024")
    with pytest.raises(DatasetFormatError):
        source.frames(inline[0])


def test_utterance_lengths():
    train, _ = gen_dataset(DatasetSpec(
        train_size = 2000, eval_size = 0, seed = 42,
    ))
    lengths = {DIRECTED: [], NON_DIRECTED: []}
    for example in train:
        lengths[example.label].append(len(normalize_words(example.text)))
    directed = np.mean(lengths[DIRECTED])
    assert abs(directed - 5.4) <= 1.
    assert np.mean(lengths[NON_DIRECTED]) > directed


def test_seed_42_records_match_the_golden_file(tmp_path):
    train, _ = gen_dataset(DatasetSpec(
        train_size = 10, eval_size = 0, seed = 42,
    ))
    path = os.path.join(str(tmp_path), "train.jsonl")
    write_records(train, path)
    with open(path, "rb") as f:
        written = f.read()
    if not os.path.exists(GOLDEN):
        os.makedirs(os.path.dirname(GOLDEN), exist_ok = True)
        with open(GOLDEN, "wb") as f:
            f.write(written)
        pytest.skip("captured {}".format(GOLDEN))
    with open(GOLDEN, "rb") as f:
        assert written == f.read()
