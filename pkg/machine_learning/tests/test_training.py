import math

import numpy as np
import pytest
import tensorflow as tf

from benchmark.dataset import FrameSource
from benchmark.features import DIRECTED, NON_DIRECTED
from machine_learning.Rng import Rng
from machine_learning.prefix_mapping import PROMPT
from machine_learning.tensor_core import check_gradients
from machine_learning.training import (
    DECISION_ONLY, FULL_SEQUENCE, AblationSpec, TrainConfig, TrainingError,
    build_model, build_target_sequence, loss_targets, select_training_subset,
    sequence_loss, target_positions, train_model,
)


def loss_of(model, examples, policy = DECISION_ONLY, pooled = None):
    batch = model.encode(examples, pooled)
    indices, targets = loss_targets(model, examples, policy)
    return float(sequence_loss(model, batch, indices, targets, len(examples)))


def test_target_sequence_layout(vocabulary):
    tokens, mask = build_target_sequence(
        [11, 12], DIRECTED, vocabulary, FULL_SEQUENCE, max_tokens = 4,
    )
    prompt = vocabulary.tokenize(PROMPT)
    assert tokens.tolist() == [11, 12, 0, 0] + prompt + [
        vocabulary.token_id("yes"),
    ]
    assert mask.tolist() == [True, True, False, False, False, False, True]

    tokens, mask = build_target_sequence(
        [11, 12], NON_DIRECTED, vocabulary, DECISION_ONLY, max_tokens = 4,
    )
    assert tokens[-1] == vocabulary.token_id("no")
    assert mask.tolist() == [False] * 6 + [True]


def test_target_sequence_rejects_unknown_label(vocabulary):
    with pytest.raises(TrainingError):
        build_target_sequence([], "maybe", vocabulary)


def test_target_positions():
    assert target_positions(4, 2, True).tolist() == [1, 2, 3, 4, 5, 6, 7]
    assert target_positions(4, 0, True).tolist() == [-1, 0, 1, 2, 3, 4, 5]
    assert target_positions(4, 1, False).tolist() == [
        -1, -1, -1, -1, 0, 1, 2,
    ]


def test_decision_is_read_at_last_context_position(tiny_base, tiny_dataset):
    train, _ = tiny_dataset
    spec = AblationSpec("Multi 4", "t,a,b")
    model, _ = build_model(
        tiny_base, spec, train, seed = 0, frame_source = FrameSource(),
    )
    indices, targets = loss_targets(model, train[:3])
    assert indices.tolist() == [[b, model.context_length - 1] for b in range(3)]
    answers = {DIRECTED: model.yes_id, NON_DIRECTED: model.no_id}
    assert targets.tolist() == [answers[e.label] for e in train[:3]]


def test_uniform_predictor_loss(vocabulary, tiny_base, tiny_dataset):
    train, _ = tiny_dataset
    tiny_base.params["output/kernel"].assign(
        tf.zeros_like(tiny_base.params["output/kernel"])
    )
    tiny_base.params["output/bias"].assign(
        tf.zeros_like(tiny_base.params["output/bias"])
    )
    model, _ = build_model(tiny_base, AblationSpec("Uni 1", "t"), train, 0)
    # each selected target costs ln 512 = 9 ln 2
    assert loss_of(model, train[:4]) == pytest.approx(
        9. * math.log(2.), abs = 1e-12,
    )
    indices, _ = loss_targets(model, train[:4], FULL_SEQUENCE)
    assert loss_of(model, train[:4], FULL_SEQUENCE) == pytest.approx(
        len(indices) / 4. * 9. * math.log(2.), abs = 1e-12,
    )


def test_loss_matches_hand_computation(tiny_base, tiny_dataset):
    train, _ = tiny_dataset
    model, _ = build_model(tiny_base, AblationSpec("Uni 1", "t"), train, 0)
    model.params["lora/1/q/B"].assign(np.full((16, 8), 0.02))
    examples = train[:5]
    logits = model.logits(model.encode(examples)).numpy()[:, -1]
    shifted = logits - logits.max(axis = 1, keepdims = True)
    log_probabilities = shifted - np.log(
        np.exp(shifted).sum(axis = 1, keepdims = True)
    )
    answers = [
        model.yes_id if e.label == DIRECTED else model.no_id for e in examples
    ]
    expected = -np.mean([
        log_probabilities[b, answer] for b, answer in enumerate(answers)
    ])
    assert loss_of(model, examples) == pytest.approx(expected, abs = 1e-12)


def test_full_sequence_adds_hypothesis_terms(tiny_base, tiny_dataset):
    train, _ = tiny_dataset
    model, _ = build_model(tiny_base, AblationSpec("Uni 1", "t"), train, 0)
    assert loss_of(model, train[:6], FULL_SEQUENCE) > loss_of(
        model, train[:6], DECISION_ONLY,
    )


def test_select_training_subset(tiny_dataset):
    train, _ = tiny_dataset
    subset = select_training_subset(train, 6)
    assert len(subset) == 6
    assert sum(e.label == DIRECTED for e in subset) == 3
    positions = [train.index(e) for e in subset]
    assert positions == sorted(positions)
    assert select_training_subset(train, None) == list(train)
    with pytest.raises(TrainingError):
        select_training_subset(train, 42)


def test_spec_validation():
    with pytest.raises(TrainingError):
        AblationSpec("Multi 5", "t,a,b")
    with pytest.raises(TrainingError):
        AblationSpec("Multi 5", "t,a", lora_enabled = False)
    frozen = AblationSpec("Multi 5", "t,a,b", lora_enabled = False)
    assert not frozen.lora.enabled
    with pytest.raises(TrainingError):
        AblationSpec("Multi 4.6", "t,a,b", train_size = 1)
    with pytest.raises(TrainingError):
        AblationSpec("Uni 1", "t", seeds = [])
    assert AblationSpec.from_record(frozen.to_record()) == frozen


def test_train_config_validation():
    with pytest.raises(TrainingError):
        TrainConfig(loss_mask = "everything")
    with pytest.raises(TrainingError):
        TrainConfig(learning_rate = 0.)
    with pytest.raises(TrainingError):
        TrainConfig(clip_norm = -1.)


def test_zero_epochs_keeps_initial_parameters(tiny_base, tiny_dataset):
    train, _ = tiny_dataset
    spec = AblationSpec("Multi 1", "t,b")
    initial, _ = build_model(tiny_base, spec, train, seed = 3)
    model, report = train_model(
        spec, TrainConfig(epochs = 0), tiny_base, train, seed = 3,
    )
    assert report.epoch_losses == []
    for name, value in initial.params.snapshot().items():
        assert np.array_equal(model.params[name].numpy(), value)


def test_training_is_deterministic_and_leaves_base_untouched(
    tiny_base, tiny_dataset,
):
    train, _ = tiny_dataset
    digest = tiny_base.params.digest()
    spec = AblationSpec("Multi 4.3", "t,a,b", train_size = 16)
    config = TrainConfig(epochs = 2, batch_size = 8, clip_norm = 1.)
    runs = [
        train_model(
            spec, config, tiny_base, train, seed = 1,
            frame_source = FrameSource(), provider = "specialized-256",
            dataset_hash = "abc",
        )
        for _ in range(2)
    ]
    assert tiny_base.params.digest() == digest
    (first, first_report), (second, second_report) = runs
    assert first_report.to_record() == second_report.to_record()
    assert first.params.digest() == second.params.digest()
    assert first.params.digest() != build_model(
        tiny_base, spec, select_training_subset(train, 16), 1, FrameSource(),
    )[0].params.digest()

    record = first_report.to_record()
    assert "wall_time" not in record
    assert len(record["epoch_losses"]) == 2
    assert record["parameter_count"]["total"] == first.params.count()
    assert record["provenance"]["train_examples"] == 16
    assert record["provenance"]["provider"] == "specialized-256"
    assert record["provenance"]["base_digest"] == digest


def test_nothing_to_train(tiny_base, tiny_dataset):
    train, _ = tiny_dataset
    spec = AblationSpec("Uni 1", "t", lora_enabled = False)
    with pytest.raises(TrainingError):
        train_model(spec, TrainConfig(epochs = 1), tiny_base, train)


def test_audio_needs_a_frame_source(tiny_base, tiny_dataset):
    train, _ = tiny_dataset
    with pytest.raises(TrainingError):
        build_model(tiny_base, AblationSpec("Uni 2", "a"), train, 0)


def test_full_model_gradients(tiny_base, tiny_dataset):
    train, _ = tiny_dataset
    examples = train[:4]
    model, _ = build_model(
        tiny_base, AblationSpec("Multi 4", "t,a,b"), train, seed = 2,
        frame_source = FrameSource(),
    )
    rng = np.random.default_rng(0)
    for name in model.params.names():
        if name.endswith("/B"):
            model.params[name].assign(
                0.05 * rng.standard_normal(model.params[name].shape)
            )
    pooled = FrameSource().pooled(examples)
    batch = model.encode(examples, pooled)
    indices, targets = loss_targets(model, examples, FULL_SEQUENCE)

    def loss():
        return sequence_loss(model, batch, indices, targets, len(examples))

    names = [
        "lora/0/q/A", "lora/1/v/B", "lora/1/dense/B",
        "m1/hidden/kernel", "m1/output/bias", "m2/output/kernel",
    ]
    assert check_gradients(
        loss, model.params, step = 1e-5, rng = Rng(0), names = names,
    ) < 1e-4
