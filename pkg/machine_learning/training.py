"""
Target sequences, the masked next-token loss and the training loop that fits
the adapters and mapping networks of a `DirectednessModel`.

A target sequence of an example has l + 3 tokens: the hypothesis padded to
l = max_tokens, the two prompt tokens, then "yes" or "no". With P prefix
positions and a hypothesis region of H positions (l with text, 0 without),
target j is predicted by the logits at context position

    P + j - 1               for a hypothesis token (j < l; text only)
    P + H + (j - l) - 1     for a prompt or decision token

so the decision is always read at the last context position. Targets whose
position would be negative, or that have no place in the context, are never
selected by the loss mask.
"""
import logging
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np
import tensorflow as tf

from benchmark.features import DIRECTED, LABELS, NON_DIRECTED, fit_scaler
from machine_learning.DirectednessModel import DirectednessModel
from machine_learning.LoraAdapter import LoraConfig
from machine_learning.LossRecord import LossRecord
from machine_learning.Rng import Rng
from machine_learning.prefix_mapping import (
    AUDIO, PROMPT, SIGNALS, TEXT, parse_modalities,
)
from machine_learning.tensor_core import FLOAT, cross_entropy, softmax

logger = logging.getLogger(__name__)

DECISION_ONLY = "decision-only"
FULL_SEQUENCE = "full-sequence"
LOSS_MASKS = (DECISION_ONLY, FULL_SEQUENCE)

DEFAULT_PROVIDERS = ("generic-1024", "specialized-256")
DEFAULT_SEEDS = (0, 1, 2)
FROZEN_ROW = "Multi 5"


class TrainingError(ValueError):
    pass


class FrozenContractError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta_1: float = 0.9
    beta_2: float = 0.999
    epsilon: float = 1e-8
    loss_mask: str = DECISION_ONLY
    # global-norm gradient clipping; None disables it
    clip_norm: float = None

    def __post_init__(self):
        if self.epochs < 0:
            raise TrainingError("epochs must be non-negative")
        if self.batch_size < 1:
            raise TrainingError("batch size must be at least 1")
        if not self.learning_rate > 0.:
            raise TrainingError("learning rate must be positive")
        if self.loss_mask not in LOSS_MASKS:
            raise TrainingError(
                "unknown loss mask {}; expected one of {}".format(
                    self.loss_mask, ", ".join(LOSS_MASKS),
                )
            )
        if self.clip_norm is not None and not self.clip_norm > 0.:
            raise TrainingError("clip norm must be positive")

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, record: dict):
        return cls(**record)


@dataclass
class AblationSpec:
    """ One configuration of the ablation grid.

    Attributes:
        name: Row name, e.g. "Uni 1" or "Multi 4.3".
        modalities: Subset of t, a, b.
        lora_enabled: False trains the mapping networks only.
        train_size: Balanced training subset size; None uses the whole split.
        providers: Audio provider tags evaluated for this row.
        lora: Adapter targets, rank and scaling.
        seeds: Training seeds; results are aggregated by their median.
    """
    name: str
    modalities: tuple
    lora_enabled: bool = True
    train_size: int = None
    providers: tuple = DEFAULT_PROVIDERS
    lora: LoraConfig = field(default_factory = LoraConfig)
    seeds: tuple = DEFAULT_SEEDS

    def __post_init__(self):
        self.modalities = parse_modalities(self.modalities)
        self.providers = tuple(self.providers)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.lora = LoraConfig.from_record(
            dict(self.lora.to_record(), enabled = self.lora_enabled)
        )
        if self.name == FROZEN_ROW and (
            self.lora_enabled or len(self.modalities) != 3
        ):
            raise TrainingError(
                "{} trains the mapping networks of all three modalities "
                "with LoRA disabled".format(FROZEN_ROW)
            )
        if self.train_size is not None and self.train_size < 2:
            raise TrainingError("train size must be at least 2")
        if len(self.providers) == 0:
            raise TrainingError("{}: no audio provider".format(self.name))
        if len(self.seeds) == 0:
            raise TrainingError("{}: no seed".format(self.name))

    def to_record(self) -> dict:
        return {
            "name": self.name,
            "modalities": list(self.modalities),
            "lora_enabled": self.lora_enabled,
            "train_size": self.train_size,
            "providers": list(self.providers),
            "lora": self.lora.to_record(),
            "seeds": list(self.seeds),
        }

    @classmethod
    def from_record(cls, record: dict):
        record = dict(record)
        record["lora"] = LoraConfig.from_record(record["lora"])
        return cls(**record)


@dataclass
class TrainReport:
    epoch_losses: list
    parameter_count: dict
    wall_time: float
    provenance: dict

    def to_record(self, include_wall_time = False) -> OrderedDict:
        """ Wall time is left out by default so that reports of identical
        runs are identical.
        """
        record = OrderedDict()
        record["epoch_losses"] = [float(loss) for loss in self.epoch_losses]
        record["parameter_count"] = dict(self.parameter_count)
        if include_wall_time:
            record["wall_time"] = self.wall_time
        record["provenance"] = self.provenance
        return record


def build_target_sequence(
    hypothesis_ids, label: str, vocabulary, policy = DECISION_ONLY,
    max_tokens = None,
):
    """ Target tokens and loss mask of one example.

    Args:
        hypothesis_ids: Token ids of the recognized text, at most `max_tokens`.
        label: "directed" or "non_directed".
        vocabulary: Provides the pad, prompt and answer ids.
        policy: "decision-only" selects the answer; "full-sequence" also
            selects the unpadded hypothesis tokens.

    Returns:
        `(tokens, mask)`: [l + 3] int64 ids and the boolean loss mask.
    """
    if label not in LABELS:
        raise TrainingError("unknown label {}".format(label))
    if policy not in LOSS_MASKS:
        raise TrainingError("unknown loss mask {}".format(policy))
    if max_tokens is None:
        max_tokens = len(hypothesis_ids)
    hypothesis_ids = list(hypothesis_ids)[:max_tokens]
    prompt = vocabulary.tokenize(PROMPT)
    answer = vocabulary.token_id("yes" if label == DIRECTED else "no")

    tokens = np.full(max_tokens, vocabulary.pad_id, dtype = np.int64)
    tokens[:len(hypothesis_ids)] = hypothesis_ids
    tokens = np.concatenate([tokens, prompt, [answer]]).astype(np.int64)

    mask = np.zeros(len(tokens), dtype = bool)
    mask[-1] = True
    if policy == FULL_SEQUENCE:
        mask[:len(hypothesis_ids)] = True
    return tokens, mask


def target_positions(
    max_tokens: int, prefix_count: int, has_text: bool, prompt_length = 2,
) -> np.ndarray:
    """ Context position predicting each target, -1 where there is none. """
    hypothesis_length = max_tokens if has_text else 0
    positions = np.full(max_tokens + prompt_length + 1, -1, dtype = np.int64)
    if has_text:
        positions[:max_tokens] = prefix_count + np.arange(max_tokens) - 1
    tail = np.arange(prompt_length + 1)
    positions[max_tokens:] = prefix_count + hypothesis_length + tail - 1
    positions[positions < 0] = -1
    return positions


def loss_targets(model: DirectednessModel, examples, policy = DECISION_ONLY):
    """ Gather indices and target ids of every selected target in a batch.

    Returns:
        `(indices, targets)`: [M, 2] (example, context position) pairs and
            the [M] token ids predicted there.
    """
    positions = target_positions(
        model.max_tokens, model.prefix_count, TEXT in model.modalities,
        len(model.prompt_ids),
    )
    indices = []
    targets = []
    for b, example in enumerate(examples):
        tokens, mask = build_target_sequence(
            model.vocabulary.tokenize(example.text, model.max_tokens),
            example.label, model.vocabulary, policy, model.max_tokens,
        )
        for j in np.flatnonzero(mask & (positions >= 0)):
            indices.append((b, positions[j]))
            targets.append(tokens[j])
    if len(targets) == 0:
        raise TrainingError("the loss mask selects no target position")
    return (
        np.array(indices, dtype = np.int64).reshape(-1, 2),
        np.array(targets, dtype = np.int64),
    )


def sequence_loss(
    model: DirectednessModel, batch: dict, indices, targets, batch_size,
    training = False, seed = None,
):
    """ Summed negative log-likelihood of the selected targets, divided by
    the number of examples in the batch.

    Args:
        batch: Model inputs from `model.encode`.
        indices: [M, 2] (example, context position) pairs, from `loss_targets`.
        targets: [M] token ids.
        batch_size: Number of examples the loss is averaged over.
    """
    logits = model.logits(batch, training = training, seed = seed)
    probabilities = softmax(tf.gather_nd(logits, indices))
    selected = tf.gather(probabilities, targets, batch_dims = 1)
    loss, _ = cross_entropy(selected)
    return loss / tf.cast(batch_size, FLOAT)


def select_training_subset(examples, size = None) -> list:
    """ First size // 2 directed and size - size // 2 non-directed examples,
    kept in dataset order.
    """
    examples = list(examples)
    if size is None:
        return examples
    directed = [e for e in examples if e.label == DIRECTED]
    other = [e for e in examples if e.label == NON_DIRECTED]
    n_directed = size // 2
    n_other = size - n_directed
    if n_directed > len(directed) or n_other > len(other):
        raise TrainingError(
            "train size {} exceeds the available {} directed and {} "
            "non-directed examples".format(size, len(directed), len(other))
        )
    chosen = {e.id for e in directed[:n_directed] + other[:n_other]}
    return [e for e in examples if e.id in chosen]


def build_model(
    base, spec: AblationSpec, train_examples, seed: int, frame_source = None,
    provider = None,
):
    """ An untrained model for `spec` with its scaler fitted on the training
    examples, and the pooled training audio (None without audio).
    """
    pooled = None
    audio_width = None
    if AUDIO in spec.modalities:
        if frame_source is None:
            raise TrainingError("the audio modality needs a frame source")
        pooled = frame_source.pooled(train_examples)
        audio_width = pooled.shape[1]
    model = DirectednessModel(
        base, spec.modalities, spec.lora, audio_width = audio_width,
        seed = seed,
    )
    if AUDIO in spec.modalities:
        model.provider = provider
    if SIGNALS in spec.modalities:
        model.scaler = fit_scaler(e.signals for e in train_examples)
    return model, pooled


def train_model(
    spec: AblationSpec, config: TrainConfig, base, train_examples, seed = 0,
    frame_source = None, provider = None, dataset_hash = None,
    loss_record = None,
):
    """ Fit the adapters and mapping networks of one ablation row.

    Args:
        spec: Modalities, LoRA settings and training subset size.
        config: Optimizer and loss settings.
        base: The frozen `BaseLM`; it must be bit-identical afterwards.
        train_examples: The generated training split.
        seed: Seeds initialization, shuffling and dropout.
        frame_source: `FrameSource` resolving audio frames.
        provider: Tag of the provider the frames come from.
        dataset_hash: Content hash recorded in the report.

    Returns:
        `(model, report)`.
    """
    start = time.time()
    base_digest = base.params.digest()
    subset = select_training_subset(train_examples, spec.train_size)
    model, pooled = build_model(
        base, spec, subset, seed, frame_source, provider,
    )
    count = model.count_trainable()
    if count["total"] != model.params.count():
        raise TrainingError("parameter accounting does not add up")
    if count["total"] == 0:
        raise TrainingError("{} has nothing to train".format(spec.name))

    rng = Rng(seed)
    if loss_record is None:
        loss_record = LossRecord(
            labels = [config.loss_mask], name = spec.name,
        )
    variables = model.params.trainable_variables()

    @tf.function(reduce_retracing = True)
    def train_step(batch, indices, targets, batch_size, dropout_seed):
        with tf.GradientTape() as tape:
            loss = sequence_loss(
                model, batch, indices, targets, batch_size,
                training = True, seed = dropout_seed,
            )
        gradients = tape.gradient(
            loss, variables,
            unconnected_gradients = tf.UnconnectedGradients.ZERO,
        )
        if config.clip_norm is not None:
            gradients, _ = tf.clip_by_global_norm(gradients, config.clip_norm)
        model.params.adam_step(
            gradients, learning_rate = config.learning_rate,
            beta_1 = config.beta_1, beta_2 = config.beta_2,
            epsilon = config.epsilon,
        )
        return loss

    epoch_losses = []
    for epoch in range(config.epochs):
        order = rng.stream("train_shuffle", epoch).permutation(len(subset))
        losses = []
        for step, begin in enumerate(
            range(0, len(order), config.batch_size)
        ):
            chosen = order[begin:begin + config.batch_size]
            examples = [subset[i] for i in chosen]
            audio = pooled[chosen] if pooled is not None else None
            batch = {
                key: tf.constant(value)
                for key, value in model.encode(examples, audio).items()
            }
            indices, targets = loss_targets(model, examples, config.loss_mask)
            loss = train_step(
                batch, tf.constant(indices), tf.constant(targets),
                tf.constant(len(examples), dtype = tf.int64),
                rng.tf_seed("dropout", "{}/{}".format(epoch, step)),
            )
            losses.append(float(loss))
        epoch_losses.append(float(np.mean(losses)))
        loss_record.record(epoch, [epoch_losses[-1]])
        loss_record.print_recent()

    if not np.all(np.isfinite(epoch_losses)):
        raise TrainingError("{}: training loss is not finite".format(spec.name))
    if base.params.digest() != base_digest:
        raise FrozenContractError("training changed the frozen base model")

    report = TrainReport(
        epoch_losses = epoch_losses,
        parameter_count = count,
        wall_time = time.time() - start,
        provenance = {
            "spec": spec.to_record(),
            "train_config": config.to_record(),
            "seed": seed,
            "provider": provider if AUDIO in spec.modalities else None,
            "dataset_hash": dataset_hash,
            "base_digest": base_digest,
            "train_examples": len(subset),
        },
    )
    logger.info(
        "%s seed %d: %d trainable parameters, final loss %s",
        spec.name, seed, count["total"],
        "{:.6f}".format(epoch_losses[-1]) if epoch_losses else "n/a",
    )
    return model, report
