import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import tensorflow as tf

from machine_learning.LossRecord import LossRecord
from machine_learning.ParamStore import ParamStore
from machine_learning.Rng import Rng
from machine_learning.Vocabulary import (
    DEFAULT_MAX_TOKENS, Vocabulary, normalize_words,
)
from machine_learning.checkpoint import load_checkpoint, save_checkpoint
from machine_learning.tensor_core import FLOAT, as_tensor, fold_seed, linear

logger = logging.getLogger(__name__)

# large negative score given to attention keys that may not be attended
MASKED_SCORE = -1e30
LAYER_NORM_EPSILON = 1e-5
INIT_STDDEV = 0.02

# projections that carry an adapter attachment point, in layer order
PROJECTIONS = ("q", "k", "v", "dense", "ffn_in", "ffn_out")


class LengthError(ValueError):
    pass


class CorpusError(ValueError):
    pass


@dataclass
class ModelConfig:
    embedding_width: int = 64
    layers: int = 4
    heads: int = 4
    ffn_width: int = 256
    max_length: int = 64
    vocab_size: int = 512
    max_tokens: int = DEFAULT_MAX_TOKENS
    seed: int = 0

    def __post_init__(self):
        if self.embedding_width % self.heads != 0:
            raise ValueError(
                "embedding width {} is not divisible by {} heads".format(
                    self.embedding_width, self.heads,
                )
            )
        for name in [
            "embedding_width", "layers", "heads", "ffn_width", "max_length",
            "vocab_size", "max_tokens",
        ]:
            if getattr(self, name) < 1:
                raise ValueError("{} must be positive".format(name))

    @property
    def head_width(self) -> int:
        return self.embedding_width // self.heads

    def check_capacity(self, prefix_count: int, prompt_length: int):
        """ Raise `LengthError` if a full context does not fit. """
        needed = prefix_count + self.max_tokens + prompt_length + 1
        if needed > self.max_length:
            raise LengthError(
                "context of {} positions exceeds max length {}".format(
                    needed, self.max_length,
                )
            )

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, record: dict):
        return cls(**record)


def layer_norm(x, gamma, beta):
    mean, variance = tf.nn.moments(x, axes = [-1], keepdims = True)
    normalized = (x - mean) * tf.math.rsqrt(variance + LAYER_NORM_EPSILON)
    return normalized * gamma + beta


def projection_name(layer: int, target: str) -> str:
    return "layer_{}/{}".format(layer, target)


class BaseLM(tf.Module):
    """ Pre-norm decoder-only transformer with learned absolute positions.

    The base parameters live in `self.params`; after pretraining they are
    frozen and never receive another update. Downstream models condition the
    network by passing their own input embeddings to `forward_logits` and may
    add low-rank adapters to the q, v, dense, ffn_in and ffn_out projections.
    """

    def __init__(
        self, config: ModelConfig, vocabulary: Vocabulary, trainable = True,
    ):
        super(BaseLM, self).__init__(name = "base_lm")
        if len(vocabulary) != config.vocab_size:
            raise ValueError(
                "vocabulary of {} tokens, config expects {}".format(
                    len(vocabulary), config.vocab_size,
                )
            )
        self.config = config
        self.vocabulary = vocabulary
        self.params = ParamStore()
        self.frozen = False
        self._initialize(trainable)

    def _initialize(self, trainable):
        c = self.config
        E, V = c.embedding_width, c.vocab_size
        stream = Rng(c.seed).stream("base_init")

        def normal(*shape):
            return stream.normal(0., INIT_STDDEV, size = shape)

        def add(name, value):
            self.params.add(name, value, trainable = trainable)

        add("embedding/tokens", normal(V, E))
        add("embedding/positions", normal(c.max_length, E))
        for layer in range(c.layers):
            for norm in ["ln_1", "ln_2"]:
                prefix = "layer_{}/{}".format(layer, norm)
                add(prefix + "/gamma", np.ones(E))
                add(prefix + "/beta", np.zeros(E))
            for target in PROJECTIONS:
                d_in, d_out = self.projection_shape(target)
                prefix = projection_name(layer, target)
                add(prefix + "/kernel", normal(d_in, d_out))
                add(prefix + "/bias", np.zeros(d_out))
        add("final_ln/gamma", np.ones(E))
        add("final_ln/beta", np.zeros(E))
        add("output/kernel", normal(E, V))
        add("output/bias", np.zeros(V))

    def projection_shape(self, target: str):
        E, F = self.config.embedding_width, self.config.ffn_width
        if target == "ffn_in":
            return E, F
        if target == "ffn_out":
            return F, E
        return E, E

    def freeze(self):
        self.params.freeze()
        self.frozen = True

    def embed(self, ids):
        """ Token embeddings for an integer id tensor of any shape. """
        return tf.gather(self.params["embedding/tokens"], ids)

    def _project(self, x, layer, target, adapters, training, seed):
        prefix = projection_name(layer, target)
        y = linear(
            x, self.params[prefix + "/kernel"], self.params[prefix + "/bias"],
        )
        if adapters is not None and (layer, target) in adapters:
            adapter = adapters[(layer, target)]
            y = y + adapter.delta(
                x, training = training, seed = fold_seed(seed, adapter.index),
            )
        return y

    def _split_heads(self, x):
        c = self.config
        shape = tf.shape(x)
        x = tf.reshape(x, [shape[0], shape[1], c.heads, c.head_width])
        return tf.transpose(x, [0, 2, 1, 3])

    def _merge_heads(self, x):
        shape = tf.shape(x)
        x = tf.transpose(x, [0, 2, 1, 3])
        return tf.reshape(x, [shape[0], shape[2], self.config.embedding_width])

    def attention_mask(self, key_mask):
        """ Allowed (query, key) pairs: causal, and the key is either unmasked
        or the query itself, so every row keeps at least one key.

        Args:
            key_mask: [B, S] bool, True where the position may be attended.

        Returns:
            [B, S, S] bool.
        """
        length = tf.shape(key_mask)[1]
        ones = tf.ones([length, length], dtype = tf.bool)
        causal = tf.cast(
            tf.linalg.band_part(tf.cast(ones, tf.int32), -1, 0), tf.bool,
        )
        diagonal = tf.cast(tf.eye(length, dtype = tf.int32), tf.bool)
        return tf.logical_and(
            causal[tf.newaxis],
            tf.logical_or(key_mask[:, tf.newaxis, :], diagonal[tf.newaxis]),
        )

    def forward_logits(
        self, context, key_mask = None, adapters = None, training = False,
        seed = None,
    ):
        """ Per-position logits over the vocabulary.

        Args:
            context: [S, E] or [B, S, E] input embeddings.
            key_mask: [S] or [B, S] bool; False marks padding that no other
                position may attend to. Defaults to all True.
            adapters: Mapping from (layer, target) to adapters added to the
                base projections.
            training: Enables adapter dropout.
            seed: Shape [2] int64 seed for the dropout masks.

        Returns:
            [S, V] or [B, S, V] logits.
        """
        context = as_tensor(context)
        unbatched = context.shape.rank == 2
        if unbatched:
            context = context[tf.newaxis]
            if key_mask is not None:
                key_mask = tf.convert_to_tensor(key_mask, dtype = tf.bool)
                key_mask = key_mask[tf.newaxis]

        length = context.shape[1]
        if length is not None and length > self.config.max_length:
            raise LengthError(
                "context of {} positions exceeds max length {}".format(
                    length, self.config.max_length,
                )
            )
        if key_mask is None:
            key_mask = tf.ones(tf.shape(context)[:2], dtype = tf.bool)
        key_mask = tf.convert_to_tensor(key_mask, dtype = tf.bool)

        p = self.params
        positions = p["embedding/positions"][:tf.shape(context)[1]]
        h = context + positions[tf.newaxis]
        allowed = self.attention_mask(key_mask)[:, tf.newaxis]
        scale = 1. / math.sqrt(self.config.head_width)

        def project(x, layer, target):
            return self._project(x, layer, target, adapters, training, seed)

        for layer in range(self.config.layers):
            prefix = "layer_{}".format(layer)
            x = layer_norm(
                h, p[prefix + "/ln_1/gamma"], p[prefix + "/ln_1/beta"],
            )
            q = self._split_heads(project(x, layer, "q"))
            k = self._split_heads(project(x, layer, "k"))
            v = self._split_heads(project(x, layer, "v"))
            scores = tf.einsum("bhqd,bhkd->bhqk", q, k) * scale
            scores = tf.where(
                allowed, scores, tf.constant(MASKED_SCORE, dtype = FLOAT),
            )
            weights = tf.nn.softmax(scores, axis = -1)
            attended = self._merge_heads(
                tf.einsum("bhqk,bhkd->bhqd", weights, v)
            )
            h = h + project(attended, layer, "dense")

            x = layer_norm(
                h, p[prefix + "/ln_2/gamma"], p[prefix + "/ln_2/beta"],
            )
            x = tf.nn.gelu(project(x, layer, "ffn_in"), approximate = False)
            h = h + project(x, layer, "ffn_out")

        h = layer_norm(h, p["final_ln/gamma"], p["final_ln/beta"])
        logits = linear(h, p["output/kernel"], p["output/bias"])
        if unbatched:
            logits = logits[0]
        return logits


def _encode_sentences(model: BaseLM, sentences, length):
    vocabulary = model.vocabulary
    ids = np.full((len(sentences), length), vocabulary.pad_id, dtype = np.int64)
    for i, sentence in enumerate(sentences):
        tokens = vocabulary.tokenize(sentence, max_tokens = length)
        ids[i, :len(tokens)] = tokens
    return ids


def next_token_loss(model: BaseLM, ids):
    """ Mean next-token negative log-likelihood over non-padding targets.

    Returns:
        `(total, count)`: summed loss and the number of predicted tokens.
    """
    ids = tf.convert_to_tensor(ids, dtype = tf.int64)
    valid = tf.not_equal(ids, model.vocabulary.pad_id)
    logits = model.forward_logits(model.embed(ids), key_mask = valid)
    losses = tf.nn.sparse_softmax_cross_entropy_with_logits(
        labels = ids[:, 1:], logits = logits[:, :-1],
    )
    weights = tf.cast(valid[:, 1:], FLOAT)
    return tf.reduce_sum(losses * weights), tf.reduce_sum(weights)


def pretrain_base(
    config: ModelConfig, corpus, epochs = 3, vocabulary = None,
    batch_size = 32, learning_rate = 1e-3, loss_record = None,
) -> BaseLM:
    """ Next-token pretraining of a fresh `BaseLM`, which is then frozen.

    Args:
        config: Architecture and seed.
        corpus: Sentences; each is tokenized and truncated to
            `config.max_tokens` words.
        epochs: Passes over the shuffled corpus.
        vocabulary: Defaults to the corpus words padded to `config.vocab_size`.

    Returns:
        The frozen model.
    """
    corpus = list(corpus)
    if len(corpus) == 0:
        raise CorpusError("cannot pretrain on an empty corpus")
    if vocabulary is None:
        words = set(normalize_words(" ".join(corpus)))
        vocabulary = Vocabulary.build(words, size = config.vocab_size)

    model = BaseLM(config, vocabulary)
    ids = _encode_sentences(model, corpus, config.max_tokens)
    rng = Rng(config.seed)
    if loss_record is None:
        loss_record = LossRecord(labels = ["next_token"])

    @tf.function
    def train_step(batch):
        with tf.GradientTape() as tape:
            total, count = next_token_loss(model, batch)
            loss = total / tf.maximum(count, 1.)
        gradients = tape.gradient(loss, model.params.trainable_variables())
        model.params.adam_step(gradients, learning_rate = learning_rate)
        return loss

    for epoch in range(epochs):
        order = rng.stream("pretrain_shuffle", epoch).permutation(len(ids))
        losses = []
        for start in range(0, len(order), batch_size):
            batch = ids[order[start:start + batch_size]]
            losses.append(float(train_step(tf.constant(batch))))
        loss_record.record(epoch, [float(np.mean(losses))])
        loss_record.print_recent()

    model.freeze()
    return model


def perplexity(model: BaseLM, sentences, batch_size = 256) -> float:
    """ exp of the mean next-token negative log-likelihood. """
    ids = _encode_sentences(model, list(sentences), model.config.max_tokens)
    total, count = 0., 0.
    for start in range(0, len(ids), batch_size):
        batch_total, batch_count = next_token_loss(
            model, ids[start:start + batch_size],
        )
        total += float(batch_total)
        count += float(batch_count)
    if count == 0.:
        raise CorpusError("no predicted tokens to measure")
    return math.exp(total / count)


def save_base(model: BaseLM, path):
    save_checkpoint(
        path,
        {
            "kind": "base_lm",
            "model": model.config.to_record(),
            "vocabulary": model.vocabulary.to_record(),
        },
        model.params.snapshot(),
    )


def load_base(path) -> BaseLM:
    """ Restore a frozen `BaseLM` from a checkpoint written by `save_base`. """
    record, tensors = load_checkpoint(path)
    if record.get("kind") != "base_lm":
        raise ValueError("{} is not a base model checkpoint".format(path))
    model = BaseLM(
        ModelConfig.from_record(record["model"]),
        Vocabulary(record["vocabulary"]),
        trainable = False,
    )
    model.params.load(tensors)
    model.freeze()
    return model
