"""
Turns the three modalities of an utterance into the input sequence of the
language model:

    [audio prefix][signal prefix][hypothesis, padded to l][directed decision]

An omitted modality contributes no positions at all. The decision is read
from the logits at the final prompt position.
"""
import numpy as np
import tensorflow as tf

from machine_learning.MappingNetwork import MappingNetwork
from machine_learning.tensor_core import ShapeError, as_tensor

TEXT = "t"
AUDIO = "a"
SIGNALS = "b"
# order of the prefixes in the context; text follows them
PREFIX_ORDER = (AUDIO, SIGNALS)
MODALITIES = (TEXT, AUDIO, SIGNALS)

PROMPT = "directed decision:"
SIGNAL_COUNT = 4


class EmptyUtteranceError(ValueError):
    pass


class SignalRangeError(ValueError):
    pass


class AblationError(ValueError):
    pass


def parse_modalities(modalities) -> tuple:
    """ Canonical modality tuple in t, a, b order.

    Args:
        modalities: Iterable of modality letters or a comma separated string.
    """
    if isinstance(modalities, str):
        modalities = [m.strip() for m in modalities.split(",") if m.strip()]
    modalities = set(modalities)
    unknown = modalities - set(MODALITIES)
    if unknown:
        raise AblationError(
            "unknown modalities {}; expected a subset of t, a, b".format(
                ", ".join(sorted(unknown)),
            )
        )
    if not modalities:
        raise AblationError("at least one modality is required")
    return tuple(m for m in MODALITIES if m in modalities)


class Prefix:
    """ Mapped embedding of one modality, [prefix_length, E]. """

    def __init__(self, kind: str, embedding):
        if kind not in PREFIX_ORDER:
            raise AblationError("no prefix for modality {}".format(kind))
        self.kind = kind
        self.embedding = embedding

    def __repr__(self):
        return "Prefix(kind={}, shape={})".format(
            self.kind, tuple(self.embedding.shape),
        )


def mean_pool(frames) -> np.ndarray:
    """ Average a [T, N] frame matrix over time. """
    frames = np.asarray(frames, dtype = np.float64)
    if frames.ndim != 2:
        raise ShapeError(
            "frames must be a T x N matrix, got shape {}".format(frames.shape)
        )
    if frames.shape[0] == 0:
        raise EmptyUtteranceError("cannot pool an utterance without frames")
    return frames.sum(axis = 0) / frames.shape[0]


def map_audio(
    pooled, net: MappingNetwork, training = False, seed = None,
) -> Prefix:
    return Prefix(AUDIO, net(pooled, training = training, seed = seed))


def check_signals(scaled):
    scaled = np.asarray(scaled, dtype = np.float64)
    if scaled.shape[-1:] != (SIGNAL_COUNT,):
        raise SignalRangeError(
            "expected {} decoder signals, got shape {}".format(
                SIGNAL_COUNT, scaled.shape,
            )
        )
    if not np.all((scaled >= 0.) & (scaled <= 1.)):
        raise SignalRangeError("scaled decoder signals must lie in [0, 1]")
    return scaled


def map_signals(
    scaled, net: MappingNetwork, training = False, seed = None,
) -> Prefix:
    scaled = check_signals(scaled)
    return Prefix(SIGNALS, net(scaled, training = training, seed = seed))


class AssembledContext:
    def __init__(
        self, embeddings, key_mask, prefix_count: int, hypothesis_length: int,
    ):
        self.embeddings = embeddings
        self.key_mask = key_mask
        self.prefix_count = prefix_count
        self.hypothesis_length = hypothesis_length

    def __len__(self):
        return int(self.key_mask.shape[-1])

    @property
    def decision_index(self) -> int:
        return len(self) - 1


def pad_hypotheses(hypotheses, max_tokens: int, pad_id: int):
    """ Right-pad (and truncate) token id lists to `max_tokens`.

    Returns:
        `(ids, mask)`: [B, max_tokens] int64 ids and the bool mask of real
            tokens.
    """
    ids = np.full((len(hypotheses), max_tokens), pad_id, dtype = np.int64)
    mask = np.zeros((len(hypotheses), max_tokens), dtype = bool)
    for i, tokens in enumerate(hypotheses):
        tokens = list(tokens)[:max_tokens]
        ids[i, :len(tokens)] = tokens
        mask[i, :len(tokens)] = True
    return ids, mask


def assemble_batch(
    modalities, prefixes: dict, hypothesis_ids, hypothesis_mask, prompt_ids,
    embedding_table,
):
    """ Batched context assembly.

    Args:
        modalities: Canonical modality tuple.
        prefixes: Modality letter to [B, p, E] prefix embeddings.
        hypothesis_ids: [B, l] padded token ids; ignored without text.
        hypothesis_mask: [B, l] bool, True on real tokens.
        prompt_ids: Token ids of the prompt.
        embedding_table: [V, E] token embeddings.

    Returns:
        `(embeddings, key_mask)` of shapes [B, S, E] and [B, S].
    """
    for kind in prefixes:
        if kind not in modalities:
            raise AblationError(
                "prefix supplied for unselected modality {}".format(kind)
            )
    parts, masks = [], []
    batch = None
    for kind in PREFIX_ORDER:
        if kind not in modalities:
            continue
        if kind not in prefixes:
            raise AblationError("missing prefix for modality {}".format(kind))
        prefix = as_tensor(prefixes[kind])
        parts.append(prefix)
        batch = tf.shape(prefix)[0]
        masks.append(tf.ones(tf.shape(prefix)[:2], dtype = tf.bool))
    if TEXT in modalities:
        hypothesis_ids = tf.convert_to_tensor(hypothesis_ids, dtype = tf.int64)
        parts.append(tf.gather(embedding_table, hypothesis_ids))
        masks.append(tf.convert_to_tensor(hypothesis_mask, dtype = tf.bool))
        batch = tf.shape(hypothesis_ids)[0]

    prompt = tf.gather(
        embedding_table, tf.constant(prompt_ids, dtype = tf.int64),
    )
    parts.append(
        tf.tile(prompt[tf.newaxis], tf.stack([batch, 1, 1]))
    )
    masks.append(tf.ones(tf.stack([batch, len(prompt_ids)]), dtype = tf.bool))
    return tf.concat(parts, axis = 1), tf.concat(masks, axis = 1)


def assemble_context(
    modalities, prefixes: dict, hypothesis_ids, prompt_ids, embedding_table,
    max_tokens = 16, pad_id = 0,
) -> AssembledContext:
    """ Context of a single example.

    Args:
        modalities: Modalities of the model; a prefix must be given for
            exactly the selected a and b.
        prefixes: Modality letter to `Prefix`.
        hypothesis_ids: Unpadded token ids of the 1-best hypothesis.
        prompt_ids: Token ids of the prompt.
        embedding_table: [V, E] token embeddings.
        max_tokens: Hypothesis length l after padding.
        pad_id: Id of `<pad>`.
    """
    modalities = parse_modalities(modalities)
    batched = {
        kind: as_tensor(prefix.embedding)[tf.newaxis]
        for kind, prefix in prefixes.items()
    }
    ids, mask = pad_hypotheses([hypothesis_ids], max_tokens, pad_id)
    embeddings, key_mask = assemble_batch(
        modalities, batched, ids, mask, prompt_ids, embedding_table,
    )
    prefix_count = sum(
        int(prefixes[kind].embedding.shape[0]) for kind in batched
    )
    return AssembledContext(
        embeddings[0], key_mask[0], prefix_count,
        max_tokens if TEXT in modalities else 0,
    )
