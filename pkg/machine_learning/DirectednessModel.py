import logging
from collections import OrderedDict

import numpy as np
import tensorflow as tf

from benchmark.features import ScalerStats, apply_scaler
from machine_learning.LoraAdapter import (
    LoraConfig, attach_adapters, count_trainable,
)
from machine_learning.MappingNetwork import MappingNetwork
from machine_learning.ParamStore import ParamStore
from machine_learning.Rng import Rng
from machine_learning.ToyLanguageModel import BaseLM
from machine_learning.checkpoint import load_checkpoint, save_checkpoint
from machine_learning.tensor_core import fold_seed
from machine_learning.prefix_mapping import (
    AUDIO, PROMPT, SIGNAL_COUNT, SIGNALS, TEXT, AblationError,
    assemble_batch, check_signals, pad_hypotheses, parse_modalities,
)

logger = logging.getLogger(__name__)

MAPPING_DROPOUT = 0.10
# dropout streams of the mapping networks, apart from the adapter indices
M1_STREAM = 1000001
M2_STREAM = 1000002


class DirectednessModel(tf.Module):
    """ A frozen `BaseLM` conditioned on audio and decoder-signal prefixes,
    optionally adapted with LoRA, that answers "yes" or "no" after the prompt.

    Only the adapters and the mapping networks M1 (audio) and M2 (signals)
    are trainable; a mapping network exists only when its modality is used.
    """

    def __init__(
        self, base: BaseLM, modalities, lora_config: LoraConfig = None,
        audio_width = None, seed = 0, mapping_dropout = MAPPING_DROPOUT,
        prefix_length = 1,
    ):
        super(DirectednessModel, self).__init__(name = "directedness_model")
        if not base.frozen:
            raise AblationError("the base model must be frozen")
        self.base = base
        self.vocabulary = base.vocabulary
        self.modalities = parse_modalities(modalities)
        self.lora_config = lora_config or LoraConfig()
        self.audio_width = audio_width
        self.seed = seed
        self.mapping_dropout = mapping_dropout
        self.prefix_length = prefix_length
        self.params = ParamStore()
        self.scaler = None
        self.provider = None

        rng = Rng(seed)
        E = base.config.embedding_width
        self.adapters = attach_adapters(
            base, self.lora_config, self.params, rng,
        )
        self.m1 = None
        self.m2 = None
        if AUDIO in self.modalities:
            if audio_width is None:
                raise AblationError("audio modality needs the audio width")
            self.m1 = MappingNetwork(
                "m1", audio_width, E, self.params, rng,
                dropout_rate = mapping_dropout, prefix_length = prefix_length,
            )
        if SIGNALS in self.modalities:
            self.m2 = MappingNetwork(
                "m2", SIGNAL_COUNT, E, self.params, rng,
                dropout_rate = mapping_dropout, prefix_length = prefix_length,
            )

        self.prompt_ids = self.vocabulary.tokenize(PROMPT)
        self.yes_id = self.vocabulary.token_id("yes")
        self.no_id = self.vocabulary.token_id("no")
        base.config.check_capacity(self.prefix_count, len(self.prompt_ids))

    @property
    def max_tokens(self) -> int:
        return self.base.config.max_tokens

    @property
    def prefix_count(self) -> int:
        return self.prefix_length * len(self.mapping_nets())

    @property
    def hypothesis_length(self) -> int:
        return self.max_tokens if TEXT in self.modalities else 0

    @property
    def context_length(self) -> int:
        return (
            self.prefix_count + self.hypothesis_length + len(self.prompt_ids)
        )

    def mapping_nets(self) -> list:
        return [net for net in [self.m1, self.m2] if net is not None]

    def count_trainable(self) -> dict:
        return count_trainable(self.adapters, self.mapping_nets())

    def encode(self, examples, pooled_audio = None) -> dict:
        """ Model inputs of a list of examples as numpy arrays.

        Only the inputs of the model's modalities are read: an example's text
        is ignored without t, its signals without b, and `pooled_audio` is
        neither required nor touched without a.

        Args:
            examples: `MultimodalExample`s.
            pooled_audio: [B, N] mean-pooled frames aligned with `examples`.
        """
        batch = OrderedDict()
        if TEXT in self.modalities:
            ids, mask = pad_hypotheses(
                [self.vocabulary.tokenize(e.text) for e in examples],
                self.max_tokens, self.vocabulary.pad_id,
            )
            batch["hypothesis"] = ids
            batch["hypothesis_mask"] = mask
        if AUDIO in self.modalities:
            if pooled_audio is None:
                raise AblationError("audio modality needs pooled frames")
            pooled_audio = np.asarray(pooled_audio, dtype = np.float64)
            if pooled_audio.shape != (len(examples), self.audio_width):
                raise AblationError(
                    "pooled audio of shape {}, expected {}".format(
                        pooled_audio.shape, (len(examples), self.audio_width),
                    )
                )
            batch["audio"] = pooled_audio
        if SIGNALS in self.modalities:
            if self.scaler is None:
                raise AblationError("decoder signals need a fitted scaler")
            batch["signals"] = check_signals(np.stack([
                apply_scaler(e.signals, self.scaler) for e in examples
            ]))
        return batch

    def context(self, batch: dict, training = False, seed = None):
        """ `(embeddings, key_mask)` of a batch from `encode`. """
        prefixes = {}
        if self.m1 is not None:
            prefixes[AUDIO] = self.m1(
                batch["audio"], training = training,
                seed = fold_seed(seed, M1_STREAM),
            )
        if self.m2 is not None:
            prefixes[SIGNALS] = self.m2(
                batch["signals"], training = training,
                seed = fold_seed(seed, M2_STREAM),
            )
        return assemble_batch(
            self.modalities, prefixes, batch.get("hypothesis"),
            batch.get("hypothesis_mask"), self.prompt_ids,
            self.base.params["embedding/tokens"],
        )

    def logits(self, batch: dict, training = False, seed = None):
        """ [B, S, V] logits of the adapted base over the assembled context. """
        embeddings, key_mask = self.context(batch, training, seed)
        return self.base.forward_logits(
            embeddings, key_mask, adapters = self.adapters,
            training = training, seed = seed,
        )

    def decision_logits(self, batch: dict):
        """ [B, V] logits at the final prompt position, dropout disabled. """
        return self.logits(batch, training = False)[:, -1]

    def to_record(self) -> dict:
        return {
            "kind": "directedness_model",
            "modalities": list(self.modalities),
            "lora": self.lora_config.to_record(),
            "audio_width": self.audio_width,
            "seed": self.seed,
            "mapping_dropout": self.mapping_dropout,
            "prefix_length": self.prefix_length,
            "provider": self.provider,
            "scaler": (
                self.scaler.to_record() if self.scaler is not None else None
            ),
            "base_digest": self.base.params.digest(),
        }


def save_model(model: DirectednessModel, path):
    """ Adapters (`lora/<layer>/<target>/A|B`) and mapping networks with the
    configuration and the scaler needed to rebuild the model.
    """
    save_checkpoint(path, model.to_record(), model.params.snapshot())


def load_model(path, base: BaseLM) -> DirectednessModel:
    record, tensors = load_checkpoint(path)
    if record.get("kind") != "directedness_model":
        raise ValueError("{} is not a trained model checkpoint".format(path))
    if record["base_digest"] != base.params.digest():
        raise AblationError(
            "{} was trained on a different base model".format(path)
        )
    model = DirectednessModel(
        base, record["modalities"], LoraConfig.from_record(record["lora"]),
        audio_width = record["audio_width"], seed = record["seed"],
        mapping_dropout = record["mapping_dropout"],
        prefix_length = record["prefix_length"],
    )
    model.params.load(tensors)
    model.provider = record["provider"]
    if record["scaler"] is not None:
        model.scaler = ScalerStats.from_record(record["scaler"])
    return model
