"""
Synthetic multimodal benchmark: generation, JSON-Lines persistence and the
dataset manifest.

Record layout, one UTF-8 JSON object per line, keys in this order:

    id          "train-000042"
    label       "directed" | "non_directed"
    text        1-best hypothesis
    signals     {"graph_cost_avg", "acoustic_cost_avg", "confidence_avg",
                 "alt_words_avg"}
    frames      T x N matrix of audio features          (inline storage)
    frames_ref  {"provider", "seed"}                     (regenerated)
             or {"path", "key"}                          (sidecar file)
    split       "train" | "eval"

Exactly one of `frames` and `frames_ref` is present. External features use
inline or sidecar storage.
"""
import hashlib
import json
import logging
import os
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from benchmark.features import (
    DIRECTED, EXTERNAL, LABELS, NON_DIRECTED, DecoderSignals, provider_spec,
    synth_audio, synth_signals,
)
from benchmark.grammar import CONTINUATION, TRIGGER_MARKER, TemplateGrammar
from machine_learning.Rng import Rng
from machine_learning.checkpoint import load_checkpoint, save_checkpoint
from machine_learning.prefix_mapping import mean_pool

logger = logging.getLogger(__name__)

SPLITS = ("train", "eval")
FRAME_STORAGE = ("reference", "inline", "sidecar")
# share of directed utterances opening with the trigger marker when enabled
TRIGGER_RATES = {"train": 0.29, "eval": 0.12}

MANIFEST = "manifest.json"


class DatasetSpecError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass
class DatasetSpec:
    train_size: int = 8000
    eval_size: int = 2000
    eval_directed_fraction: float = 0.40
    provider: str = "specialized-256"
    seed: int = 42
    ambiguity_fraction: float = 0.25
    trigger_marker: bool = False
    frame_storage: str = "reference"

    def __post_init__(self):
        if self.train_size < 0 or self.eval_size < 0:
            raise DatasetSpecError("dataset sizes must be non-negative")
        if self.train_size % 2 != 0:
            raise DatasetSpecError(
                "train size {} cannot be split into balanced classes".format(
                    self.train_size,
                )
            )
        if not 0. <= self.eval_directed_fraction <= 1.:
            raise DatasetSpecError("eval directed fraction must lie in [0, 1]")
        if not 0. <= self.ambiguity_fraction <= 1.:
            raise DatasetSpecError("ambiguity fraction must lie in [0, 1]")
        if self.frame_storage not in FRAME_STORAGE:
            raise DatasetSpecError(
                "frame storage {} not one of {}".format(
                    self.frame_storage, ", ".join(FRAME_STORAGE),
                )
            )
        if self.provider == EXTERNAL:
            raise DatasetSpecError(
                "external features are ingested from records, not generated"
            )
        provider_spec(self.provider)

    def trigger_rate(self, split: str) -> float:
        return TRIGGER_RATES[split] if self.trigger_marker else 0.

    def to_record(self) -> dict:
        return asdict(self)


@dataclass
class MultimodalExample:
    id: str
    label: str
    text: str
    signals: DecoderSignals
    split: str
    frames: np.ndarray = None
    frames_ref: dict = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise DatasetFormatError("unknown label {}".format(self.label))
        if self.split not in SPLITS:
            raise DatasetFormatError("unknown split {}".format(self.split))
        if (self.frames is None) == (self.frames_ref is None):
            raise DatasetFormatError(
                "{}: exactly one of frames and frames_ref".format(self.id)
            )

    @property
    def directed(self) -> bool:
        return self.label == DIRECTED

    def to_record(self) -> OrderedDict:
        record = OrderedDict()
        record["id"] = self.id
        record["label"] = self.label
        record["text"] = self.text
        record["signals"] = self.signals.to_record()
        if self.frames is not None:
            record["frames"] = np.asarray(self.frames).tolist()
        else:
            record["frames_ref"] = dict(self.frames_ref)
        record["split"] = self.split
        return record

    @classmethod
    def from_record(cls, record: dict):
        frames = record.get("frames")
        if frames is not None:
            frames = np.asarray(frames, dtype = np.float64)
        return cls(
            id = record["id"],
            label = record["label"],
            text = record["text"],
            signals = DecoderSignals.from_record(record["signals"]),
            split = record["split"],
            frames = frames,
            frames_ref = record.get("frames_ref"),
        )

    def __eq__(self, other):
        if not isinstance(other, MultimodalExample):
            return NotImplemented
        return self.to_record() == other.to_record()


def sample_text(
    grammar: TemplateGrammar, label: str, stream, ambiguity_fraction: float,
    trigger_rate = 0.,
) -> str:
    if stream.random() < ambiguity_fraction:
        text = grammar.sample_ambiguous(stream)
    elif label == DIRECTED:
        text = grammar.sample_directed(stream)
    else:
        text = grammar.sample_non_directed(stream)
    if label == DIRECTED and stream.random() < trigger_rate:
        text = "{} {}".format(TRIGGER_MARKER.capitalize(), text)
    return text


def split_labels(split: str, size: int, spec: DatasetSpec) -> list:
    if split == "train":
        directed = size // 2
    else:
        directed = int(round(size * spec.eval_directed_fraction))
    labels = np.array(
        [DIRECTED] * directed + [NON_DIRECTED] * (size - directed),
    )
    order = Rng(spec.seed).stream("labels", split).permutation(size)
    return labels[order].tolist()


def example_id(split: str, index: int) -> str:
    return "{}-{:06d}".format(split, index)


def gen_split(split: str, size: int, spec: DatasetSpec, grammar = None):
    grammar = grammar or TemplateGrammar()
    rng = Rng(spec.seed)
    examples = []
    for index, label in enumerate(split_labels(split, size, spec)):
        name = example_id(split, index)
        text = sample_text(
            grammar, label, rng.stream("text", name), spec.ambiguity_fraction,
            spec.trigger_rate(split),
        )
        frames, frames_ref = None, None
        if spec.frame_storage == "reference":
            frames_ref = {"provider": spec.provider, "seed": spec.seed}
        else:
            frames = synth_audio(
                name, label, provider_spec(spec.provider), spec.seed, split,
            ).frames
        examples.append(MultimodalExample(
            id = name, label = label, text = text,
            signals = synth_signals(name, label, spec.seed), split = split,
            frames = frames, frames_ref = frames_ref,
        ))
    return examples


def gen_dataset(spec: DatasetSpec, grammar = None):
    """ Returns `(train, eval)` example lists. """
    train = gen_split("train", spec.train_size, spec, grammar)
    eval_examples = gen_split("eval", spec.eval_size, spec, grammar)
    logger.info(
        "generated %d train and %d eval examples (seed %d)",
        len(train), len(eval_examples), spec.seed,
    )
    return train, eval_examples


def pretraining_corpus(n: int, seed: int, grammar = None,
                       ambiguity_fraction = 0.25) -> list:
    """ Label-free template sentences for pretraining the base model. """
    grammar = grammar or TemplateGrammar()
    rng = Rng(seed)
    sentences = []
    for i in range(n):
        stream = rng.stream("corpus", i)
        label = LABELS[int(stream.integers(2))]
        sentences.append(
            sample_text(grammar, label, stream, ambiguity_fraction)
        )
    return sentences


def text_bayes_error(
    grammar: TemplateGrammar, ambiguity_fraction: float,
    directed_prior = 0.5, trigger_rate = 0., max_tokens = 16,
) -> float:
    """ Exact error of the best text-only decision.

    Directed and non-directed sentences never coincide (checked here by
    enumerating every template expansion), so errors come only from the
    ambiguous pool, which both classes sample identically; a directed
    ambiguous sentence opening with the trigger marker is unambiguous.
    """
    directed = grammar.support(grammar.directed, max_tokens)
    non_directed = grammar.support(grammar.non_directed, max_tokens)
    ambiguous = grammar.support(grammar.ambiguous, max_tokens)
    for name, first, second in [
        ("directed/ambiguous", directed, ambiguous),
        ("non-directed/ambiguous", non_directed, ambiguous),
        ("directed/non-directed", directed, non_directed),
    ]:
        overlap = first & second
        if overlap:
            raise DatasetSpecError(
                "{} templates overlap: {}".format(
                    name, " ".join(sorted(overlap)[0]),
                )
            )
    for words in directed | ambiguous:
        if CONTINUATION in words or TRIGGER_MARKER in words:
            raise DatasetSpecError(
                "reserved word in template: {}".format(" ".join(words))
            )
    return min(
        directed_prior * ambiguity_fraction * (1. - trigger_rate),
        (1. - directed_prior) * ambiguity_fraction,
    )


def write_records(examples, path):
    with open(path, "w", encoding = "utf-8", newline = "\n") as f:
        for example in examples:
            f.write(json.dumps(example.to_record(), ensure_ascii = False))
            f.write("\n")


def read_records(path) -> list:
    examples = []
    seen = set()
    with open(path, "r", encoding = "utf-8") as f:
        for number, line in enumerate(f, start = 1):
            try:
                record = json.loads(line, object_pairs_hook = OrderedDict)
                example = MultimodalExample.from_record(record)
            except (ValueError, KeyError, TypeError) as e:
                raise DatasetFormatError(
                    "{}: line {}: {}".format(path, number, e)
                ) from e
            if example.id in seen:
                raise DatasetFormatError(
                    "{}: line {}: duplicate id {}".format(
                        path, number, example.id,
                    )
                )
            seen.add(example.id)
            examples.append(example)
    return examples


def sidecar_name(split: str) -> str:
    return "frames_{}.ckpt".format(split)


def write_sidecar(examples, path) -> list:
    """ Move inline frames into a container file next to the records.

    Returns:
        The examples with `frames_ref` pointing into the file.
    """
    tensors = OrderedDict((e.id, e.frames) for e in examples)
    save_checkpoint(path, {"kind": "frames"}, tensors)
    name = os.path.basename(path)
    return [
        MultimodalExample(
            id = e.id, label = e.label, text = e.text, signals = e.signals,
            split = e.split, frames_ref = {"path": name, "key": e.id},
        )
        for e in examples
    ]


class FrameSource:
    """ Resolves the audio frames of examples, caching sidecar files.

    Stored frames (inline or sidecar) were produced by one provider. When a
    different synthetic provider is requested they are regenerated from the
    example id and the seed they were stored with; if that provider is not
    known the request is refused.

    Args:
        data_dir: Directory sidecar paths are relative to.
        provider: Synthetic provider to serve; defaults to the provider the
            frames were generated with.
        stored: `{"provider", "seed"}` of the stored frames, normally the
            dataset manifest's spec.
    """

    def __init__(self, data_dir = None, provider = None, stored = None):
        self.data_dir = data_dir
        self.provider = provider
        self.stored = stored
        self.sidecars = {}

    @classmethod
    def for_dataset(cls, data_dir, manifest: dict, provider = None):
        spec = manifest.get("spec")
        stored = None
        if spec is not None:
            stored = {"provider": spec["provider"], "seed": spec["seed"]}
        return cls(data_dir, provider = provider, stored = stored)

    def _stored_frames(self, example: MultimodalExample) -> np.ndarray:
        if example.frames is not None:
            return example.frames
        ref = example.frames_ref
        path = os.path.join(self.data_dir or ".", ref["path"])
        if path not in self.sidecars:
            if not os.path.exists(path):
                raise FileNotFoundError(path)
            self.sidecars[path] = load_checkpoint(path)[1]
        return self.sidecars[path][ref["key"]]

    def _regenerate(self, example, tag, seed) -> np.ndarray:
        if tag == EXTERNAL:
            raise DatasetFormatError(
                "{}: external frames cannot be regenerated".format(example.id)
            )
        return synth_audio(
            example.id, example.label, provider_spec(tag), seed,
            example.split,
        ).frames

    def frames(self, example: MultimodalExample) -> np.ndarray:
        ref = example.frames_ref
        if ref is not None and "path" not in ref:
            return self._regenerate(
                example, self.provider or ref["provider"], ref["seed"],
            )
        if self.provider is None or self.provider == EXTERNAL:
            return self._stored_frames(example)
        if self.stored is None:
            raise DatasetFormatError(
                "{}: stored frames of an unknown provider cannot serve "
                "{}".format(example.id, self.provider)
            )
        if self.provider == self.stored["provider"]:
            return self._stored_frames(example)
        return self._regenerate(example, self.provider, self.stored["seed"])

    def pooled(self, examples) -> np.ndarray:
        return np.stack([mean_pool(self.frames(e)) for e in examples])


def content_hash(train, eval_examples) -> str:
    """ SHA-256 over ids, labels, text, signals and splits; independent of
    how and with which provider the audio is stored.
    """
    sha = hashlib.sha256()
    for example in list(train) + list(eval_examples):
        record = example.to_record()
        record.pop("frames", None)
        record.pop("frames_ref", None)
        sha.update(json.dumps(record, ensure_ascii = False).encode("utf-8"))
        sha.update(b"\n")
    return sha.hexdigest()


def file_sha256(path) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            sha.update(chunk)
    return sha.hexdigest()


def write_dataset(
    out_dir, train, eval_examples, spec: DatasetSpec = None, config_hash = None,
) -> dict:
    """ Write `train.jsonl`, `eval.jsonl`, sidecars if requested, and the
    manifest.

    Returns:
        The manifest.
    """
    os.makedirs(out_dir, exist_ok = True)
    files = OrderedDict()
    for split, examples in [("train", train), ("eval", eval_examples)]:
        if spec is not None and spec.frame_storage == "sidecar":
            sidecar = os.path.join(out_dir, sidecar_name(split))
            examples = write_sidecar(examples, sidecar)
            files[sidecar_name(split)] = file_sha256(sidecar)
        path = os.path.join(out_dir, "{}.jsonl".format(split))
        write_records(examples, path)
        files["{}.jsonl".format(split)] = file_sha256(path)

    manifest = OrderedDict()
    manifest["content_hash"] = content_hash(train, eval_examples)
    manifest["config_hash"] = config_hash
    manifest["spec"] = spec.to_record() if spec is not None else None
    manifest["counts"] = {
        split: {
            label: sum(e.label == label for e in examples)
            for label in LABELS
        }
        for split, examples in [("train", train), ("eval", eval_examples)]
    }
    manifest["files"] = files
    with open(os.path.join(out_dir, MANIFEST), "w", encoding = "utf-8") as f:
        json.dump(manifest, f, indent = 2, sort_keys = True)
        f.write("\n")
    return manifest


def read_dataset(data_dir):
    """ Read both splits and verify them against the manifest.

    Returns:
        `(train, eval, manifest)`.
    """
    path = os.path.join(data_dir, MANIFEST)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, "r", encoding = "utf-8") as f:
        manifest = json.load(f)
    for name, digest in manifest["files"].items():
        file_path = os.path.join(data_dir, name)
        if not os.path.exists(file_path):
            raise FileNotFoundError(file_path)
        if file_sha256(file_path) != digest:
            raise DatasetFormatError("{} does not match the manifest".format(
                file_path,
            ))
    train = read_records(os.path.join(data_dir, "train.jsonl"))
    eval_examples = read_records(os.path.join(data_dir, "eval.jsonl"))
    if content_hash(train, eval_examples) != manifest["content_hash"]:
        raise DatasetFormatError(
            "{}: content hash does not match the manifest".format(data_dir)
        )
    return train, eval_examples, manifest
