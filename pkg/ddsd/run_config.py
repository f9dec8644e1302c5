"""
Run configuration files.

A run configuration is an INI file with the sections [run], [model],
[pretrain], [lora], [train], [dataset] and any number of
[ablation <name>] sections. Every key is optional; unknown sections and keys
are rejected. The effective configuration (file values, then flag overrides)
is written back canonically, and its SHA-256 identifies the run.
"""
import configparser
import hashlib
import io
import os
from collections import OrderedDict

from django.conf import settings

from benchmark.dataset import DatasetSpec
from machine_learning.LoraAdapter import LoraConfig
from machine_learning.ToyLanguageModel import ModelConfig
from machine_learning.training import (
    DEFAULT_PROVIDERS, DEFAULT_SEEDS, AblationSpec, TrainConfig,
)

ABLATION = "ablation "
FALLBACK_SEED = 42
SEED_VARIABLE = "DDSD_SEED"


class RunConfigError(ValueError):
    pass


def _bool(text):
    value = text.strip().lower()
    if value in ("1", "yes", "true", "on"):
        return True
    if value in ("0", "no", "false", "off"):
        return False
    raise ValueError("not a boolean: {}".format(text))


def _optional(kind):
    def parse(text):
        if text.strip().lower() in ("", "none"):
            return None
        return kind(text)

    return parse


def _list(kind):
    def parse(text):
        return tuple(kind(v.strip()) for v in text.split(",") if v.strip())

    return parse


def _ranks(text):
    """ "q:8,v:4" to {"q": 8, "v": 4}. """
    ranks = {}
    for item in _list(str)(text):
        target, _, rank = item.partition(":")
        ranks[target.strip()] = int(rank)
    return ranks


def _format(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, dict):
        return ",".join("{}:{}".format(k, v) for k, v in sorted(value.items()))
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


LORA_SCHEMA = OrderedDict([
    ("targets", _list(str)),
    ("rank", int),
    ("alpha", float),
    ("dropout", float),
    ("enabled", _bool),
    ("ranks", _ranks),
])

SCHEMA = OrderedDict([
    ("run", OrderedDict([
        ("seed", _optional(int)),
        ("out", str),
        ("base", str),
        ("data", str),
        ("workers", int),
    ])),
    ("model", OrderedDict([
        ("embedding_width", int),
        ("layers", int),
        ("heads", int),
        ("ffn_width", int),
        ("max_length", int),
        ("vocab_size", int),
        ("max_tokens", int),
    ])),
    ("pretrain", OrderedDict([
        ("corpus_size", int),
        ("epochs", int),
        ("batch_size", int),
        ("learning_rate", float),
    ])),
    ("lora", LORA_SCHEMA),
    ("train", OrderedDict([
        ("epochs", int),
        ("batch_size", int),
        ("learning_rate", float),
        ("beta_1", float),
        ("beta_2", float),
        ("epsilon", float),
        ("loss_mask", str),
        ("clip_norm", _optional(float)),
    ])),
    ("dataset", OrderedDict([
        ("train_size", int),
        ("eval_size", int),
        ("eval_directed_fraction", float),
        ("provider", str),
        ("ambiguity_fraction", float),
        ("trigger_marker", _bool),
        ("frame_storage", str),
    ])),
])

ABLATION_SCHEMA = OrderedDict([
    ("modalities", _list(str)),
    ("lora", _bool),
    ("train_size", _optional(int)),
    ("providers", _list(str)),
    ("seeds", _list(int)),
])
ABLATION_SCHEMA.update(
    (key, kind) for key, kind in LORA_SCHEMA.items() if key != "enabled"
)

PRETRAIN_DEFAULTS = {
    "corpus_size": 20000, "epochs": 3, "batch_size": 32, "learning_rate": 1e-3,
}


class RunConfig:
    """ Parsed run configuration: typed values per section, in file order. """

    def __init__(self, sections = None, source = None):
        self.sections = OrderedDict()
        self.source = source
        for name, values in (sections or {}).items():
            self.sections[name] = OrderedDict(values)

    @classmethod
    def parse(cls, text, source = "<string>"):
        parser = configparser.ConfigParser(interpolation = None)
        try:
            parser.read_string(text, source = source)
        except configparser.Error as e:
            raise RunConfigError(str(e)) from e
        if parser.defaults():
            raise RunConfigError(
                "{}: the DEFAULT section is not supported".format(source)
            )
        sections = OrderedDict()
        for name in parser.sections():
            schema = cls.schema_for(name, source)
            values = OrderedDict()
            for key, text_value in parser.items(name):
                if key not in schema:
                    raise RunConfigError(
                        "{}: unknown key {} in [{}]".format(source, key, name)
                    )
                try:
                    values[key] = schema[key](text_value)
                except ValueError as e:
                    raise RunConfigError(
                        "{}: [{}] {}: {}".format(source, name, key, e)
                    ) from e
            sections[name] = values
        return cls(sections, source)

    @classmethod
    def read(cls, path):
        if not os.path.exists(path):
            raise FileNotFoundError(path)
        with open(path, "r", encoding = "utf-8") as f:
            return cls.parse(f.read(), source = path)

    @staticmethod
    def schema_for(name, source = "<string>"):
        if name.startswith(ABLATION):
            if not name[len(ABLATION):].strip():
                raise RunConfigError(
                    "{}: ablation section without a name".format(source)
                )
            return ABLATION_SCHEMA
        if name not in SCHEMA:
            raise RunConfigError(
                "{}: unknown section [{}]".format(source, name)
            )
        return SCHEMA[name]

    def get(self, section, key, default = None):
        return self.sections.get(section, {}).get(key, default)

    def override(self, section, key, value):
        """ Set a value from a command-line flag; None leaves it unchanged. """
        if value is None:
            return
        if key not in self.schema_for(section):
            raise RunConfigError("unknown key {} in [{}]".format(key, section))
        self.sections.setdefault(section, OrderedDict())[key] = value

    def resolve_seed(self, flag = None) -> int:
        """ Flag, then [run] seed, then DDSD_SEED, then the settings Seed,
        then 42. The result is stored in [run].
        """
        seed = flag
        if seed is None:
            seed = self.get("run", "seed")
        if seed is None and os.environ.get(SEED_VARIABLE, "").strip():
            try:
                seed = int(os.environ[SEED_VARIABLE])
            except ValueError as e:
                raise RunConfigError(
                    "{} is not an integer".format(SEED_VARIABLE)
                ) from e
        if seed is None:
            seed = getattr(settings, "SEED", None)
        if seed is None:
            seed = FALLBACK_SEED
        self.override("run", "seed", int(seed))
        return int(seed)

    def _build(self, kind, section, **extra):
        values = OrderedDict(self.sections.get(section, {}))
        values.update(extra)
        try:
            return kind(**values)
        except (TypeError, ValueError) as e:
            raise RunConfigError("[{}]: {}".format(section, e)) from e

    def model_config(self) -> ModelConfig:
        return self._build(ModelConfig, "model", seed = self.resolve_seed())

    def pretrain_options(self) -> dict:
        options = dict(PRETRAIN_DEFAULTS)
        options.update(self.sections.get("pretrain", {}))
        return options

    def lora_config(self) -> LoraConfig:
        return self._build(LoraConfig, "lora")

    def train_config(self) -> TrainConfig:
        return self._build(TrainConfig, "train")

    def dataset_spec(self) -> DatasetSpec:
        return self._build(DatasetSpec, "dataset", seed = self.resolve_seed())

    def ablation_specs(self) -> list:
        """ One `AblationSpec` per [ablation <name>] section, in file order.

        Adapter keys of a section override [lora] for that row only.
        """
        specs = []
        for name, values in self.sections.items():
            if not name.startswith(ABLATION):
                continue
            row = name[len(ABLATION):].strip()
            if "modalities" not in values:
                raise RunConfigError("[{}]: modalities missing".format(name))
            lora = OrderedDict(self.sections.get("lora", {}))
            lora.update(
                (k, v) for k, v in values.items() if k in LORA_SCHEMA
            )
            try:
                specs.append(AblationSpec(
                    name = row,
                    modalities = values["modalities"],
                    lora_enabled = values.get("lora", True),
                    train_size = values.get("train_size"),
                    providers = values.get("providers", DEFAULT_PROVIDERS),
                    lora = LoraConfig(**lora),
                    seeds = values.get("seeds", DEFAULT_SEEDS),
                ))
            except (TypeError, ValueError) as e:
                raise RunConfigError("[{}]: {}".format(name, e)) from e
        return specs

    def to_ini(self) -> str:
        """ Canonical text: sections and keys sorted, one value format. """
        out = io.StringIO()
        for name in sorted(self.sections):
            out.write("[{}]\n".format(name))
            for key in sorted(self.sections[name]):
                out.write("{} = {}\n".format(
                    key, _format(self.sections[name][key]),
                ))
            out.write("\n")
        return out.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_ini().encode("utf-8")).hexdigest()

    def write(self, path):
        with open(path, "w", encoding = "utf-8", newline = "\n") as f:
            f.write(self.to_ini())
