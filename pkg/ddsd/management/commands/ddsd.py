import json
import logging
import os
from collections import OrderedDict

from django.core.management.base import BaseCommand, CommandError

from Key import Key
from benchmark.dataset import (
    FrameSource, gen_dataset, pretraining_corpus, read_dataset, write_dataset,
)
from benchmark.grammar import TemplateGrammar
from ddsd.run_config import RunConfig
from machine_learning.DirectednessModel import load_model, save_model
from machine_learning.ToyLanguageModel import (
    load_base, perplexity, pretrain_base, save_base,
)
from machine_learning.Vocabulary import Vocabulary
from machine_learning.ablation import (
    bases_of, degradation_gaps, format_table, ordering_checks, read_rows,
    run_ablation, write_rows,
)
from machine_learning.evaluation import (
    compute_eer, exhaustive_eer, mass_fraction, score_examples, write_det,
    write_scores,
)
from machine_learning.LossRecord import LossRecord
from machine_learning.prefix_mapping import AUDIO
from machine_learning.tensor_core import enable_determinism
from machine_learning.training import (
    AblationSpec, FrozenContractError, train_model,
)
from plot import plot_det, plot_size_sweep

logger = logging.getLogger(__name__)

# estimator and brute-force EER must agree this closely
ORACLE_TOLERANCE = 1e-9

DOMAIN_ERRORS = (ValueError, OSError, FrozenContractError)


def load_run_config(options) -> RunConfig:
    if options.get(Key.CONFIG):
        return RunConfig.read(options[Key.CONFIG])
    return RunConfig()


def required_path(options, config: RunConfig, key) -> str:
    path = options.get(key) or config.get("run", key)
    if not path:
        raise CommandError("--{} is required".format(key))
    config.override("run", key, path)
    return path


def prepare_out(options, config: RunConfig) -> str:
    out = required_path(options, config, Key.OUT)
    os.makedirs(out, exist_ok = True)
    return out


def write_json(record, path):
    with open(path, "w", encoding = "utf-8", newline = "\n") as f:
        json.dump(record, f, indent = 2)
        f.write("\n")


def finish(config: RunConfig, out):
    config.write(os.path.join(out, Key.FILE_CONFIG))


def gen_data(options, stdout):
    config = load_run_config(options)
    config.resolve_seed(options[Key.SEED])
    for key in [
        Key.TRAIN_SIZE, Key.EVAL, Key.PROVIDER, Key.EVAL_DIRECTED,
        Key.AMBIGUITY, Key.FRAME_STORAGE,
    ]:
        section_key = {Key.EVAL: "eval_size"}.get(key, key)
        config.override("dataset", section_key, options[key])
    if options[Key.TRIGGER]:
        config.override("dataset", "trigger_marker", True)
    out = prepare_out(options, config)

    spec = config.dataset_spec()
    train, eval_examples = gen_dataset(spec)
    manifest = write_dataset(
        out, train, eval_examples, spec, config_hash = config.digest(),
    )
    finish(config, out)
    stdout.write("dataset {} written to {}\n".format(
        manifest["content_hash"], out,
    ))


def pretrain(options, stdout):
    config = load_run_config(options)
    seed = config.resolve_seed(options[Key.SEED])
    for key in [Key.CORPUS, Key.EPOCHS]:
        config.override("pretrain", key, options[key])
    out = prepare_out(options, config)

    model_config = config.model_config()
    settings = config.pretrain_options()
    grammar = TemplateGrammar()
    corpus = pretraining_corpus(settings["corpus_size"], seed, grammar)
    vocabulary = Vocabulary.build(
        grammar.words(), size = model_config.vocab_size,
    )
    losses = LossRecord(labels = ["next_token"], name = "pretrain")
    model = pretrain_base(
        model_config, corpus, epochs = settings["epochs"],
        vocabulary = vocabulary, batch_size = settings["batch_size"],
        learning_rate = settings["learning_rate"], loss_record = losses,
    )
    held_out = pretraining_corpus(
        max(1, settings["corpus_size"] // 10), seed + 1, grammar,
    )
    save_base(model, os.path.join(out, Key.FILE_BASE))
    if losses.data:
        losses.plot(os.path.join(out, Key.FILE_LOSS))
    finish(config, out)
    stdout.write("base model {} written to {} (held-out perplexity {:.3f})\n"
                 .format(model.params.digest()[:16], out,
                         perplexity(model, held_out)))


def train(options, stdout):
    config = load_run_config(options)
    seed = config.resolve_seed(options[Key.SEED])
    for key in [Key.EPOCHS, Key.BATCH, Key.LRN_RATE, Key.LOSS_MASK,
                Key.GLB_NORM_CLIP]:
        config.override("train", key, options[key])
    config.override("lora", Key.RANK, options[Key.RANK])
    config.override("lora", Key.ALPHA, options[Key.ALPHA])
    if options[Key.TARGETS]:
        config.override(
            "lora", Key.TARGETS,
            tuple(t.strip() for t in options[Key.TARGETS].split(",")),
        )
    if options[Key.NO_LORA]:
        config.override("lora", "enabled", False)
    base_path = required_path(options, config, Key.BASE)
    data_dir = required_path(options, config, Key.DATA)
    out = prepare_out(options, config)

    base = load_base(base_path)
    train_examples, _, manifest = read_dataset(data_dir)
    provider = options[Key.PROVIDER] or (manifest["spec"] or {}).get(
        "provider", "specialized-256",
    )
    lora = config.lora_config()
    spec = AblationSpec(
        name = "train",
        modalities = options[Key.MODALITIES],
        lora_enabled = lora.enabled,
        train_size = options[Key.TRAIN_SIZE],
        providers = [provider],
        lora = lora,
        seeds = [seed],
    )
    losses = LossRecord(labels = [config.train_config().loss_mask])
    model, report = train_model(
        spec, config.train_config(), base, train_examples, seed = seed,
        frame_source = FrameSource.for_dataset(
            data_dir, manifest, provider = provider,
        ),
        provider = provider, dataset_hash = manifest["content_hash"],
        loss_record = losses,
    )
    save_model(model, os.path.join(out, Key.FILE_MODEL))
    record = report.to_record()
    record["config_hash"] = config.digest()
    write_json(record, os.path.join(out, Key.FILE_TRAIN_REPORT))
    if losses.data:
        losses.plot(os.path.join(out, Key.FILE_LOSS))
    finish(config, out)
    stdout.write("trained {} parameters ({}), written to {}\n".format(
        report.parameter_count["total"],
        ", ".join("{} {}".format(k, v)
                  for k, v in report.parameter_count.items() if k != "total"),
        out,
    ))


def evaluate(options, stdout):
    config = load_run_config(options)
    config.resolve_seed(options[Key.SEED])
    base_path = required_path(options, config, Key.BASE)
    data_dir = required_path(options, config, Key.DATA)
    model_path = options[Key.MODEL]
    if not model_path:
        raise CommandError("--model is required")
    out = prepare_out(options, config)

    base = load_base(base_path)
    model = load_model(model_path, base)
    _, eval_examples, manifest = read_dataset(data_dir)
    provider = options[Key.PROVIDER] or model.provider
    pooled = None
    if AUDIO in model.modalities:
        frames = FrameSource.for_dataset(
            data_dir, manifest, provider = provider,
        )
        pooled = frames.pooled(eval_examples)

    scores = score_examples(model, eval_examples, pooled)
    result = compute_eer(scores)
    oracle = exhaustive_eer(scores)
    if abs(result.eer - oracle) >= ORACLE_TOLERANCE:
        raise CommandError(
            "EER {!r} disagrees with the exhaustive count {!r}".format(
                result.eer, oracle,
            )
        )

    config_hash = config.digest()
    write_scores(
        scores, os.path.join(out, Key.FILE_SCORES), config_hash = config_hash,
    )
    write_det(
        result.det_points, os.path.join(out, Key.FILE_DET),
        config_hash = config_hash,
    )
    label = provider if AUDIO in model.modalities else "model"
    plot_det(
        {label: result.det_points}, os.path.join(out, Key.FILE_DET_PLOT),
        eers = {label: result.eer},
    )
    record = result.to_record()
    record["oracle_eer"] = oracle
    record["mass_fraction"] = mass_fraction(scores)
    record["modalities"] = list(model.modalities)
    record["provider"] = provider if AUDIO in model.modalities else None
    record["dataset_hash"] = manifest["content_hash"]
    record["config_hash"] = config_hash
    write_json(record, os.path.join(out, Key.FILE_EVAL))
    finish(config, out)
    stdout.write("EER {:.2f}% on {} examples, written to {}\n".format(
        100. * result.eer, len(scores), out,
    ))


def base_checks(rows) -> OrderedDict:
    """ Ordering checks and degradation gaps for each base in `rows`. """
    checks = OrderedDict()
    for label in bases_of(rows):
        checks[str(label)] = OrderedDict([
            ("ordering", ordering_checks(rows, base = label)),
            ("degradation_gaps", degradation_gaps(rows, base = label)),
        ])
    return checks


def render_report(rows, stdout):
    stdout.write(format_table(rows) + "\n")
    checks = base_checks(rows)
    for label, found in checks.items():
        if len(checks) > 1:
            stdout.write("base {}\n".format(label))
        for check in found["ordering"]:
            status = {True: "pass", False: "FAIL", None: "skip"}[
                check["passed"]
            ]
            stdout.write("{:<26}{:<6}{}\n".format(
                check["name"], status, check["detail"],
            ))
        gaps = found["degradation_gaps"]
        if gaps:
            stdout.write("degradation gap: {}\n".format(", ".join(
                "{} {:+.2f}".format(k, 100. * v) for k, v in gaps.items()
            )))


def sweep(options, stdout):
    if not options.get(Key.CONFIG):
        raise CommandError("--config is required")
    config = load_run_config(options)
    config.resolve_seed(options[Key.SEED])
    config.override("run", Key.WORKERS, options[Key.WORKERS])
    bases = required_path(options, config, Key.BASE)
    data_dir = required_path(options, config, Key.DATA)
    out = prepare_out(options, config)
    specs = config.ablation_specs()
    if not specs:
        raise CommandError(
            "{} defines no [ablation <name>] section".format(
                options[Key.CONFIG],
            )
        )
    workers = config.get("run", Key.WORKERS, 1)

    rows = run_ablation(
        specs, config.train_config(), bases, data_dir, workers = workers,
        config_hash = config.digest(),
    )
    write_rows(rows, os.path.join(out, Key.FILE_REPORT))
    with open(os.path.join(out, Key.FILE_TABLE), "w", encoding = "utf-8",
              newline = "\n") as f:
        f.write(format_table(rows) + "\n")
    write_json(base_checks(rows), os.path.join(out, Key.FILE_CHECKS))
    plot_size_sweep(rows, os.path.join(out, Key.FILE_SIZE_SWEEP))
    finish(config, out)
    render_report(rows, stdout)


def report(options, stdout):
    path = options[Key.INPUT]
    if not os.path.exists(path):
        raise CommandError("{} does not exist".format(path))
    render_report(read_rows(path), stdout)


HANDLERS = {
    "gen-data": gen_data,
    "pretrain": pretrain,
    "train": train,
    "eval": evaluate,
    "sweep": sweep,
    "report": report,
}


class Command(BaseCommand):
    help = "Generate data, pretrain, train, evaluate and sweep the " \
           "device-directedness models."

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(
            dest = Key.SUBCOMMAND, required = True,
        )

        def flag(sub, key, **kwargs):
            sub.add_argument(
                "--" + key.replace("_", "-"), dest = key, **kwargs,
            )

        def common(sub, paths):
            flag(sub, Key.CONFIG)
            flag(sub, Key.SEED, type = int)
            for key in paths:
                flag(sub, key)

        sub = subparsers.add_parser("gen-data")
        common(sub, [Key.OUT])
        sub.add_argument("--" + Key.TRAIN, dest = Key.TRAIN_SIZE, type = int)
        flag(sub, Key.EVAL, type = int)
        flag(sub, Key.PROVIDER)
        flag(sub, Key.EVAL_DIRECTED, type = float)
        flag(sub, Key.AMBIGUITY, type = float)
        flag(sub, Key.TRIGGER, action = "store_true")
        flag(sub, Key.FRAME_STORAGE)

        sub = subparsers.add_parser("pretrain")
        common(sub, [Key.OUT])
        flag(sub, Key.CORPUS, type = int)
        flag(sub, Key.EPOCHS, type = int)

        sub = subparsers.add_parser("train")
        common(sub, [Key.OUT, Key.BASE, Key.DATA])
        flag(sub, Key.MODALITIES, default = "t,a,b")
        flag(sub, Key.NO_LORA, action = "store_true")
        flag(sub, Key.TRAIN_SIZE, type = int)
        flag(sub, Key.PROVIDER)
        flag(sub, Key.EPOCHS, type = int)
        flag(sub, Key.BATCH, type = int)
        flag(sub, Key.LRN_RATE, type = float)
        flag(sub, Key.LOSS_MASK)
        flag(sub, Key.GLB_NORM_CLIP, type = float)
        flag(sub, Key.TARGETS)
        flag(sub, Key.RANK, type = int)
        flag(sub, Key.ALPHA, type = float)

        sub = subparsers.add_parser("eval")
        common(sub, [Key.OUT, Key.BASE, Key.DATA, Key.MODEL])
        flag(sub, Key.PROVIDER)

        sub = subparsers.add_parser("sweep")
        common(sub, [Key.OUT, Key.BASE, Key.DATA])
        flag(sub, Key.WORKERS, type = int)

        sub = subparsers.add_parser("report")
        flag(sub, Key.INPUT, required = True)

    def handle(self, *args, **options):
        enable_determinism()
        try:
            HANDLERS[options[Key.SUBCOMMAND]](options, self.stdout)
        except CommandError:
            raise
        except FileNotFoundError as e:
            raise CommandError(
                "missing input: {}".format(e.filename or e)
            ) from e
        except DOMAIN_ERRORS as e:
            raise CommandError("{}: {}".format(type(e).__name__, e)) from e
