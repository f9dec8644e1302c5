"""
Ablation grid over modalities, LoRA and training-set size.

Every (base, row, seed) is trained once per audio provider it lists; rows
without audio train once and share the result across providers. Several
frozen bases may be swept in one run, each giving its own group of rows.
Jobs only receive paths, so they can run in separate processes that load
the frozen base and the dataset themselves.
"""
import concurrent.futures
import json
import logging
import multiprocessing
import os
from collections import OrderedDict

import numpy as np

from benchmark.dataset import MANIFEST, FrameSource, file_sha256, read_dataset
from machine_learning.ToyLanguageModel import load_base
from machine_learning.evaluation import (
    compute_eer, mass_fraction, score_examples,
)
from machine_learning.prefix_mapping import AUDIO, AblationError
from machine_learning.tensor_core import enable_determinism
from machine_learning.training import (
    FROZEN_ROW, AblationSpec, TrainConfig, train_model,
)

logger = logging.getLogger(__name__)

SPECIALIZED = "specialized-256"
GENERIC = "generic-1024"
MEDIAN = "median"

# relative EER reduction the full model must reach over the best single input
MULTIMODAL_GAIN = 0.10

# (kind, path, file digest) to a loaded base model or dataset
_cache = {}


def cached_load(kind, path):
    """ A frozen base (`kind` "base") or a dataset directory, reused for as
    long as the checkpoint or the manifest on disk is unchanged.
    """
    if kind == "base":
        digest = file_sha256(path)
    else:
        digest = file_sha256(os.path.join(path, MANIFEST))
    key = (kind, os.path.abspath(path), digest)
    if key not in _cache:
        _cache[key] = load_base(path) if kind == "base" else read_dataset(path)
    return _cache[key]


def clear_cache():
    _cache.clear()


def _initialize_worker():
    enable_determinism()


def base_label(path) -> str:
    directory = os.path.basename(os.path.dirname(os.path.normpath(path)))
    return directory or os.path.splitext(os.path.basename(path))[0]


def base_paths(bases) -> OrderedDict:
    """ Label to checkpoint path.

    Args:
        bases: A path, a comma-separated string of paths, a list of paths or
            a mapping. An entry written "label=path" is labelled explicitly;
            otherwise the checkpoint's directory name is the label.
    """
    if isinstance(bases, dict):
        return OrderedDict(bases)
    if isinstance(bases, str):
        bases = [b.strip() for b in bases.split(",") if b.strip()]
    labelled = OrderedDict()
    for entry in bases:
        label, _, path = entry.partition("=")
        if not path:
            label, path = base_label(entry), entry
        if label in labelled:
            raise AblationError("base label {} used twice".format(label))
        labelled[label] = path
    if not labelled:
        raise AblationError("no base checkpoint given")
    return labelled


def ablation_jobs(specs, config: TrainConfig, bases, data_dir) -> list:
    jobs = []
    for label, base_path in base_paths(bases).items():
        for spec in specs:
            providers = spec.providers if AUDIO in spec.modalities else [None]
            for seed in spec.seeds:
                for provider in providers:
                    jobs.append({
                        "spec": spec.to_record(),
                        "config": config.to_record(),
                        "seed": seed,
                        "provider": provider,
                        "base": label,
                        "base_path": base_path,
                        "data_dir": data_dir,
                    })
    return jobs


def run_job(job: dict) -> dict:
    """ Train and evaluate one (base, row, seed, provider) combination. """
    spec = AblationSpec.from_record(job["spec"])
    config = TrainConfig.from_record(job["config"])
    base = cached_load("base", job["base_path"])
    train, eval_examples, manifest = cached_load("data", job["data_dir"])
    frames = FrameSource.for_dataset(
        job["data_dir"], manifest, provider = job["provider"],
    )

    model, report = train_model(
        spec, config, base, train, seed = job["seed"], frame_source = frames,
        provider = job["provider"], dataset_hash = manifest["content_hash"],
    )
    pooled = None
    if AUDIO in spec.modalities:
        pooled = frames.pooled(eval_examples)
    scores = score_examples(model, eval_examples, pooled)
    result = compute_eer(scores)
    return {
        "name": spec.name,
        "provider": job["provider"],
        "seed": job["seed"],
        "base": job.get("base"),
        "eer": result.eer,
        "mass_fraction": mass_fraction(scores),
        "parameters": report.parameter_count["total"],
        "train_examples": report.provenance["train_examples"],
        "epoch_losses": report.epoch_losses,
        "dataset_hash": manifest["content_hash"],
        "base_digest": report.provenance["base_digest"],
    }


def merge_results(specs, results, config_hash = None) -> list:
    """ One row per (base, spec, seed) with parameter counts and EERs keyed
    by provider.
    """
    rows = OrderedDict()
    by_name = {spec.name: spec for spec in specs}
    for result in results:
        spec = by_name[result["name"]]
        key = (result.get("base"), spec.name, result["seed"])
        if key not in rows:
            row = OrderedDict()
            row["name"] = spec.name
            row["lora"] = spec.lora_enabled
            row["modalities"] = list(spec.modalities)
            row["train_size"] = result["train_examples"]
            row["seed"] = result["seed"]
            row["base"] = result.get("base")
            row["parameters"] = OrderedDict()
            row["eer"] = OrderedDict()
            row["mass_fraction"] = OrderedDict()
            row["dataset_hash"] = result["dataset_hash"]
            row["base_digest"] = result["base_digest"]
            row["config_hash"] = config_hash
            rows[key] = row
        row = rows[key]
        providers = (
            spec.providers if result["provider"] is None
            else [result["provider"]]
        )
        for provider in providers:
            row["parameters"][provider] = result["parameters"]
            row["eer"][provider] = result["eer"]
            row["mass_fraction"][provider] = result.get("mass_fraction")
    for row in rows.values():
        spec = by_name[row["name"]]
        for table in ["parameters", "eer", "mass_fraction"]:
            row[table] = OrderedDict(
                (p, row[table][p]) for p in spec.providers
            )
    return list(rows.values())


def bases_of(rows) -> list:
    """ Base labels of `rows` in first-seen order. """
    labels = []
    for row in rows:
        if row.get("base") not in labels:
            labels.append(row.get("base"))
    return labels


def check_consistency(rows):
    if len({row["dataset_hash"] for row in rows}) > 1:
        raise AblationError(
            "rows were trained on different data: dataset_hash differs"
        )
    for label in bases_of(rows):
        digests = {
            row["base_digest"] for row in rows if row.get("base") == label
        }
        if len(digests) > 1:
            raise AblationError(
                "rows of base {} were trained on different base weights"
                .format(label)
            )


def _median(values):
    if any(v is None for v in values):
        return None
    return float(np.median(values))


def median_rows(rows) -> list:
    """ Median EER and mass fraction over the seeds of each (base, row
    name), in first-seen order.
    """
    groups = OrderedDict()
    for row in rows:
        if row["seed"] == MEDIAN:
            continue
        groups.setdefault((row.get("base"), row["name"]), []).append(row)
    medians = []
    for group in groups.values():
        row = OrderedDict(group[0])
        row["seed"] = MEDIAN
        for table in ["eer", "mass_fraction"]:
            if table not in row:
                continue
            row[table] = OrderedDict(
                (provider, _median([g[table][provider] for g in group]))
                for provider in group[0][table]
            )
        medians.append(row)
    return medians


def check_rows(specs):
    """ Row names are unique, and a row with LoRA disabled over all three
    modalities is the frozen-model row the penalty check reads.
    """
    names = [spec.name for spec in specs]
    if len(set(names)) != len(names):
        raise AblationError("ablation row names must be unique")
    for spec in specs:
        if not spec.lora_enabled and len(spec.modalities) == 3 \
                and spec.name != FROZEN_ROW:
            raise AblationError(
                "{}: a LoRA-disabled row over t, a and b must be named {}"
                .format(spec.name, FROZEN_ROW)
            )


def run_ablation(
    specs, config: TrainConfig, bases, data_dir, workers = 1,
    config_hash = None,
) -> list:
    """ Train and evaluate every row of the grid against every base.

    Args:
        specs: `AblationSpec`s; row names must be unique.
        config: Training settings shared by every row.
        bases: Frozen base checkpoints, see `base_paths`.
        data_dir: Directory written by `write_dataset`.
        workers: Processes to run jobs in; 1 runs them in this process.
        config_hash: Run configuration hash recorded in every row.

    Returns:
        One row per (base, spec, seed) followed by the median rows.
    """
    check_rows(specs)
    jobs = ablation_jobs(specs, config, bases, data_dir)
    logger.info("running %d training jobs on %d workers", len(jobs), workers)

    clear_cache()
    try:
        if workers <= 1:
            results = [run_job(job) for job in jobs]
        else:
            with concurrent.futures.ProcessPoolExecutor(
                max_workers = workers,
                mp_context = multiprocessing.get_context("spawn"),
                initializer = _initialize_worker,
            ) as executor:
                results = list(executor.map(run_job, jobs))
    finally:
        clear_cache()

    rows = merge_results(specs, results, config_hash)
    check_consistency(rows)
    return rows + median_rows(rows)


def modality_label(modalities) -> str:
    return "{" + ",".join(modalities) + "}"


def format_table(rows) -> str:
    """ Aligned text table, one line per row; a Base column is added when
    the rows come from more than one base.
    """
    providers = []
    for row in rows:
        for provider in row["eer"]:
            if provider not in providers:
                providers.append(provider)
    several = len(bases_of(rows)) > 1
    header = ["Experiment"] + (["Base"] if several else [])
    header += ["LoRA", "Modality", "Train Size", "Seed"]
    for provider in providers:
        header += ["# Param " + provider, "EER " + provider]
    lines = [header]
    for row in rows:
        line = [row["name"]] + ([str(row.get("base"))] if several else [])
        line += [
            "yes" if row["lora"] else "no",
            modality_label(row["modalities"]),
            str(row["train_size"]),
            str(row["seed"]),
        ]
        for provider in providers:
            if provider in row["eer"]:
                line += [
                    str(row["parameters"][provider]),
                    "{:.2f}%".format(100. * row["eer"][provider]),
                ]
            else:
                line += ["-", "-"]
        lines.append(line)
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    return "\n".join(
        "  ".join(cell.ljust(width) for cell, width in zip(line, widths))
        .rstrip()
        for line in lines
    )


def write_rows(rows, path):
    with open(path, "w", encoding = "utf-8", newline = "\n") as f:
        for row in rows:
            f.write(json.dumps(row))
            f.write("\n")


def read_rows(path) -> list:
    rows = []
    with open(path, "r", encoding = "utf-8") as f:
        for number, line in enumerate(f, start = 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line, object_pairs_hook = OrderedDict))
            except ValueError as e:
                raise AblationError(
                    "{}: line {}: {}".format(path, number, e)
                ) from e
    return rows


def _medians(rows, base = None) -> list:
    medians = [row for row in rows if row["seed"] == MEDIAN]
    if not medians:
        medians = median_rows(rows)
    labels = bases_of(medians)
    if base is None and labels:
        base = labels[0]
    return [row for row in medians if row.get("base") == base]


def _eer(medians, name, provider):
    for row in medians:
        if row["name"] == name and provider in row["eer"]:
            return row["eer"][provider]
    return None


def _check(name, values, condition, detail):
    check = OrderedDict()
    check["name"] = name
    if any(v is None for v in values):
        check["passed"] = None
        check["detail"] = "skipped: rows missing"
    else:
        check["passed"] = bool(condition(*values))
        check["detail"] = detail.format(*[100. * v for v in values])
    return check


def ordering_checks(
    rows, specialized = SPECIALIZED, generic = GENERIC, base = None,
) -> list:
    """ Expected orderings of the grid's median EERs for one base, the first
    one in `rows` by default.

    A check whose rows are missing is reported with `passed` None.
    """
    medians = _medians(rows, base)

    def eer(name, provider = specialized):
        return _eer(medians, name, provider)

    uni = [eer("Uni 1"), eer("Uni 2"), eer("Uni 3")]
    best_uni = None if None in uni else min(uni)
    return [
        _check(
            "signals_worse_than_text", [eer("Uni 3"), eer("Uni 1")],
            lambda signals, text: signals > text,
            "signals {:.2f}% > text {:.2f}%",
        ),
        _check(
            "text_worse_than_audio", [eer("Uni 1"), eer("Uni 2")],
            lambda text, audio: text > audio,
            "text {:.2f}% > audio {:.2f}%",
        ),
        _check(
            "multimodal_gain", [eer("Multi 4"), best_uni],
            lambda multi, best: multi <= (1. - MULTIMODAL_GAIN) * best,
            "multimodal {:.2f}% against best single input {:.2f}%",
        ),
        _check(
            "specialized_not_worse",
            [eer("Uni 2", specialized), eer("Uni 2", generic)],
            lambda s, g: s <= g,
            "specialized {:.2f}% <= generic {:.2f}%",
        ),
        _check(
            "size_degradation", [eer("Multi 4.5"), eer("Multi 4")],
            lambda small, full: small > full,
            "smallest subset {:.2f}% > full {:.2f}%",
        ),
        _check(
            "frozen_penalty", [eer("Multi 5"), eer("Multi 4")],
            lambda frozen, adapted: frozen >= adapted,
            "frozen {:.2f}% >= adapted {:.2f}%",
        ),
    ]


def degradation_gaps(
    rows, small = "Multi 4.5", full = "Multi 4", base = None,
) -> dict:
    """ EER increase from the full to the smallest training set per provider,
    and how much larger it is for the generic provider.
    """
    medians = _medians(rows, base)
    gaps = OrderedDict()
    for row in medians:
        if row["name"] != full:
            continue
        for provider in row["eer"]:
            low = _eer(medians, small, provider)
            if low is not None:
                gaps[provider] = low - row["eer"][provider]
    if SPECIALIZED in gaps and GENERIC in gaps:
        gaps["amplification"] = gaps[GENERIC] - gaps[SPECIALIZED]
    return gaps
