import os

import pytest

from ddsd.run_config import FALLBACK_SEED, SEED_VARIABLE, RunConfig, RunConfigError

CONFIGS = os.path.join(
    os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))),
    "configs",
)

TEXT = """
[train]
epochs = 2
clip_norm = none
loss_mask = full-sequence

[lora]
targets = q, v
rank = 4

[ablation Small]
modalities = t,b
train_size = 10
seeds = 0,1
rank = 2
"""


def test_parse_typed_values():
    config = RunConfig.parse(TEXT)
    assert config.get("train", "epochs") == 2
    assert config.get("train", "clip_norm") is None
    assert config.get("lora", "targets") == ("q", "v")
    train = config.train_config()
    assert train.epochs == 2
    assert train.loss_mask == "full-sequence"
    assert config.lora_config().rank == 4


def test_ablation_rows_override_lora_locally():
    spec, = RunConfig.parse(TEXT).ablation_specs()
    assert spec.name == "Small"
    assert spec.modalities == ("t", "b")
    assert spec.train_size == 10
    assert spec.seeds == (0, 1)
    assert spec.lora.rank == 2
    assert spec.lora.targets == ("q", "v")


def test_unknown_sections_and_keys():
    with pytest.raises(RunConfigError, match = "unknown section"):
        RunConfig.parse("[optimizer]\nepochs = 1\n")
    with pytest.raises(RunConfigError, match = "unknown key"):
        RunConfig.parse("[train]\nepoch = 1\n")
    with pytest.raises(RunConfigError):
        RunConfig.parse("[train]\nepochs = many\n")
    with pytest.raises(RunConfigError, match = "modalities missing"):
        RunConfig.parse("[ablation Empty]\nseeds = 0\n").ablation_specs()
    with pytest.raises(RunConfigError):
        RunConfig.parse("[train]\nloss_mask = all\n").train_config()


def test_seed_precedence(monkeypatch, settings):
    monkeypatch.setenv(SEED_VARIABLE, "7")
    settings.SEED = 3
    assert RunConfig.parse("[run]\nseed = 5\n").resolve_seed(9) == 9
    assert RunConfig.parse("[run]\nseed = 5\n").resolve_seed() == 5
    assert RunConfig().resolve_seed() == 7
    monkeypatch.delenv(SEED_VARIABLE)
    assert RunConfig().resolve_seed() == 3
    settings.SEED = None
    config = RunConfig()
    assert config.resolve_seed() == FALLBACK_SEED
    assert config.get("run", "seed") == FALLBACK_SEED


def test_canonical_text_and_digest():
    config = RunConfig.parse(TEXT)
    reordered = RunConfig.parse(
        "[lora]\nrank = 4\ntargets = q,v\n\n" + TEXT.split("[lora]")[0]
        + TEXT.split("rank = 4\n")[1]
    )
    assert reordered.to_ini() == config.to_ini()
    assert RunConfig.parse(config.to_ini()).digest() == config.digest()
    config.override("train", "epochs", 3)
    assert config.digest() != reordered.digest()
    with pytest.raises(RunConfigError):
        config.override("train", "steps", 3)


def test_grid_configuration():
    config = RunConfig.read(os.path.join(CONFIGS, "modality_grid.cfg"))
    specs = config.ablation_specs()
    assert [spec.name for spec in specs] == [
        "Uni 1", "Uni 2", "Uni 3", "Multi 1", "Multi 2", "Multi 3",
        "Multi 4", "Multi 4.1", "Multi 4.2", "Multi 4.3", "Multi 4.4",
        "Multi 4.5", "Multi 5",
    ]
    by_name = {spec.name: spec for spec in specs}
    assert not by_name["Multi 5"].lora.enabled
    assert by_name["Multi 4"].lora.enabled
    assert [by_name["Multi 4.{}".format(i)].train_size for i in range(1, 6)] \
        == [4000, 2000, 1000, 500, 100]
    assert by_name["Multi 2"].modalities == ("a", "b")


@pytest.mark.parametrize("name", ["lora_alternates.cfg", "encoder_sizes.cfg"])
def test_other_grids_parse(name):
    assert RunConfig.read(os.path.join(CONFIGS, name)).ablation_specs()


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        RunConfig.read(os.path.join(CONFIGS, "missing.cfg"))


def test_base_model_configurations():
    wide = RunConfig.read(os.path.join(CONFIGS, "base_wide.cfg"))
    deep = RunConfig.read(os.path.join(CONFIGS, "base_deep.cfg"))
    assert wide.model_config().layers == 2
    assert deep.model_config().layers == 6
    assert wide.model_config().embedding_width \
        > deep.model_config().embedding_width
    assert wide.ablation_specs() == []
