import pytest

from benchmark.dataset import DatasetSpec, gen_dataset
from benchmark.grammar import TemplateGrammar
from machine_learning.ToyLanguageModel import BaseLM, ModelConfig
from machine_learning.Vocabulary import Vocabulary
from machine_learning.tensor_core import enable_determinism

enable_determinism()


def tiny_config(**overrides) -> ModelConfig:
    values = dict(
        embedding_width = 16, layers = 2, heads = 2, ffn_width = 32,
        max_length = 32, vocab_size = 512, max_tokens = 8, seed = 0,
    )
    values.update(overrides)
    return ModelConfig(**values)


@pytest.fixture(scope = "session")
def vocabulary():
    return Vocabulary.build(TemplateGrammar().words(), size = 512)


@pytest.fixture
def tiny_base(vocabulary):
    """ Untrained, frozen two-layer base model. """
    base = BaseLM(tiny_config(), vocabulary)
    base.freeze()
    return base


@pytest.fixture(scope = "session")
def tiny_dataset():
    return gen_dataset(DatasetSpec(train_size = 40, eval_size = 20, seed = 7))
