import numpy as np
import pytest
import tensorflow as tf

from conftest import tiny_config
from machine_learning.LoraAdapter import (
    LoraAdapter, LoraConfig, LoraConfigurationError, adapter_forward,
    attach_adapters, count_trainable,
)
from machine_learning.ParamStore import ParamStore
from machine_learning.Rng import Rng
from machine_learning.ToyLanguageModel import BaseLM, ModelConfig
from machine_learning.tensor_core import ShapeError


def test_zero_initialized_adapters_leave_logits_unchanged(tiny_base):
    adapters = attach_adapters(
        tiny_base, LoraConfig(), ParamStore(), Rng(0),
    )
    embeddings = tiny_base.embed(tf.constant([[4, 9, 12, 3]], dtype = tf.int64))
    plain = tiny_base.forward_logits(embeddings).numpy()
    adapted = tiny_base.forward_logits(embeddings, adapters = adapters).numpy()
    assert np.array_equal(plain, adapted)


def test_adapters_change_logits_once_b_moves(tiny_base):
    params = ParamStore()
    adapters = attach_adapters(tiny_base, LoraConfig(), params, Rng(0))
    params["lora/0/q/B"].assign(np.full((16, 8), 0.1))
    embeddings = tiny_base.embed(tf.constant([[4, 9, 12, 3]], dtype = tf.int64))
    plain = tiny_base.forward_logits(embeddings).numpy()
    adapted = tiny_base.forward_logits(embeddings, adapters = adapters).numpy()
    assert not np.array_equal(plain[0, 1:], adapted[0, 1:])


def test_adapter_names_and_init(tiny_base):
    params = ParamStore()
    attach_adapters(tiny_base, LoraConfig(), params, Rng(0))
    assert params.names()[:2] == ["lora/0/q/A", "lora/0/q/B"]
    assert params["lora/1/dense/A"].shape == (8, 16)
    assert not np.any(params["lora/1/dense/B"].numpy())
    assert np.any(params["lora/1/dense/A"].numpy())


def test_default_adapter_count(vocabulary):
    base = BaseLM(ModelConfig(), vocabulary)
    base.freeze()
    adapters = attach_adapters(base, LoraConfig(), ParamStore(), Rng(0))
    # 4 layers x {q, v, dense} x 8 x (64 + 64)
    assert count_trainable(adapters)["lora"] == 12288


def test_feed_forward_targets_and_per_target_ranks(tiny_base):
    config = LoraConfig(targets = ("ffn_in", "ffn_out"), ranks = {"ffn_in": 2})
    adapters = attach_adapters(tiny_base, config, ParamStore(), Rng(0))
    # ffn_in: 2 x (16 + 32); ffn_out: 8 x (32 + 16); two layers
    assert count_trainable(adapters)["total"] == 2 * (96 + 384)


def test_disabled_config_attaches_nothing(tiny_base):
    adapters = attach_adapters(
        tiny_base, LoraConfig(enabled = False), ParamStore(), Rng(0),
    )
    assert len(adapters) == 0
    assert count_trainable(adapters)["total"] == 0


def test_adapters_need_a_frozen_model(vocabulary):
    base = BaseLM(tiny_config(), vocabulary)
    with pytest.raises(LoraConfigurationError):
        attach_adapters(base, LoraConfig(), ParamStore(), Rng(0))


def test_config_validation():
    with pytest.raises(LoraConfigurationError):
        LoraConfig(targets = ("k",))
    with pytest.raises(LoraConfigurationError):
        LoraConfig(rank = 0)
    with pytest.raises(LoraConfigurationError):
        LoraConfig(targets = ("q",), ranks = {"v": 4})


def test_adapter_forward_formula():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 5))
    kernel = rng.standard_normal((5, 4))
    A = tf.constant(rng.standard_normal((2, 5)))
    B = tf.constant(rng.standard_normal((4, 2)))
    adapter = LoraAdapter(0, "q", A, B, alpha = 4.)
    y = adapter_forward(x, kernel, adapter).numpy()
    expected = x @ kernel + 2. * (x @ A.numpy().T) @ B.numpy().T
    assert np.allclose(y, expected, rtol = 0., atol = 1e-12)


def test_adapter_forward_shape_errors():
    A = tf.zeros([2, 5], dtype = tf.float64)
    B = tf.zeros([3, 2], dtype = tf.float64)
    with pytest.raises(ShapeError):
        adapter_forward(np.zeros((1, 4)), np.zeros((5, 4)))
    with pytest.raises(ShapeError):
        adapter_forward(
            np.zeros((1, 5)), np.zeros((5, 4)), LoraAdapter(0, "q", A, B, 8.),
        )


def test_adapter_forward_by_hand():
    A = tf.constant([[1., 0.]], dtype = tf.float64)
    B = tf.constant([[0.], [1.]], dtype = tf.float64)
    adapter = LoraAdapter(0, "q", A, B, alpha = 2.)
    y = adapter_forward([[3., 4.]], np.eye(2), adapter).numpy()
    assert y.tolist() == [[3., 10.]]


@pytest.mark.parametrize("k", [3., 0.1, 250.])
def test_scaling_alpha_against_b_leaves_output_unchanged(k):
    rng = np.random.default_rng(4)
    x = rng.standard_normal((6, 8))
    kernel = rng.standard_normal((8, 5))
    A = tf.constant(rng.standard_normal((3, 8)))
    B = rng.standard_normal((5, 3))
    reference = adapter_forward(
        x, kernel, LoraAdapter(0, "v", A, tf.constant(B), alpha = 6.),
    ).numpy()
    scaled = adapter_forward(
        x, kernel, LoraAdapter(0, "v", A, tf.constant(B / k), alpha = 6. * k),
    ).numpy()
    assert np.allclose(scaled, reference, rtol = 0., atol = 1e-12)
