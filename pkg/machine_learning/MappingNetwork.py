import numpy as np
import tensorflow as tf

from machine_learning.ParamStore import ParamStore
from machine_learning.Rng import Rng
from machine_learning.tensor_core import ShapeError, as_tensor, dropout, linear


class MappingNetwork:
    """ One tanh hidden layer of width E/2 followed by a linear map to the
    embedding width; dropout acts on the hidden units while training.

    With `prefix_length` p > 1 the output holds p consecutive E-wide prefix
    embeddings.
    """

    def __init__(
        self, name: str, input_width: int, embedding_width: int,
        params: ParamStore, rng: Rng, dropout_rate = 0.10, prefix_length = 1,
    ):
        if embedding_width % 2 != 0:
            raise ShapeError("embedding width must be even")
        self.name = name
        self.input_width = int(input_width)
        self.embedding_width = int(embedding_width)
        self.hidden_width = self.embedding_width // 2
        self.dropout_rate = dropout_rate
        self.prefix_length = int(prefix_length)
        output_width = self.embedding_width * self.prefix_length

        stream = rng.stream("mapping_init", name)

        def glorot(fan_in, fan_out):
            limit = np.sqrt(6. / (fan_in + fan_out))
            return stream.uniform(-limit, limit, size = (fan_in, fan_out))

        self.hidden_kernel = params.add(
            name + "/hidden/kernel", glorot(self.input_width, self.hidden_width),
        )
        self.hidden_bias = params.add(
            name + "/hidden/bias", np.zeros(self.hidden_width),
        )
        self.output_kernel = params.add(
            name + "/output/kernel", glorot(self.hidden_width, output_width),
        )
        self.output_bias = params.add(
            name + "/output/bias", np.zeros(output_width),
        )

    def count(self) -> int:
        output_width = self.embedding_width * self.prefix_length
        return (
            self.input_width * self.hidden_width + self.hidden_width
            + self.hidden_width * output_width + output_width
        )

    def __call__(self, x, training = False, seed = None):
        """ Map [..., input_width] inputs to [..., prefix_length, E]. """
        x = as_tensor(x)
        if x.shape[-1] != self.input_width:
            raise ShapeError(
                "{} expects input width {}, got {}".format(
                    self.name, self.input_width, x.shape[-1],
                )
            )
        h = tf.tanh(linear(x, self.hidden_kernel, self.hidden_bias))
        h = dropout(h, self.dropout_rate, seed, training)
        y = linear(h, self.output_kernel, self.output_bias)
        return tf.reshape(
            y,
            tf.concat(
                [
                    tf.shape(y)[:-1],
                    [self.prefix_length, self.embedding_width],
                ],
                axis = 0,
            ),
        )
