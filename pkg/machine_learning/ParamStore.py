import hashlib
from collections import OrderedDict

import numpy as np
import tensorflow as tf

from machine_learning.tensor_core import FLOAT, ShapeError


class ParamStore:
    """ Named parameter tensors with a trainable flag each, and the Adam
    state (first and second moments, step counter) of the trainable ones.

    Parameters flagged non-trainable never receive an update.
    """

    def __init__(self):
        self.variables = OrderedDict()
        self.trainable = OrderedDict()
        self.m = OrderedDict()
        self.v = OrderedDict()
        self.iterations = tf.Variable(
            0, dtype = tf.int64, trainable = False, name = "iterations",
        )

    def __getitem__(self, name: str) -> tf.Variable:
        return self.variables[name]

    def __contains__(self, name: str) -> bool:
        return name in self.variables

    def __len__(self):
        return len(self.variables)

    def add(self, name: str, initial_value, trainable = True) -> tf.Variable:
        if name in self.variables:
            raise KeyError("parameter {} already exists".format(name))
        variable = tf.Variable(
            np.asarray(initial_value, dtype = np.float64),
            dtype = FLOAT, trainable = trainable, name = name.replace("/", "."),
        )
        self.variables[name] = variable
        self.trainable[name] = trainable
        if trainable:
            self._add_slots(name)
        return variable

    def _add_slots(self, name):
        shape = self.variables[name].shape
        self.m[name] = tf.Variable(tf.zeros(shape, dtype = FLOAT))
        self.v[name] = tf.Variable(tf.zeros(shape, dtype = FLOAT))

    def names(self) -> list:
        return list(self.variables.keys())

    def trainable_names(self) -> list:
        return [name for name, flag in self.trainable.items() if flag]

    def trainable_variables(self) -> list:
        return [self.variables[name] for name in self.trainable_names()]

    def freeze(self):
        """ Mark every parameter non-trainable and drop the Adam slots. """
        for name in self.variables:
            self.trainable[name] = False
        self.m.clear()
        self.v.clear()

    @property
    def step(self) -> int:
        return int(self.iterations.numpy())

    def count(self, trainable_only = True) -> int:
        names = self.trainable_names() if trainable_only else self.names()
        return int(sum(
            np.prod(self.variables[name].shape.as_list(), dtype = np.int64)
            for name in names
        ))

    def adam_step(
        self, gradients, learning_rate = 1e-3, beta_1 = 0.9, beta_2 = 0.999,
        epsilon = 1e-8,
    ):
        """ One bias-corrected Adam update of every trainable parameter.

        Args:
            gradients: One gradient per entry of `trainable_names()`, in that
                order, or a dictionary keyed by parameter name.
        """
        names = self.trainable_names()
        if isinstance(gradients, dict):
            gradients = [gradients[name] for name in names]
        if len(gradients) != len(names):
            raise ShapeError(
                "{} gradients for {} trainable parameters".format(
                    len(gradients), len(names),
                )
            )

        self.iterations.assign_add(1)
        t = tf.cast(self.iterations, FLOAT)
        correction_1 = 1. - tf.pow(tf.constant(beta_1, FLOAT), t)
        correction_2 = 1. - tf.pow(tf.constant(beta_2, FLOAT), t)

        for name, gradient in zip(names, gradients):
            variable = self.variables[name]
            if gradient is None:
                gradient = tf.zeros_like(variable)
            gradient = tf.convert_to_tensor(gradient, dtype = FLOAT)
            if not gradient.shape.is_compatible_with(variable.shape):
                raise ShapeError(
                    "gradient of shape {} for parameter {} of shape {}".format(
                        gradient.shape, name, variable.shape,
                    )
                )
            m = self.m[name]
            v = self.v[name]
            m.assign(beta_1 * m + (1. - beta_1) * gradient)
            v.assign(beta_2 * v + (1. - beta_2) * tf.square(gradient))
            m_hat = m / correction_1
            v_hat = v / correction_2
            variable.assign_sub(
                learning_rate * m_hat / (tf.sqrt(v_hat) + epsilon)
            )

    def snapshot(self) -> OrderedDict:
        return OrderedDict(
            (name, variable.numpy()) for name, variable in self.variables.items()
        )

    def load(self, tensors: dict):
        for name, value in tensors.items():
            if name not in self.variables:
                raise KeyError("unknown parameter {}".format(name))
            if tuple(self.variables[name].shape) != np.shape(value):
                raise ShapeError(
                    "parameter {} has shape {}, checkpoint holds {}".format(
                        name, tuple(self.variables[name].shape),
                        np.shape(value),
                    )
                )
            self.variables[name].assign(value)

    def digest(self) -> str:
        """ SHA-256 over every parameter's name, shape and bytes. """
        sha = hashlib.sha256()
        for name, variable in self.variables.items():
            value = np.ascontiguousarray(variable.numpy(), dtype = "<f8")
            sha.update(name.encode("utf-8"))
            sha.update(str(value.shape).encode("utf-8"))
            sha.update(value.tobytes())
        return sha.hexdigest()
