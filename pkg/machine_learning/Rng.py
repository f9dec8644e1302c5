import hashlib

import numpy as np
import tensorflow as tf


class Rng:
    """ Seeded source of named, independent random streams.

    A stream is derived from the hash of (seed, purpose, index), so the draws
    of one example never depend on how many other examples were generated
    before it, and are identical on every platform.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def stream_key(self, purpose: str, index = 0) -> list:
        digest = hashlib.sha256(
            "{}|{}|{}".format(self.seed, purpose, index).encode("utf-8")
        ).digest()
        return [
            int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)
        ]

    def stream(self, purpose: str, index = 0) -> np.random.Generator:
        return np.random.Generator(
            np.random.PCG64(
                np.random.SeedSequence(self.stream_key(purpose, index))
            )
        )

    def tf_seed(self, purpose: str, index = 0) -> tf.Tensor:
        """ Shape [2] int64 seed for the TensorFlow stateless generators. """
        key = self.stream_key(purpose, index)
        return tf.constant([key[0], key[1]], dtype = tf.int64)
