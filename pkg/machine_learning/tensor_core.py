import logging

import numpy as np
import tensorflow as tf

logger = logging.getLogger(__name__)

FLOAT = tf.float64

# probabilities below this are clamped before taking the log
PROBABILITY_FLOOR = 1e-300


class NumericDomainError(ValueError):
    pass


class GradientCheckError(RuntimeError):
    pass


class ShapeError(ValueError):
    pass


def enable_determinism():
    """ Make every TensorFlow kernel deterministic and single threaded.

    Safe to call more than once; thread settings can only be changed before
    the runtime starts, so a late call only enables op determinism.
    """
    try:
        tf.config.threading.set_inter_op_parallelism_threads(1)
        tf.config.threading.set_intra_op_parallelism_threads(1)
    except RuntimeError:
        pass
    if hasattr(tf.config.experimental, "enable_op_determinism"):
        tf.config.experimental.enable_op_determinism()


def as_tensor(value) -> tf.Tensor:
    return tf.convert_to_tensor(value, dtype = FLOAT)


def check_finite(value, what = "tensor"):
    """ Raise `NumericDomainError` if `value` holds a NaN or infinity.

    In graph mode the check becomes a TensorFlow assertion.
    """
    if tf.executing_eagerly():
        if not np.all(np.isfinite(np.asarray(value))):
            raise NumericDomainError("{} is not finite".format(what))
        return value
    return tf.debugging.assert_all_finite(
        value, "{} is not finite".format(what),
    )


def softmax(logits) -> tf.Tensor:
    """ Softmax along the last axis.

    `tf.nn.softmax` subtracts the row maximum before exponentiating, so
    logits up to magnitude 1e3 stay finite.

    Args:
        logits: Finite logits; normalized along the last axis.

    Returns:
        Probabilities with the shape of `logits`.
    """
    logits = check_finite(as_tensor(logits), "logits")
    return tf.nn.softmax(logits, axis = -1)


def cross_entropy(target_probabilities, floor = PROBABILITY_FLOOR):
    """ Negative log-likelihood summed over the selected target positions.

    Args:
        target_probabilities: Probability the model gave each target token.
        floor: Probabilities below `floor` are clamped to it.

    Returns:
        `(loss, clamped)`: the scalar loss and the number of clamped
            probabilities. A clamp is logged, never turned into infinity.
    """
    probabilities = as_tensor(target_probabilities)
    clamped = tf.reduce_sum(
        tf.cast(probabilities < floor, tf.int64),
    )
    loss = -tf.reduce_sum(tf.math.log(tf.maximum(probabilities, floor)))
    if tf.executing_eagerly() and int(clamped) > 0:
        logger.warning(
            "cross entropy clamped %d target probabilities to %g",
            int(clamped), floor,
        )
    return loss, clamped


def dropout(x, rate: float, seed, training: bool):
    """ Inverted dropout: scales kept units by 1/(1 - rate) while training and
    is the identity otherwise.

    Args:
        x: Input tensor.
        rate: Drop probability in [0, 1).
        seed: Shape [2] int64 seed for the stateless generator.
        training: Dropout is only active when True.
    """
    if not training or rate == 0. or seed is None:
        return x
    if not 0. <= rate < 1.:
        raise ValueError("dropout rate {} not in [0, 1)".format(rate))
    keep = tf.random.stateless_uniform(
        tf.shape(x), seed = seed, dtype = FLOAT,
    ) >= rate
    return tf.where(keep, x / (1. - rate), tf.zeros_like(x))


def check_gradients(
    loss_fn, params, step = 1e-3, samples_per_parameter = 4, rng = None,
    names = None,
) -> float:
    """ Compare reverse-mode gradients against central finite differences.

    Args:
        loss_fn: Zero-argument closure returning a scalar loss tensor.
        params: The `ParamStore` holding the trainable parameters.
        step: Central-difference step.
        samples_per_parameter: Coordinates sampled per parameter tensor;
            tensors with fewer elements are checked exhaustively.
        rng: `Rng` choosing the sampled coordinates.
        names: Restrict the check to these parameter names.

    Returns:
        max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) over the
            sampled coordinates.
    """
    if names is None:
        names = params.trainable_names()
    variables = [params[name] for name in names]

    with tf.GradientTape() as tape:
        loss = loss_fn()
    if loss.shape.rank != 0:
        raise ShapeError("loss must be a scalar, got {}".format(loss.shape))

    gradients = tape.gradient(
        loss, variables,
        unconnected_gradients = tf.UnconnectedGradients.ZERO,
    )

    worst = 0.
    for name, variable, gradient in zip(names, variables, gradients):
        analytic = gradient.numpy()
        if not np.all(np.isfinite(analytic)):
            raise GradientCheckError(
                "non-finite analytic gradient for parameter {}".format(name)
            )

        original = variable.numpy()
        size = original.size
        if rng is None or size <= samples_per_parameter:
            coordinates = np.arange(size)
        else:
            coordinates = rng.stream("gradient_check", name).choice(
                size, size = samples_per_parameter, replace = False,
            )

        for flat_index in coordinates:
            index = np.unravel_index(flat_index, original.shape)

            shifted = original.copy()
            shifted[index] += step
            variable.assign(shifted)
            loss_plus = float(loss_fn())

            shifted[index] = original[index] - step
            variable.assign(shifted)
            loss_minus = float(loss_fn())

            variable.assign(original)

            numeric = (loss_plus - loss_minus) / (2. * step)
            exact = float(analytic[index])
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
            worst = max(worst, error)

    return worst


def linear(x, kernel, bias = None):
    """ Row-vector affine map `x @ kernel + bias` over the last axis of `x`. """
    y = tf.einsum("...i,io->...o", x, kernel)
    if bias is not None:
        y = y + bias
    return y


def fold_seed(seed, index: int):
    """ Independent stateless seed for sub-stream `index`; None stays None. """
    if seed is None:
        return None
    return tf.random.experimental.stateless_fold_in(seed, index)
