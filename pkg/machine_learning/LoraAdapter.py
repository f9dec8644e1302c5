from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np
import tensorflow as tf

from machine_learning.ParamStore import ParamStore
from machine_learning.Rng import Rng
from machine_learning.tensor_core import ShapeError, as_tensor, dropout, linear

TARGETS = ("q", "v", "dense", "ffn_in", "ffn_out")
DEFAULT_TARGETS = ("q", "v", "dense")
INIT_STDDEV = 0.02


class LoraConfigurationError(ValueError):
    pass


@dataclass
class LoraConfig:
    targets: tuple = DEFAULT_TARGETS
    rank: int = 8
    alpha: float = 32.
    dropout: float = 0.10
    enabled: bool = True
    # optional per-target rank overriding `rank`
    ranks: dict = field(default_factory = dict)

    def __post_init__(self):
        self.targets = tuple(self.targets)
        for target in self.targets:
            if target not in TARGETS:
                raise LoraConfigurationError(
                    "unknown adapter target {}; expected one of {}".format(
                        target, ", ".join(TARGETS),
                    )
                )
        for target in self.ranks:
            if target not in self.targets:
                raise LoraConfigurationError(
                    "rank given for unused target {}".format(target)
                )
        if self.enabled and self.targets:
            for target in self.targets:
                if self.rank_for(target) < 1:
                    raise LoraConfigurationError(
                        "rank of {} must be at least 1".format(target)
                    )
        if not self.alpha > 0.:
            raise LoraConfigurationError("alpha must be positive")
        if not 0. <= self.dropout < 1.:
            raise LoraConfigurationError("dropout must lie in [0, 1)")

    def rank_for(self, target: str) -> int:
        return int(self.ranks.get(target, self.rank))

    @property
    def active_targets(self) -> tuple:
        return self.targets if self.enabled else ()

    def to_record(self) -> dict:
        record = asdict(self)
        record["targets"] = list(self.targets)
        return record

    @classmethod
    def from_record(cls, record: dict):
        return cls(**record)


class LoraAdapter:
    """ Rank-r additive update of one dense projection.

    With row vectors `x` and a base kernel of shape [d_in, d_out], the adapted
    projection is `x @ kernel + (alpha / r) * (x @ A^T) @ B^T` where A is
    r x d_in and B is d_out x r.
    """

    def __init__(
        self, layer: int, target: str, A, B, alpha: float,
        dropout_rate = 0., index = 0,
    ):
        self.layer = layer
        self.target = target
        self.A = A
        self.B = B
        self.alpha = float(alpha)
        self.dropout_rate = dropout_rate
        self.index = index
        if A.shape[0] != B.shape[1]:
            raise ShapeError(
                "adapter A has rank {}, B has rank {}".format(
                    A.shape[0], B.shape[1],
                )
            )

    @property
    def rank(self) -> int:
        return int(self.A.shape[0])

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def count(self) -> int:
        d_out, rank = self.B.shape
        return int(rank * (self.A.shape[1] + d_out))

    def delta(self, x, training = False, seed = None):
        if x.shape[-1] is not None and x.shape[-1] != self.A.shape[1]:
            raise ShapeError(
                "adapter {} expects width {}, got {}".format(
                    "lora/{}/{}".format(self.layer, self.target),
                    self.A.shape[1], x.shape[-1],
                )
            )
        x = dropout(x, self.dropout_rate, seed, training)
        low = tf.einsum("...i,ri->...r", x, self.A)
        return self.scale * tf.einsum("...r,or->...o", low, self.B)


def adapter_name(layer: int, target: str, matrix: str) -> str:
    return "lora/{}/{}/{}".format(layer, target, matrix)


def adapter_forward(
    x, kernel, adapter: LoraAdapter = None, bias = None, training = False,
    seed = None,
):
    """ Base projection plus the adapter's low-rank update.

    Args:
        x: [..., d_in] inputs.
        kernel: [d_in, d_out] frozen base weights.
        adapter: Optional adapter; without one this is the base projection.
        bias: Optional [d_out] base bias.
        training: Enables dropout on the adapter branch input.
        seed: Dropout seed.
    """
    x = as_tensor(x)
    kernel = as_tensor(kernel)
    if x.shape[-1] != kernel.shape[0]:
        raise ShapeError(
            "input width {} does not match kernel {}".format(
                x.shape[-1], kernel.shape,
            )
        )
    y = linear(x, kernel, bias)
    if adapter is None:
        return y
    if adapter.B.shape[0] != kernel.shape[1]:
        raise ShapeError(
            "adapter output width {} does not match kernel {}".format(
                adapter.B.shape[0], kernel.shape,
            )
        )
    return y + adapter.delta(x, training = training, seed = seed)


def attach_adapters(
    model, config: LoraConfig, params: ParamStore, rng: Rng,
) -> OrderedDict:
    """ One adapter per (layer, target), registered trainable in `params`.

    Args:
        model: Frozen `BaseLM`.
        config: Adapter targets, ranks and scale.
        params: Store receiving the adapter matrices.
        rng: Source of the A initializations.

    Returns:
        Adapters keyed by (layer, target), in layer then target order.
    """
    if not model.frozen:
        raise LoraConfigurationError("adapters attach to a frozen model only")
    adapters = OrderedDict()
    for layer in range(model.config.layers):
        for target in config.active_targets:
            d_in, d_out = model.projection_shape(target)
            rank = config.rank_for(target)
            stream = rng.stream("lora_init", "{}/{}".format(layer, target))
            A = params.add(
                adapter_name(layer, target, "A"),
                stream.normal(0., INIT_STDDEV, size = (rank, d_in)),
            )
            B = params.add(
                adapter_name(layer, target, "B"),
                np.zeros((d_out, rank)),
            )
            adapters[(layer, target)] = LoraAdapter(
                layer, target, A, B, config.alpha,
                dropout_rate = config.dropout, index = len(adapters),
            )
    return adapters


def count_trainable(adapters, mapping_nets = ()) -> dict:
    """ Closed-form parameter count of the adapters and mapping networks.

    Returns:
        Dictionary with the adapter total, one entry per mapping network, and
            the overall total.
    """
    report = OrderedDict()
    report["lora"] = sum(adapter.count() for adapter in adapters.values())
    for net in mapping_nets:
        report[net.name] = net.count()
    report["total"] = sum(report.values())
    return report
