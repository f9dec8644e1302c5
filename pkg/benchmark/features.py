"""
Decoder signals, their unit-interval scaling, and the synthetic audio
representation providers.

Every synthetic quantity is drawn from a named stream of `Rng(seed)` keyed by
the example id, so any example can be regenerated on its own.

Audio frames of an utterance with class sign s (+1 directed, -1 otherwise)
and T frames are

    h_t = s * mu * u + sum_k g_k * w_k + sqrt(T) * e_t,   e_t ~ N(0, I)

with u and w_k orthonormal directions fixed by (seed, provider) and
utterance-level nuisance gains g_k ~ N(0, nuisance_scale^2). The time average
is s * mu * u + nuisance + N(0, I) whatever T is, so the Bayes error of the
pooled features is Phi(-mu).

Decoder signals come from four independent latents z_k = s * delta + N(0, 1)
mapped through monotone transforms, giving a Bayes error of
Phi(-2 * delta) for the whole channel.
"""
import functools
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm

from machine_learning.Rng import Rng

logger = logging.getLogger(__name__)

DIRECTED = "directed"
NON_DIRECTED = "non_directed"
LABELS = (DIRECTED, NON_DIRECTED)

SIGNAL_FIELDS = (
    "graph_cost_avg", "acoustic_cost_avg", "confidence_avg", "alt_words_avg",
)
# per-latent class offset; the channel's Bayes error is Phi(-2 * 0.23385) = 32%
SIGNAL_SEPARATION = 0.23385

EXTERNAL = "external"

# mean and standard deviation of utterance durations in seconds
DURATION_STATS = {
    ("train", DIRECTED): (5.22, 6.97),
    ("train", NON_DIRECTED): (6.04, 5.33),
    ("eval", DIRECTED): (3.01, 1.89),
    ("eval", NON_DIRECTED): (3.66, 3.67),
}


class ScalerError(ValueError):
    pass


class ProviderError(ValueError):
    pass


def label_sign(label: str) -> float:
    if label == DIRECTED:
        return 1.
    if label == NON_DIRECTED:
        return -1.
    raise ValueError("unknown label {}".format(label))


@dataclass
class DecoderSignals:
    graph_cost_avg: float
    acoustic_cost_avg: float
    confidence_avg: float
    alt_words_avg: float

    def __post_init__(self):
        values = self.as_vector()
        if not np.all(np.isfinite(values)):
            raise ValueError("decoder signals must be finite")
        if self.graph_cost_avg < 0. or self.acoustic_cost_avg < 0.:
            raise ValueError("decoder costs must be non-negative")
        if not 0. <= self.confidence_avg <= 1.:
            raise ValueError("confidence must lie in [0, 1]")
        if self.alt_words_avg < 1.:
            raise ValueError("alternatives per word must be at least 1")

    def as_vector(self) -> np.ndarray:
        return np.array(
            [getattr(self, name) for name in SIGNAL_FIELDS], dtype = np.float64,
        )

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, record: dict):
        return cls(**{name: float(record[name]) for name in SIGNAL_FIELDS})


def _sigmoid(x):
    return 1. / (1. + np.exp(-x))


def latents_to_signals(z) -> DecoderSignals:
    """ Monotone transforms: higher z means lower costs, higher confidence
    and fewer alternatives, all typical of directed speech.
    """
    return DecoderSignals(
        graph_cost_avg = float(np.exp(1.0 - 0.35 * z[0])),
        acoustic_cost_avg = float(np.exp(0.5 - 0.30 * z[1])),
        confidence_avg = float(_sigmoid(1.2 + 0.8 * z[2])),
        alt_words_avg = float(1. + np.exp(-0.5 - 0.6 * z[3])),
    )


def signals_to_latents(signals: DecoderSignals) -> np.ndarray:
    return np.array([
        (1.0 - np.log(signals.graph_cost_avg)) / 0.35,
        (0.5 - np.log(signals.acoustic_cost_avg)) / 0.30,
        (np.log(signals.confidence_avg / (1. - signals.confidence_avg))
         - 1.2) / 0.8,
        (-0.5 - np.log(signals.alt_words_avg - 1.)) / 0.6,
    ])


def synth_signals(example_id: str, label: str, seed: int) -> DecoderSignals:
    stream = Rng(seed).stream("signals", example_id)
    z = label_sign(label) * SIGNAL_SEPARATION + stream.standard_normal(4)
    return latents_to_signals(z)


def signals_bayes_error() -> float:
    return float(norm.cdf(-SIGNAL_SEPARATION * 2.))


def estimate_signals_bayes_error(n = 20000, seed = 0) -> float:
    """ Monte-Carlo error of the likelihood-ratio rule on generated signals,
    equal priors.
    """
    errors = 0
    for i in range(n):
        label = LABELS[i % 2]
        z = signals_to_latents(synth_signals("mc-{}".format(i), label, seed))
        decided = DIRECTED if z.sum() > 0. else NON_DIRECTED
        errors += decided != label
    return errors / n


@dataclass
class ScalerStats:
    minimum: list
    maximum: list

    @property
    def zero_range(self) -> list:
        return [lo == hi for lo, hi in zip(self.minimum, self.maximum)]

    def to_record(self) -> dict:
        return {
            "minimum": [float(v) for v in self.minimum],
            "maximum": [float(v) for v in self.maximum],
        }

    @classmethod
    def from_record(cls, record: dict):
        return cls(list(record["minimum"]), list(record["maximum"]))


def fit_scaler(signals) -> ScalerStats:
    signals = list(signals)
    if len(signals) == 0:
        raise ScalerError("cannot fit a scaler on no examples")
    values = np.stack([s.as_vector() for s in signals])
    return ScalerStats(
        minimum = values.min(axis = 0).tolist(),
        maximum = values.max(axis = 0).tolist(),
    )


def apply_scaler(signals, stats: ScalerStats) -> np.ndarray:
    """ Map decoder signals into [0, 1] per dimension.

    Values outside the fitted range are clamped; constant dimensions map to 0.

    Args:
        signals: A `DecoderSignals` or a [..., 4] array of raw values.
    """
    if isinstance(signals, DecoderSignals):
        signals = signals.as_vector()
    values = np.asarray(signals, dtype = np.float64)
    minimum = np.asarray(stats.minimum, dtype = np.float64)
    maximum = np.asarray(stats.maximum, dtype = np.float64)
    span = maximum - minimum
    degenerate = span == 0.
    scaled = (values - minimum) / np.where(degenerate, 1., span)
    scaled = np.clip(scaled, 0., 1.)
    return np.where(degenerate, 0., scaled)


@dataclass(frozen = True)
class ProviderSpec:
    tag: str
    width: int
    # Bayes error of the pooled features; the class offset follows from it
    bayes_error: float
    nuisance_dims: int
    nuisance_scale: float
    frame_rate: float = 2.
    max_frames: int = 32

    @property
    def separation(self) -> float:
        return float(-norm.ppf(self.bayes_error))

    def to_record(self) -> dict:
        return asdict(self)


PROVIDERS = {
    spec.tag: spec for spec in [
        ProviderSpec("specialized-256", 256, 0.05, 8, 1.),
        ProviderSpec("generic-384", 384, 0.125, 32, 2.),
        ProviderSpec("generic-1024", 1024, 0.08, 64, 2.),
        ProviderSpec("generic-1280", 1280, 0.07, 80, 2.),
    ]
}


def provider_spec(tag: str) -> ProviderSpec:
    if tag not in PROVIDERS:
        raise ProviderError(
            "unknown audio provider {}; expected one of {}".format(
                tag, ", ".join(sorted(PROVIDERS)),
            )
        )
    return PROVIDERS[tag]


@functools.lru_cache(maxsize = 16)
def provider_basis(tag: str, seed: int) -> np.ndarray:
    """ Orthonormal [1 + nuisance_dims, N] rows: the class direction, then
    the nuisance directions.
    """
    spec = provider_spec(tag)
    stream = Rng(seed).stream("provider_basis", tag)
    gaussian = stream.standard_normal((spec.width, 1 + spec.nuisance_dims))
    q, r = np.linalg.qr(gaussian)
    # fix the sign ambiguity of the factorization
    q = q * np.sign(np.diag(r))[np.newaxis]
    basis = q.T.copy()
    basis.setflags(write = False)
    return basis


def draw_duration(example_id: str, label: str, split: str, seed: int) -> float:
    """ Log-normal duration matching the mean and spread of the split. """
    mean, std = DURATION_STATS[(split, label)]
    sigma2 = np.log(1. + (std / mean) ** 2)
    mu = np.log(mean) - sigma2 / 2.
    stream = Rng(seed).stream("duration", example_id)
    return float(np.exp(mu + np.sqrt(sigma2) * stream.standard_normal()))


def frame_count(duration: float, spec: ProviderSpec) -> int:
    return int(np.clip(round(duration * spec.frame_rate), 1, spec.max_frames))


class AudioFrames:
    def __init__(self, frames, provider: str):
        frames = np.asarray(frames, dtype = np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ValueError("audio frames must be a T x N matrix with T >= 1")
        spec = PROVIDERS.get(provider)
        if spec is not None and frames.shape[1] != spec.width:
            raise ProviderError(
                "{} frames must have width {}".format(provider, spec.width)
            )
        self.frames = frames
        self.provider = provider

    @property
    def shape(self):
        return self.frames.shape


def synth_audio(
    example_id: str, label: str, spec: ProviderSpec, seed: int,
    split = "train",
) -> AudioFrames:
    basis = provider_basis(spec.tag, seed)
    duration = draw_duration(example_id, label, split, seed)
    T = frame_count(duration, spec)
    stream = Rng(seed).stream("audio/" + spec.tag, example_id)
    gains = stream.normal(0., spec.nuisance_scale, size = spec.nuisance_dims)
    center = label_sign(label) * spec.separation * basis[0] + gains @ basis[1:]
    noise = stream.standard_normal((T, spec.width)) * np.sqrt(T)
    return AudioFrames(center[np.newaxis] + noise, spec.tag)


def provider_bayes_error(spec: ProviderSpec) -> float:
    return float(norm.cdf(-spec.separation))


def estimate_provider_bayes_error(
    spec: ProviderSpec, n = 2000, seed = 0, split = "eval",
) -> float:
    """ Monte-Carlo error of the optimal rule, the sign of the pooled
    features along the class direction, on generated utterances.
    """
    direction = provider_basis(spec.tag, seed)[0]
    errors = 0
    for i in range(n):
        label = LABELS[i % 2]
        frames = synth_audio("mc-{}".format(i), label, spec, seed, split).frames
        pooled = frames.mean(axis = 0)
        decided = DIRECTED if pooled @ direction > 0. else NON_DIRECTED
        errors += decided != label
    return errors / n
