"""
Directedness scores and the equal error rate.

Operating points group tied scores: with the distinct scores u_1 < ... < u_m,
point i (0 <= i <= m) accepts exactly the examples scoring at least u_{i+1}
(point m accepts none). Its threshold is the midpoint (u_i + u_{i+1}) / 2,
with u_1 itself at point 0 and the float just above u_m at point m.

    FAR = non-directed examples accepted / non-directed examples
    FRR = directed examples rejected / directed examples

FRR - FAR increases from -1 at point 0 to 1 at point m. The equal error rate
is where the piecewise-linear FAR and FRR curves cross, interpolated between
the last point below and the first point at or above zero.
"""
import json
import logging
from collections import OrderedDict
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from benchmark.features import DIRECTED, LABELS
from machine_learning.tensor_core import softmax

logger = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


@dataclass
class Score:
    example_id: str
    label: str
    p_yes: float
    p_no: float

    @property
    def mass(self) -> float:
        return self.p_yes + self.p_no

    @property
    def normalized(self) -> float:
        """ p_yes / (p_yes + p_no); a diagnostic, not used for ranking. """
        return self.p_yes / self.mass if self.mass > 0. else 0.5

    def to_record(self) -> OrderedDict:
        record = OrderedDict()
        record["id"] = self.example_id
        record["label"] = self.label
        record["p_yes"] = self.p_yes
        record["p_no"] = self.p_no
        record["mass"] = self.mass
        record["normalized"] = self.normalized
        return record


@dataclass
class EvalResult:
    eer: float
    threshold: float
    counts: dict
    det_points: list

    def to_record(self) -> OrderedDict:
        record = OrderedDict()
        record["eer"] = self.eer
        record["threshold"] = self.threshold
        record["counts"] = dict(self.counts)
        return record


def decision_score(
    logits, decision_index: int, yes_id: int, no_id: int, example_id = "",
    label = DIRECTED,
) -> Score:
    """ Score from one example's [S, V] logits at the decision position. """
    logits = np.asarray(logits)
    if not 0 <= decision_index < logits.shape[0]:
        raise EvaluationError(
            "decision position {} outside a context of {}".format(
                decision_index, logits.shape[0],
            )
        )
    probabilities = softmax(logits[decision_index]).numpy()
    return Score(
        example_id, label, float(probabilities[yes_id]),
        float(probabilities[no_id]),
    )


def score_examples(model, examples, pooled_audio = None, batch_size = 256):
    """ Scores of every example; dropout is off and the model is not changed.

    Args:
        model: Trained `DirectednessModel`.
        examples: `MultimodalExample`s.
        pooled_audio: [B, N] pooled frames, needed when the model uses audio.
    """
    examples = list(examples)
    scores = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        audio = None
        if pooled_audio is not None:
            audio = pooled_audio[start:start + batch_size]
        batch = model.encode(chunk, audio)
        probabilities = softmax(model.decision_logits(batch)).numpy()
        for example, row in zip(chunk, probabilities):
            scores.append(Score(
                example.id, example.label, float(row[model.yes_id]),
                float(row[model.no_id]),
            ))
    return scores


def score_example(model, example, pooled_audio = None) -> Score:
    audio = None
    if pooled_audio is not None:
        audio = np.asarray(pooled_audio)[np.newaxis]
    batch = model.encode([example], audio)
    logits = model.logits(batch, training = False)[0]
    return decision_score(
        logits, model.context_length - 1, model.yes_id, model.no_id,
        example.id, example.label,
    )


def _arrays(scores):
    values = np.array([s.p_yes for s in scores], dtype = np.float64)
    directed = np.array([s.label == DIRECTED for s in scores], dtype = bool)
    for s in scores:
        if s.label not in LABELS:
            raise EvaluationError("unknown label {}".format(s.label))
    if directed.all() or not directed.any():
        raise EvaluationError("EER needs examples of both classes")
    return values, directed


def operating_points(scores):
    """ FAR, FRR and threshold of every operating point, points 0 to m. """
    values, directed = _arrays(scores)
    distinct, inverse = np.unique(values, return_inverse = True)
    m = len(distinct)
    directed_per_score = np.bincount(
        inverse, weights = directed.astype(np.float64), minlength = m,
    )
    other_per_score = np.bincount(
        inverse, weights = (~directed).astype(np.float64), minlength = m,
    )
    n_directed = directed_per_score.sum()
    n_other = other_per_score.sum()

    rejected_directed = np.concatenate([[0.], np.cumsum(directed_per_score)])
    rejected_other = np.concatenate([[0.], np.cumsum(other_per_score)])
    frr = rejected_directed / n_directed
    far = (n_other - rejected_other) / n_other

    thresholds = np.empty(m + 1)
    thresholds[0] = distinct[0]
    thresholds[1:m] = (distinct[:-1] + distinct[1:]) / 2.
    thresholds[m] = np.nextafter(distinct[-1], np.inf)
    return far, frr, thresholds


def _crossing(far, frr, thresholds):
    difference = frr - far
    i = int(np.flatnonzero(difference >= 0.)[0])
    if difference[i] == 0.:
        return float(frr[i]), float(thresholds[i])
    t = -difference[i - 1] / (difference[i] - difference[i - 1])
    eer = far[i - 1] + t * (far[i] - far[i - 1])
    threshold = thresholds[i - 1] + t * (thresholds[i] - thresholds[i - 1])
    return float(eer), float(threshold)


def det_curve(scores) -> list:
    """ (FAR, FRR) pairs from (0, 1) to (1, 0), FAR ascending. """
    far, frr, _ = operating_points(scores)
    return [(float(a), float(r)) for a, r in zip(far[::-1], frr[::-1])]


def compute_eer(scores) -> EvalResult:
    far, frr, thresholds = operating_points(scores)
    eer, threshold = _crossing(far, frr, thresholds)
    directed = sum(s.label == DIRECTED for s in scores)
    return EvalResult(
        eer = eer,
        threshold = threshold,
        counts = {"directed": directed, "non_directed": len(scores) - directed},
        det_points = [
            (float(a), float(r)) for a, r in zip(far[::-1], frr[::-1])
        ],
    )


def exhaustive_eer(scores) -> float:
    """ Reference EER by direct counting, independent of `operating_points`.

    Every distinct score, and positive infinity, is tried as an acceptance
    threshold and FAR and FRR are counted against all scores at once. The
    crossing is solved in exact rational arithmetic on the first pair of
    neighbouring thresholds where FRR stops being below FAR.
    """
    values, directed = _arrays(scores)
    candidates = np.append(np.unique(values), np.inf)
    accepted = values[np.newaxis, :] >= candidates[:, np.newaxis]
    false_accepts = np.logical_and(accepted, ~directed).sum(axis = 1)
    false_rejects = np.logical_and(~accepted, directed).sum(axis = 1)
    n_directed = int(directed.sum())
    n_other = len(values) - n_directed

    previous = None
    for accepts, rejects in zip(false_accepts.tolist(), false_rejects.tolist()):
        far = Fraction(accepts, n_other)
        frr = Fraction(rejects, n_directed)
        if frr >= far:
            if frr == far or previous is None:
                return float(frr)
            far_0, frr_0 = previous
            # both rates are linear in s between the two thresholds
            s = (far_0 - frr_0) / ((frr - frr_0) - (far - far_0))
            return float(far_0 + s * (far - far_0))
        previous = far, frr
    raise EvaluationError("FRR never reaches FAR")


def write_scores(scores, path, config_hash = None):
    """ One JSON object per example; `config_hash` is added to each when
    given.
    """
    with open(path, "w", encoding = "utf-8", newline = "\n") as f:
        for score in scores:
            record = score.to_record()
            if config_hash is not None:
                record["config_hash"] = config_hash
            f.write(json.dumps(record))
            f.write("\n")


def read_scores(path) -> list:
    scores = []
    with open(path, "r", encoding = "utf-8") as f:
        for number, line in enumerate(f, start = 1):
            try:
                record = json.loads(line)
                scores.append(Score(
                    record["id"], record["label"], float(record["p_yes"]),
                    float(record["p_no"]),
                ))
            except (ValueError, KeyError) as e:
                raise EvaluationError(
                    "{}: line {}: {}".format(path, number, e)
                ) from e
    return scores


def write_det(points, path, config_hash = None):
    """ Two columns, "FAR FRR", one operating point per line, after a
    "# config_hash" comment line when a hash is given.
    """
    with open(path, "w", encoding = "utf-8", newline = "\n") as f:
        if config_hash is not None:
            f.write("# config_hash {}\n".format(config_hash))
        for far, frr in points:
            f.write("{!r} {!r}\n".format(far, frr))


def mass_fraction(scores, minimum = 0.99) -> float:
    """ Share of examples whose yes and no probabilities sum to `minimum` or
    more.
    """
    if len(scores) == 0:
        return 0.
    return sum(s.mass >= minimum for s in scores) / len(scores)


def evaluate(model, examples, pooled_audio = None):
    """ Scores and EER result of `model` on `examples`. """
    scores = score_examples(model, examples, pooled_audio)
    return scores, compute_eer(scores)
