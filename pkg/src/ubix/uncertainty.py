"""Instance uncertainty from deep-ensemble probabilities.

Every function accepts member probabilities shaped ``(..., M, C)`` so that a
whole bag (or a whole dataset of instances) is scored in one call.
"""

from __future__ import annotations

from enum import Enum

import numpy as np
from scipy.special import xlogy

from ubix.core import ValidationError, softmax


class UncertaintyMeasure(str, Enum):
    MAX_CLASS_PROBABILITY = "max-class-probability"
    MEAN_CLASS_VARIANCE = "mean-class-variance"
    ORDINAL_VARIANCE = "ordinal-variance"
    ENTROPY = "entropy"
    ORDINAL_ENTROPY = "ordinal-entropy"

    @classmethod
    def parse(cls, value) -> "UncertaintyMeasure":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower().replace("_", "-"))
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ValidationError(f"unknown uncertainty measure {value!r}; expected one of {names}")

    @property
    def is_ordinal(self) -> bool:
        return self in (UncertaintyMeasure.ORDINAL_VARIANCE, UncertaintyMeasure.ORDINAL_ENTROPY)


def member_probabilities(logits) -> np.ndarray:
    """Softmax of each member's logits; ``(..., M, C)`` in, same shape out."""
    return softmax(logits, axis=-1)


def _entropy(mu: np.ndarray) -> np.ndarray:
    return -xlogy(mu, mu).sum(axis=-1)


def _ordinal_entropy(mu: np.ndarray) -> np.ndarray:
    # Binary entropy of every cumulative split {1..c} | {c+1..C}, c = 1..C-1.
    lower = np.cumsum(mu, axis=-1)[..., :-1]
    upper = np.cumsum(mu[..., ::-1], axis=-1)[..., ::-1][..., 1:]
    return -(xlogy(lower, lower) + xlogy(upper, upper)).sum(axis=-1)


def raw_score(measure, probs) -> np.ndarray:
    """Literal ensemble score from member probabilities ``(..., M, C)``.

    For the max-class-probability measure this is the confidence of the
    ensemble mean, so larger means *less* uncertain; :func:`uncertainty`
    flips it.
    """
    measure = UncertaintyMeasure.parse(measure)
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim < 2:
        raise ValidationError("member probabilities must have shape (..., M, C)")
    mu = p.mean(axis=-2)

    if measure is UncertaintyMeasure.MAX_CLASS_PROBABILITY:
        return mu.max(axis=-1)
    if measure is UncertaintyMeasure.MEAN_CLASS_VARIANCE:
        return ((p - mu[..., None, :]) ** 2).mean(axis=-2).mean(axis=-1)
    if measure is UncertaintyMeasure.ORDINAL_VARIANCE:
        stages = np.arange(p.shape[-1], dtype=np.float64)
        q = p @ stages
        return ((q - q.mean(axis=-1, keepdims=True)) ** 2).mean(axis=-1)
    if measure is UncertaintyMeasure.ENTROPY:
        return _entropy(mu)
    return _ordinal_entropy(mu)


def uncertainty_from_probs(measure, probs) -> np.ndarray:
    measure = UncertaintyMeasure.parse(measure)
    score = raw_score(measure, probs)
    if measure is UncertaintyMeasure.MAX_CLASS_PROBABILITY:
        score = 1.0 - score
    # Round-off can leave tiny negatives (e.g. 1 - 1.0000000000000002).
    return np.maximum(score, 0.0)


def uncertainty(measure, logits) -> np.ndarray:
    """Oriented uncertainty (larger = more uncertain) from logits ``(..., M, C)``.

    A single ``(M, C)`` instance gives a 0-d array; a bag ``(I, M, C)`` gives
    one score per instance.
    """
    return uncertainty_from_probs(measure, member_probabilities(logits))


def score_range(measure, n_classes: int) -> tuple[float, float]:
    """Closed interval every oriented score lies in."""
    measure = UncertaintyMeasure.parse(measure)
    c = n_classes
    upper = {
        UncertaintyMeasure.MAX_CLASS_PROBABILITY: 1.0 - 1.0 / c,
        UncertaintyMeasure.MEAN_CLASS_VARIANCE: 0.25,
        UncertaintyMeasure.ORDINAL_VARIANCE: (c - 1) ** 2 / 4.0,
        UncertaintyMeasure.ENTROPY: float(np.log(c)),
        UncertaintyMeasure.ORDINAL_ENTROPY: (c - 1) * float(np.log(2.0)),
    }[measure]
    return 0.0, upper
