"""Domain types, probability math and max-pooling over bag instances.

Logits are held as numpy arrays. An instance is an ``(M, C)`` matrix
(ensemble members by classes); a bag stacks ``I`` of them into ``(I, M, C)``.
Class indices are 1-based everywhere outside of array indexing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class ValidationError(ValueError):
    """Input violates a documented precondition."""


def _as_finite(values, name: str = "logits") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contain non-finite entries")
    return arr


@dataclass
class BagLogits:
    """Instance logits of one bag, shape ``(I, M, C)``."""

    bag_id: str
    logits: np.ndarray
    label: Optional[int] = None

    def __post_init__(self) -> None:
        arr = _as_finite(self.logits)
        if arr.ndim != 3:
            raise ValidationError(
                f"bag {self.bag_id!r}: logits must have shape (I, M, C), got {arr.shape}"
            )
        n_inst, n_models, n_classes = arr.shape
        if n_inst < 1:
            raise ValidationError(f"bag {self.bag_id!r} has no instances")
        if n_models < 1 or n_classes < 2:
            raise ValidationError(
                f"bag {self.bag_id!r}: need M >= 1 and C >= 2, got M={n_models}, C={n_classes}"
            )
        if self.label is not None:
            self.label = int(self.label)
            if not 1 <= self.label <= n_classes:
                raise ValidationError(
                    f"bag {self.bag_id!r}: label {self.label} outside 1..{n_classes}"
                )
        self.logits = arr

    @property
    def n_instances(self) -> int:
        return self.logits.shape[0]

    @property
    def n_models(self) -> int:
        return self.logits.shape[1]

    @property
    def n_classes(self) -> int:
        return self.logits.shape[2]

    def subset(self, keep: Sequence[int]) -> "BagLogits":
        return BagLogits(self.bag_id, self.logits[np.asarray(keep, dtype=int)], self.label)


@dataclass
class BagPrediction:
    bag_id: str
    probs: np.ndarray
    predicted: int
    instance_uncertainties: Optional[np.ndarray] = None
    instance_post_logits: Optional[np.ndarray] = field(default=None, repr=False)

    def to_record(self) -> dict:
        rec = {
            "bag_id": self.bag_id,
            "probs": [float(p) for p in self.probs],
            "predicted": int(self.predicted),
        }
        if self.instance_uncertainties is not None:
            rec["instance_uncertainties"] = [float(u) for u in self.instance_uncertainties]
        return rec


def softmax(logits, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis``.

    >>> softmax([1.0, 0.0]).round(4)
    array([0.7311, 0.2689])
    """
    arr = _as_finite(logits)
    shifted = arr - arr.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def instance_probability(inst) -> np.ndarray:
    """Mean over ensemble members of the per-member softmax of an ``(M, C)`` matrix."""
    arr = _as_finite(inst)
    if arr.ndim != 2:
        raise ValidationError(f"instance logits must be (M, C), got shape {arr.shape}")
    return softmax(arr, axis=-1).mean(axis=0)


def mil_pool(bag) -> np.ndarray:
    """Element-wise maximum over instances; returns the pooled ``(M, C)`` logits."""
    arr = bag.logits if isinstance(bag, BagLogits) else _as_finite(bag)
    if arr.ndim != 3:
        raise ValidationError(f"bag logits must be (I, M, C), got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValidationError("cannot pool an empty bag")
    return arr.max(axis=0)


def bag_probability(pooled) -> np.ndarray:
    # Softmax per member first, then the member average.
    return instance_probability(pooled)


def bag_predict(probs) -> int:
    """1-based argmax; ``np.argmax`` already returns the lowest index on ties."""
    return int(np.argmax(np.asarray(probs))) + 1
