"""Uncertainty-gated suppression of instance logits before max-pooling.

Soft mode squashes each instance's logits toward a per-class floor with a
sigmoid gate in the instance uncertainty. Hard mode drops instances whose
uncertainty reaches a threshold. Both are calibrated on a labeled validation
split by exhaustive grid search on quadratic weighted kappa.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from ubix.core import (
    BagLogits,
    BagPrediction,
    ValidationError,
    bag_predict,
    bag_probability,
    mil_pool,
    softmax,
)
from ubix.metrics import UndefinedMetricError, quadratic_weighted_kappa
from ubix.uncertainty import UncertaintyMeasure, uncertainty

DELTA_GRID = (1.0, 5.0, 10.0, 50.0, 100.0, 500.0, 1000.0, 5000.0, 10000.0)
GAMMA_GRID = tuple(round(-0.5 + 0.05 * k, 2) for k in range(41))
TAU_PERCENTILES = tuple(0.5 * k for k in range(201))

# Uncertainty reported by plain MIL inference, which has no measure of its own.
PLAIN_REPORT_MEASURE = UncertaintyMeasure.ORDINAL_ENTROPY


class InferenceMode(str, Enum):
    PLAIN_MIL = "mil"
    SOFT_UBIX = "soft"
    HARD_UBIX = "hard"

    @classmethod
    def parse(cls, value) -> "InferenceMode":
        if isinstance(value, cls):
            return value
        aliases = {"plain": "mil", "ubix": "soft", "ubix-hard": "hard", "pruned": "hard"}
        key = str(value).strip().lower()
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValidationError(f"unknown inference mode {value!r}; expected mil, soft or hard")


@dataclass
class UbixParams:
    """Calibrated gate settings.

    ``delta`` is ``math.inf`` for hard exclusion. Fields a mode does not use
    (``tau`` in soft mode, ``gamma`` in hard mode, both in plain MIL) are None.
    """

    measure: UncertaintyMeasure
    delta: Optional[float]
    gamma: Optional[float]
    tau: Optional[float]
    chi: np.ndarray
    u_min: float
    u_max: float
    n_classes: int
    n_models: int

    def __post_init__(self) -> None:
        self.measure = UncertaintyMeasure.parse(self.measure)
        self.chi = np.asarray(self.chi, dtype=np.float64)
        if self.chi.shape != (self.n_classes,):
            raise ValidationError(f"chi must have {self.n_classes} entries, got {self.chi.shape}")
        if not np.all(np.isfinite(self.chi)):
            raise ValidationError("chi must be finite")
        if self.u_min > self.u_max:
            raise ValidationError(f"u_min {self.u_min} exceeds u_max {self.u_max}")
        if self.delta is not None and not self.delta > 0:
            raise ValidationError(f"delta must be positive, got {self.delta}")

    @property
    def gamma_hat(self) -> float:
        if self.gamma is None:
            raise ValidationError("params carry no gamma (not calibrated for soft mode)")
        return gamma_hat(self.gamma, self.u_min, self.u_max)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["measure"] = self.measure.value
        d["chi"] = [float(x) for x in self.chi]
        if d["delta"] is not None and math.isinf(d["delta"]):
            d["delta"] = "inf"
        for key in ("delta", "gamma", "tau", "u_min", "u_max"):
            if isinstance(d[key], (np.floating, int)) and not isinstance(d[key], bool):
                d[key] = float(d[key])
        d["n_classes"] = int(self.n_classes)
        d["n_models"] = int(self.n_models)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UbixParams":
        missing = {
            "measure", "delta", "gamma", "tau", "chi", "u_min", "u_max", "n_classes", "n_models"
        } - set(d)
        if missing:
            raise ValidationError(f"params missing fields: {sorted(missing)}")
        delta = d["delta"]
        if isinstance(delta, str):
            if delta.lower() not in ("inf", "infinity"):
                raise ValidationError(f"delta must be a number or 'inf', got {delta!r}")
            delta = math.inf
        return cls(
            measure=d["measure"],
            delta=None if delta is None else float(delta),
            gamma=None if d["gamma"] is None else float(d["gamma"]),
            tau=None if d["tau"] is None else float(d["tau"]),
            chi=d["chi"],
            u_min=float(d["u_min"]),
            u_max=float(d["u_max"]),
            n_classes=int(d["n_classes"]),
            n_models=int(d["n_models"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "UbixParams":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})")
        return cls.from_dict(d)


def _check_uniform(bags: Sequence[BagLogits]) -> tuple[int, int]:
    if len(bags) == 0:
        raise ValidationError("validation set is empty")
    shape = (bags[0].n_models, bags[0].n_classes)
    for bag in bags:
        if (bag.n_models, bag.n_classes) != shape:
            raise ValidationError(
                f"bag {bag.bag_id!r} has (M, C)=({bag.n_models}, {bag.n_classes}), expected {shape}"
            )
    return shape


def fit_chi(validation: Sequence[BagLogits]) -> np.ndarray:
    """Per-class minimum logit over every validation instance and member."""
    _check_uniform(validation)
    return np.min([bag.logits.min(axis=(0, 1)) for bag in validation], axis=0)


def fit_u_range(validation: Sequence[BagLogits], measure) -> tuple[float, float]:
    _check_uniform(validation)
    u = np.concatenate([uncertainty(measure, bag.logits) for bag in validation])
    return float(u.min()), float(u.max())


def gamma_hat(gamma: float, u_min: float, u_max: float) -> float:
    return gamma * (u_min + u_max)


def _gate(u, delta: float, center: float):
    # 1 / (1 + exp(delta * (u - center))) without overflow for large delta.
    return expit(-delta * (np.asarray(u, dtype=np.float64) - center))


def ubix_transform(h, u, c: int, params: UbixParams):
    """Gate logit(s) ``h`` of class ``c`` (1-based) given uncertainty ``u``."""
    if params.delta is None or math.isinf(params.delta):
        raise ValidationError("ubix_transform needs a finite delta; use hard_prune for delta=inf")
    chi = params.chi[c - 1]
    return (np.asarray(h, dtype=np.float64) - chi) * _gate(u, params.delta, params.gamma_hat) + chi


def _soft_logits(logits: np.ndarray, u: np.ndarray, chi: np.ndarray, delta: float, center: float):
    gate = _gate(u, delta, center)
    return (logits - chi) * gate[:, None, None] + chi


def _hard_keep(u: np.ndarray, tau: float) -> np.ndarray:
    keep = u < tau
    if not keep.any():
        keep = np.zeros_like(keep)
        keep[int(np.argmin(u))] = True
    return keep


def hard_prune(bag: BagLogits, uncertainties, tau: float) -> BagLogits:
    """Drop instances with uncertainty >= ``tau``.

    If that would empty the bag, the single least uncertain instance (lowest
    index on ties) is kept so the bag still yields a prediction.
    """
    u = np.asarray(uncertainties, dtype=np.float64)
    if u.shape != (bag.n_instances,):
        raise ValidationError(
            f"bag {bag.bag_id!r}: {u.size} uncertainties for {bag.n_instances} instances"
        )
    return bag.subset(np.flatnonzero(_hard_keep(u, tau)))


def infer(bag: BagLogits, params: Optional[UbixParams], mode) -> BagPrediction:
    mode = InferenceMode.parse(mode)
    if params is not None and (bag.n_models, bag.n_classes) != (params.n_models, params.n_classes):
        raise ValidationError(
            f"bag {bag.bag_id!r} has (M, C)=({bag.n_models}, {bag.n_classes}) but params expect "
            f"({params.n_models}, {params.n_classes})"
        )

    if mode is InferenceMode.PLAIN_MIL:
        u = uncertainty(PLAIN_REPORT_MEASURE, bag.logits)
        probs = bag_probability(mil_pool(bag))
        return BagPrediction(bag.bag_id, probs, bag_predict(probs), u)

    if params is None:
        raise ValidationError(f"mode {mode.value!r} requires calibrated params")
    u = uncertainty(params.measure, bag.logits)

    if mode is InferenceMode.SOFT_UBIX:
        if params.delta is None or math.isinf(params.delta) or params.gamma is None:
            raise ValidationError("soft mode needs params with finite delta and gamma")
        post = _soft_logits(bag.logits, u, params.chi, params.delta, params.gamma_hat)
        probs = bag_probability(post.max(axis=0))
        return BagPrediction(bag.bag_id, probs, bag_predict(probs), u, post)

    if params.tau is None:
        raise ValidationError("hard mode needs params with tau")
    pruned = hard_prune(bag, u, params.tau)
    probs = bag_probability(mil_pool(pruned))
    return BagPrediction(bag.bag_id, probs, bag_predict(probs), u)


class _Stacked:
    """All validation instances in one array plus bag boundaries, for fast grid search."""

    def __init__(self, bags: Sequence[BagLogits], measure):
        self.logits = np.concatenate([b.logits for b in bags], axis=0)
        sizes = np.array([b.n_instances for b in bags])
        self.offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        self.bag_of = np.repeat(np.arange(len(bags)), sizes)
        self.u = uncertainty(measure, self.logits)
        self.labels = np.array([b.label for b in bags])
        self.n_classes = bags[0].n_classes

    def predict(self, post_logits: np.ndarray) -> np.ndarray:
        pooled = np.maximum.reduceat(post_logits, self.offsets, axis=0)
        probs = softmax(pooled, axis=-1).mean(axis=1)
        return np.argmax(probs, axis=-1) + 1

    def score(self, post_logits: np.ndarray) -> float:
        try:
            return quadratic_weighted_kappa(self.labels, self.predict(post_logits), self.n_classes)
        except UndefinedMetricError:
            return -math.inf

    def hard_post(self, tau: float) -> np.ndarray:
        keep = self.u < tau
        kept_per_bag = np.add.reduceat(keep.astype(int), self.offsets)
        if np.any(kept_per_bag == 0):
            for b in np.flatnonzero(kept_per_bag == 0):
                idx = np.flatnonzero(self.bag_of == b)
                keep[idx[np.argmin(self.u[idx])]] = True
        return np.where(keep[:, None, None], self.logits, -np.inf)


def calibrate(validation: Sequence[BagLogits], measure, mode) -> UbixParams:
    """Fit floors and uncertainty range, then grid-search the gate for ``mode``.

    Soft mode searches ``DELTA_GRID`` x ``GAMMA_GRID``; hard mode searches the
    validation-uncertainty percentiles in ``TAU_PERCENTILES``. The first
    configuration reaching the best kappa wins, i.e. ties go to the smaller
    delta, then the smaller gamma (or the smaller tau).
    """
    measure = UncertaintyMeasure.parse(measure)
    mode = InferenceMode.parse(mode)
    n_models, n_classes = _check_uniform(validation)
    unlabeled = [b.bag_id for b in validation if b.label is None]
    if unlabeled:
        raise ValidationError(f"validation bags without label: {unlabeled[:5]}")
    if len({b.label for b in validation}) < 2:
        raise ValidationError("validation labels must contain at least two distinct classes")

    chi = fit_chi(validation)
    stacked = _Stacked(validation, measure)
    u_min, u_max = float(stacked.u.min()), float(stacked.u.max())
    params = UbixParams(measure, None, None, None, chi, u_min, u_max, n_classes, n_models)

    if mode is InferenceMode.SOFT_UBIX:
        best = (-math.inf, None, None)
        for delta in DELTA_GRID:
            for gamma in GAMMA_GRID:
                post = _soft_logits(
                    stacked.logits, stacked.u, chi, delta, gamma_hat(gamma, u_min, u_max)
                )
                score = stacked.score(post)
                if score > best[0]:
                    best = (score, delta, gamma)
        params.delta, params.gamma = best[1], best[2]
    elif mode is InferenceMode.HARD_UBIX:
        best_score, best_tau = -math.inf, None
        for tau in np.percentile(stacked.u, TAU_PERCENTILES):
            score = stacked.score(stacked.hard_post(float(tau)))
            if score > best_score:
                best_score, best_tau = score, float(tau)
        params.delta, params.tau = math.inf, best_tau
    return params
