"""Agreement, ranking and cluster-separation metrics plus bootstrap intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import rankdata

from ubix.core import ValidationError


class UndefinedMetricError(ValidationError):
    """The metric has a zero denominator for this input."""


def _ratings(truth, pred, n_classes: Optional[int] = None):
    t = np.asarray(truth, dtype=int).ravel()
    p = np.asarray(pred, dtype=int).ravel()
    if t.shape != p.shape:
        raise ValidationError(f"length mismatch: {t.size} truth vs {p.size} predictions")
    if t.size == 0:
        raise ValidationError("need at least one rating pair")
    if n_classes is None:
        n_classes = int(max(t.max(), p.max()))
    lo = min(t.min(), p.min())
    hi = max(t.max(), p.max())
    if lo < 1 or hi > n_classes:
        raise ValidationError(f"ratings must lie in 1..{n_classes}")
    return t, p, n_classes


def confusion_matrix(truth, pred, n_classes: int) -> np.ndarray:
    t, p, n = _ratings(truth, pred, n_classes)
    return np.bincount((t - 1) * n + (p - 1), minlength=n * n).reshape(n, n).astype(np.float64)


def quadratic_weighted_kappa(truth, pred, n_classes: Optional[int] = None) -> float:
    """Cohen's kappa with weights ``(i - j)^2 / (C - 1)^2``."""
    t, p, n = _ratings(truth, pred, n_classes)
    observed = confusion_matrix(t, p, n).astype(np.int64)
    idx = np.arange(n)
    # Integer weights and an unnormalised expectation keep small cases exact.
    weights = (idx[:, None] - idx[None, :]) ** 2
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0))
    denom = int((weights * expected).sum())
    if denom == 0:
        raise UndefinedMetricError("quadratic weighted kappa undefined: no expected disagreement")
    return float(1.0 - int((weights * observed).sum()) * t.size / denom)


def cohen_kappa(truth, pred, n_classes: Optional[int] = None) -> float:
    t, p, n = _ratings(truth, pred, n_classes)
    observed = confusion_matrix(t, p, n) / t.size
    p_o = np.trace(observed)
    p_e = float(observed.sum(axis=1) @ observed.sum(axis=0))
    if math.isclose(p_e, 1.0, rel_tol=0, abs_tol=1e-15):
        raise UndefinedMetricError("kappa undefined: chance agreement is 1")
    return float((p_o - p_e) / (1.0 - p_e))


def roc_auc(scores, labels) -> float:
    """Mann-Whitney estimate of the AUC; tied positive/negative pairs count one half."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if s.shape != y.shape:
        raise ValidationError(f"length mismatch: {s.size} scores vs {y.size} labels")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")
    ranks = rankdata(s)  # average ranks resolve ties as half-counts
    u_stat = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def positive_threshold(n_classes: int) -> int:
    """Lowest class counted as positive: stage 3 on the 5-stage scale, class 2 for binary."""
    return n_classes // 2 + 1


def binarize_stage(c, n_classes: int = 5):
    return np.asarray(c) >= positive_threshold(n_classes)


def positive_score(probs) -> np.ndarray:
    """Total probability of the positive stages; accepts ``(C,)`` or ``(N, C)``."""
    p = np.asarray(probs, dtype=np.float64)
    return p[..., positive_threshold(p.shape[-1]) - 1 :].sum(axis=-1)


def xie_beni(values, groups) -> float:
    """Compactness over separation for a two-group split of scalar values.

    Compactness is the mean squared distance of each value to its own group
    mean, separation the squared distance between the two group means.
    Lower is better; coinciding group means give ``inf``.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    g = np.asarray(groups).astype(bool).ravel()
    if v.shape != g.shape:
        raise ValidationError(f"length mismatch: {v.size} values vs {g.size} group flags")
    if g.all() or not g.any():
        raise ValidationError("both groups must be non-empty")
    c_in, c_out = v[g].mean(), v[~g].mean()
    compactness = (((v[g] - c_in) ** 2).sum() + ((v[~g] - c_out) ** 2).sum()) / v.size
    separation = (c_in - c_out) ** 2
    if separation == 0:
        return math.inf
    return float(compactness / separation)


@dataclass
class BootstrapResult:
    low: float
    high: float
    iterations: int
    seed: int
    skipped: int = 0

    def as_dict(self) -> dict:
        return {"low": self.low, "high": self.high, "iterations": self.iterations, "seed": self.seed}


def bootstrap_ci(
    metric: Callable[[np.ndarray], float],
    n_samples: int,
    iterations: int = 1000,
    seed: int = 0,
    alpha: float = 0.05,
) -> BootstrapResult:
    """Percentile interval of ``metric(idx)`` over case resamples ``idx``.

    Resample ``k`` draws from its own generator seeded by ``(seed, k)``, so
    the interval does not depend on evaluation order. Resamples for which the
    metric is undefined are skipped and counted.
    """
    if iterations < 1:
        raise ValidationError("iterations must be >= 1")
    if n_samples < 1:
        raise ValidationError("cannot bootstrap an empty sample")
    values = []
    skipped = 0
    for k in range(iterations):
        rng = np.random.default_rng([seed, k])
        idx = rng.integers(0, n_samples, size=n_samples)
        try:
            values.append(metric(idx))
        except UndefinedMetricError:
            skipped += 1
    if not values:
        raise UndefinedMetricError("metric undefined on every bootstrap resample")
    low, high = np.percentile(values, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return BootstrapResult(float(low), float(high), iterations, seed, skipped)


@dataclass
class EvalReport:
    n: int
    kappa_w: Optional[float] = None
    kappa: Optional[float] = None
    auc: Optional[float] = None
    ci: Optional[dict] = field(default=None)

    def to_dict(self) -> dict:
        d = {"n": self.n}
        for key in ("kappa_w", "kappa", "auc"):
            value = getattr(self, key)
            if value is not None:
                d[key] = value
        if self.ci is not None:
            d["ci"] = self.ci
        return d


@dataclass
class ClusterSeparationReport:
    xb: float
    auc: float


def evaluate(truth, pred, probs, n_classes: int, bootstrap: Optional[int] = None, seed: int = 0) -> EvalReport:
    """Bag-level report; kappa_w for more than two classes, plain kappa always."""
    t, p, n = _ratings(truth, pred, n_classes)
    scores = positive_score(probs)
    positives = binarize_stage(t, n)

    metrics: dict[str, Callable[[np.ndarray], float]] = {}
    if n > 2:
        metrics["kappa_w"] = lambda idx: quadratic_weighted_kappa(t[idx], p[idx], n)
    metrics["kappa"] = lambda idx: cohen_kappa(t[idx], p[idx], n)
    metrics["auc"] = lambda idx: roc_auc(scores[idx], positives[idx])

    report = EvalReport(n=int(t.size))
    full = np.arange(t.size)
    for name, fn in list(metrics.items()):
        try:
            setattr(report, name, fn(full))
        except UndefinedMetricError:
            del metrics[name]
    if bootstrap:
        report.ci = {
            name: bootstrap_ci(fn, t.size, bootstrap, seed).as_dict() for name, fn in metrics.items()
        }
    return report
