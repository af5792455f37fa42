"""Experiment runners on synthetic data: artifact-fraction sweep and uncertainty comparison."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from ubix.core import BagLogits, ValidationError
from ubix.exclusion import InferenceMode, UbixParams, calibrate, infer
from ubix.metrics import (
    UndefinedMetricError,
    binarize_stage,
    bootstrap_ci,
    positive_score,
    quadratic_weighted_kappa,
    roc_auc,
    xie_beni,
)
from ubix.oracle import OracleConfig, OracleEnsemble
from ubix.synth import ArtifactKind, GeneratorConfig, SyntheticVolume, corrupted_bag_indices, generate_volume
from ubix.uncertainty import UncertaintyMeasure, uncertainty

log = logging.getLogger(__name__)

DEFAULT_FRACTIONS = tuple(round(0.1 * k, 1) for k in range(11))
SWEEP_COLUMNS = ("artifact", "mode", "fraction", "kappa_w", "kappa_w_lo", "kappa_w_hi", "auc", "auc_lo", "auc_hi")


@lru_cache(maxsize=4)
def _oracle(height: int, width: int, bumps_per_stage: int, config: OracleConfig) -> OracleEnsemble:
    return OracleEnsemble(config, height, width, bumps_per_stage)


def simulate_bag(
    gen: GeneratorConfig, oracle: OracleConfig, split: str, index: int, corrupt: bool = False
) -> tuple[SyntheticVolume, np.ndarray]:
    volume = generate_volume(gen, index, split, corrupt)
    model = _oracle(gen.height, gen.width, gen.bumps_per_stage, oracle)
    return volume, model.logits(volume.images)


def _simulate_task(args):
    gen, oracle, split, index, corrupt, keep_images = args
    volume, logits = simulate_bag(gen, oracle, split, index, corrupt)
    if not keep_images:
        volume = replace(volume, images=np.empty((0,), dtype=np.float32))
    return volume, logits


def simulate_split(
    gen: GeneratorConfig,
    oracle: OracleConfig,
    split: str,
    indices: Sequence[int],
    corrupt: Sequence[int] = (),
    workers: int = 1,
    keep_images: bool = False,
) -> list[tuple[SyntheticVolume, np.ndarray]]:
    """Volumes and oracle logits for ``indices``, in that order, whatever ``workers`` is."""
    corrupt = set(int(i) for i in corrupt)
    tasks = [(gen, oracle, split, int(i), int(i) in corrupt, keep_images) for i in indices]
    if workers <= 1 or len(tasks) < 2:
        return [_simulate_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_simulate_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def to_bags(results) -> list[BagLogits]:
    return [BagLogits(v.bag_id, logits, v.label) for v, logits in results]


@dataclass
class SweepSpec:
    artifact: ArtifactKind = ArtifactKind.BLINKING
    fractions: tuple = DEFAULT_FRACTIONS
    modes: tuple = (InferenceMode.PLAIN_MIL, InferenceMode.SOFT_UBIX, InferenceMode.HARD_UBIX)
    measure: UncertaintyMeasure = UncertaintyMeasure.ORDINAL_ENTROPY
    seed: int = 42
    n_test: int = 300
    n_val: int = 150
    bootstrap: int = 1000
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)

    def __post_init__(self) -> None:
        self.artifact = ArtifactKind.parse(self.artifact)
        self.measure = UncertaintyMeasure.parse(self.measure)
        self.modes = tuple(InferenceMode.parse(m) for m in self.modes)
        self.fractions = tuple(float(f) for f in self.fractions)
        if any(not 0.0 <= f <= 1.0 for f in self.fractions):
            raise ValidationError("fractions must lie in [0, 1]")
        if list(self.fractions) != sorted(self.fractions):
            raise ValidationError("fractions must be sorted ascending")
        self.generator = replace(self.generator, seed=self.seed, n_bags=self.n_test, artifact=self.artifact)

    def to_dict(self) -> dict:
        return {
            "artifact": self.artifact.value,
            "fractions": list(self.fractions),
            "modes": [m.value for m in self.modes],
            "measure": self.measure.value,
            "seed": self.seed,
            "n_test": self.n_test,
            "n_val": self.n_val,
            "bootstrap": self.bootstrap,
            "generator": self.generator.to_dict(),
            "oracle": self.oracle.to_dict(),
        }


def _interval(fn, n: int, iterations: int, seed: int) -> tuple[Optional[float], Optional[float]]:
    if iterations <= 0:
        return None, None
    try:
        ci = bootstrap_ci(fn, n, iterations, seed)
    except UndefinedMetricError:
        return None, None
    return ci.low, ci.high


def score_predictions(labels, predicted, probs, n_classes: int, iterations: int, seed: int) -> dict:
    """Bag-level kappa_w and AUC with percentile bootstrap bounds."""
    y = np.asarray(labels)
    p = np.asarray(predicted)
    scores = positive_score(probs)
    positives = binarize_stage(y, n_classes)

    def kw(idx):
        return quadratic_weighted_kappa(y[idx], p[idx], n_classes)

    def auc(idx):
        return roc_auc(scores[idx], positives[idx])

    full = np.arange(y.size)
    row = {}
    for name, fn in (("kappa_w", kw), ("auc", auc)):
        try:
            row[name] = fn(full)
        except UndefinedMetricError:
            row[name] = None
        row[f"{name}_lo"], row[f"{name}_hi"] = _interval(fn, y.size, iterations, seed)
    return row


def run_sweep(spec: SweepSpec, workers: int = 1) -> dict:
    """Calibrate on a clean validation split, then corrupt the test split at each fraction.

    Every fraction starts again from the pristine test volumes. The corrupted
    bags at a larger fraction include those at any smaller one; the artifact
    draws themselves are independent per fraction.
    """
    gen = spec.generator
    clean_gen = replace(gen, artifact_fraction=0.0, artifact=None)
    val = to_bags(simulate_split(clean_gen, spec.oracle, "val", range(spec.n_val), workers=workers))
    params: dict[InferenceMode, Optional[UbixParams]] = {}
    for mode in spec.modes:
        params[mode] = None if mode is InferenceMode.PLAIN_MIL else calibrate(val, spec.measure, mode)
        log.info("calibrated %s: %s", mode.value, params[mode] and params[mode].to_dict())

    clean = to_bags(simulate_split(clean_gen, spec.oracle, "test", range(spec.n_test), workers=workers))
    rows = []
    for fraction in spec.fractions:
        corrupt = corrupted_bag_indices(spec.n_test, fraction, spec.seed, "test", spec.artifact)
        frac_gen = replace(gen, artifact_fraction=fraction)
        bags = list(clean)
        redone = simulate_split(frac_gen, spec.oracle, "test", corrupt, corrupt, workers=workers)
        for idx, bag in zip(corrupt, to_bags(redone)):
            bags[idx] = bag
        labels = [b.label for b in bags]
        for mode in spec.modes:
            preds = [infer(b, params[mode], mode) for b in bags]
            row = {"artifact": spec.artifact.value, "mode": mode.value, "fraction": fraction}
            row.update(
                score_predictions(
                    labels,
                    [p.predicted for p in preds],
                    np.array([p.probs for p in preds]),
                    gen.n_classes,
                    spec.bootstrap,
                    spec.seed,
                )
            )
            rows.append(row)
        log.info("fraction %.2f done (%d corrupted bags)", fraction, len(corrupt))
    return {
        "spec": spec.to_dict(),
        "params": {m.value: (p.to_dict() if p is not None else None) for m, p in params.items()},
        "rows": rows,
    }


def sweep_csv_lines(rows) -> list[str]:
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(float(v))
        return str(v)

    return [",".join(SWEEP_COLUMNS)] + [",".join(fmt(r[c]) for c in SWEEP_COLUMNS) for r in rows]


def compare_uncertainty(bags: Sequence[BagLogits], artifact_masks: Sequence[Sequence], n_bins: int = 50) -> dict:
    """Artifact-detection AUC, Xie-Beni index and density histograms per measure."""
    logits = np.concatenate([b.logits for b in bags], axis=0)
    flags = np.concatenate([[m is not None for m in mask] for mask in artifact_masks]).astype(bool)
    if flags.size != logits.shape[0]:
        raise ValidationError("artifact masks do not match the number of instances")
    if not flags.any():
        raise ValidationError("dataset contains no corrupted instances")
    if flags.all():
        raise ValidationError("dataset contains no clean instances")

    measures = {}
    histograms = {}
    for measure in UncertaintyMeasure:
        u = uncertainty(measure, logits)
        xb = xie_beni(u, flags)
        measures[measure.value] = {
            "auc": roc_auc(u, flags),
            "xb": "inf" if math.isinf(xb) else xb,
            "mean_clean": float(u[~flags].mean()),
            "mean_artifact": float(u[flags].mean()),
        }
        hi = float(u.max())
        edges = np.linspace(0.0, hi if hi > 0 else 1.0, n_bins + 1)
        clean_d, _ = np.histogram(u[~flags], bins=edges, density=True)
        art_d, _ = np.histogram(u[flags], bins=edges, density=True)
        histograms[measure.value] = (edges, clean_d, art_d)
    report = {
        "n_instances": int(flags.size),
        "n_artifact": int(flags.sum()),
        "measures": measures,
    }
    return {"report": report, "histograms": histograms}


def histogram_csv_lines(edges, clean_density, artifact_density) -> list[str]:
    lines = ["bin_lo,bin_hi,clean_density,artifact_density"]
    for lo, hi, c, a in zip(edges[:-1], edges[1:], clean_density, artifact_density):
        lines.append(",".join(repr(float(x)) for x in (lo, hi, c, a)))
    return lines
