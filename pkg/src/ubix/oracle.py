"""Deterministic stand-in for a trained slice-level ensemble.

The oracle reads a handful of hand-made image features. One of them, the
bright area above threshold, tracks the latent stage and drives the
in-distribution logits; the others (band contrast, band row, median and
spread) only describe how "OCT-like" a slice looks. Each member owns
slightly jittered stage prototypes and a signed envelope tilt. Inside the
envelope of clean-slice features the tilt is zero and members agree; outside
it, half of the members are pulled toward the first stage and the rest toward
the last, so ensemble disagreement spans the whole ordinal scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ubix.synth import GeneratorConfig, bag_rng, draw_latent_stages, render_slices

BRIGHT_THRESHOLD = 0.5
N_REFERENCE_BAGS = 40


@dataclass(frozen=True)
class OracleConfig:
    n_models: int = 5
    n_classes: int = 5
    seed: int = 0
    logit_scale: float = 8.0
    severity_step: float = 4.0
    prototype_jitter: float = 0.2
    scale_jitter: float = 0.2
    envelope_radius: float = 6.0
    tilt_max: float = 300.0
    tilt_rate: float = 0.25

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def image_features(images) -> np.ndarray:
    """Feature matrix ``(I, 5)``: bright area, contrast, band row, median, std."""
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    n, height, _ = x.shape
    flat = x.reshape(n, -1)
    bright = (flat > BRIGHT_THRESHOLD).sum(axis=1).astype(np.float64)
    median = np.median(flat, axis=1)
    profile = x.mean(axis=2)
    top_rows = np.sort(profile, axis=1)[:, -6:].mean(axis=1)
    contrast = top_rows - median
    band_row = np.argmax(profile, axis=1) / height
    return np.column_stack([bright, contrast, band_row, median, flat.std(axis=1)])


@dataclass(frozen=True)
class _Calibration:
    area_slope: float
    area_offset: float
    nuisance_mean: np.ndarray
    nuisance_std: np.ndarray


@lru_cache(maxsize=8)
def _reference_calibration(height: int, width: int, n_classes: int, seed: int, bumps_per_stage: int) -> _Calibration:
    feats, stages = [], []
    for b in range(N_REFERENCE_BAGS):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0AC1E, b]))
        label = b % n_classes + 1
        s = draw_latent_stages(label, 30, rng)
        feats.append(image_features(render_slices(s, height, width, rng, bumps_per_stage)))
        stages.append(s)
    f = np.concatenate(feats)
    s = np.concatenate(stages).astype(np.float64)
    slope, offset = np.polyfit(f[:, 0], s - 1.0, 1)
    nuis = f[:, 1:]
    return _Calibration(float(slope), float(offset), nuis.mean(axis=0), nuis.std(axis=0) + 1e-6)


class OracleEnsemble:
    """``logits(images)`` returns ``(I, M, C)`` for a stack of slices."""

    def __init__(self, config: OracleConfig = OracleConfig(), height: int = 64, width: int = 128,
                 bumps_per_stage: int = 2):
        self.config = config
        c, m = config.n_classes, config.n_models
        self.calibration = _reference_calibration(height, width, c, config.seed, bumps_per_stage)
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x0E5E]))
        self.prototypes = np.arange(c, dtype=np.float64)[None, :] + rng.normal(0.0, config.prototype_jitter, size=(m, c))
        self.scales = config.logit_scale * (1.0 + rng.normal(0.0, config.scale_jitter, size=m))
        signs = np.where(np.arange(m) % 2 == 0, 1.0, -1.0)
        self.tilt = signs * rng.uniform(0.8, 1.2, size=m)
        # Unit-norm prototype directions on a half circle: first stage at 0, last at pi.
        self.direction = np.cos(np.pi * np.arange(c) / max(c - 1, 1))

    @classmethod
    def for_generator(cls, gen: GeneratorConfig, config: OracleConfig | None = None) -> "OracleEnsemble":
        config = config or OracleConfig(n_classes=gen.n_classes)
        return cls(config, gen.height, gen.width, gen.bumps_per_stage)

    def stage_feature(self, feats: np.ndarray) -> np.ndarray:
        cal = self.calibration
        a = cal.area_slope * feats[:, 0] + cal.area_offset
        return np.clip(a, -0.5, self.config.n_classes - 0.5)

    def envelope_excess(self, feats: np.ndarray) -> np.ndarray:
        cal = self.calibration
        z = (feats[:, 1:] - cal.nuisance_mean) / cal.nuisance_std
        return np.maximum(np.linalg.norm(z, axis=1) - self.config.envelope_radius, 0.0)

    def logits_from_features(self, feats: np.ndarray) -> np.ndarray:
        cfg = self.config
        a = self.stage_feature(feats)
        dist = -self.scales[None, :, None] * (a[:, None, None] - self.prototypes[None, :, :]) ** 2
        # More severe stages get larger logits so that max-pooling over slices
        # is decided by the most advanced slice rather than the healthy ones.
        dist = dist + cfg.severity_step * np.arange(cfg.n_classes)[None, None, :]
        excess = self.envelope_excess(feats)
        pull = cfg.tilt_max * (1.0 - np.exp(-cfg.tilt_rate * excess))
        tilt = pull[:, None, None] * self.tilt[None, :, None] * self.direction[None, None, :]
        return dist + tilt

    def logits(self, images) -> np.ndarray:
        return self.logits_from_features(image_features(images))
