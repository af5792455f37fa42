"""Synthetic OCT-like volumes and the four artificial artifact injectors.

A volume is a float32 array ``(I, H, W)`` with values in [0, 1]. Each slice
shows speckle background and a bright horizontal band; the band carries
``bumps_per_stage * (stage - 1)`` Gaussian elevations, so the bright area
encodes the slice's latent stage.

All randomness comes from ``numpy.random.SeedSequence`` keys built from the
master seed, the split, the bag index and (for artifacts) the artifact kind,
so every volume can be regenerated on its own.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from ubix.core import ValidationError

SPLIT_CODES = {"train": 0, "val": 1, "test": 2}

BAND_THICKNESS = 6
BAND_LEVEL = 0.75
DRUSEN_LEVEL = 0.7
CHOROID_LEVEL = 0.25


class ArtifactKind(str, Enum):
    BLINKING = "blinking"
    FLIP = "flip"
    SHADOW = "shadow"
    NOISE = "noise"

    @classmethod
    def parse(cls, value) -> "ArtifactKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValidationError(
                f"unknown artifact {value!r}; expected one of {', '.join(k.value for k in cls)}"
            )

    @property
    def code(self) -> int:
        return list(ArtifactKind).index(self) + 1


@dataclass(frozen=True)
class GeneratorConfig:
    n_bags: int = 100
    n_classes: int = 5
    height: int = 64
    width: int = 128
    min_instances: int = 14
    max_instances: int = 73
    seed: int = 0
    artifact_fraction: float = 0.0
    artifact: Optional[ArtifactKind] = None
    bumps_per_stage: int = 2

    def __post_init__(self) -> None:
        if not 0.0 <= self.artifact_fraction <= 1.0:
            raise ValidationError(f"artifact fraction must lie in [0, 1], got {self.artifact_fraction}")
        if self.height < 8 or self.width < 8:
            raise ValidationError("image dimensions must be at least 8")
        if not 1 <= self.min_instances <= self.max_instances:
            raise ValidationError("need 1 <= min_instances <= max_instances")
        if self.n_classes < 2:
            raise ValidationError("need at least two classes")
        if self.artifact is not None:
            object.__setattr__(self, "artifact", ArtifactKind.parse(self.artifact))

    def to_dict(self) -> dict:
        return {
            "n_bags": self.n_bags,
            "n_classes": self.n_classes,
            "height": self.height,
            "width": self.width,
            "min_instances": self.min_instances,
            "max_instances": self.max_instances,
            "seed": self.seed,
            "artifact_fraction": self.artifact_fraction,
            "artifact": None if self.artifact is None else self.artifact.value,
            "bumps_per_stage": self.bumps_per_stage,
        }


@dataclass
class SyntheticVolume:
    bag_id: str
    images: np.ndarray
    latent_stages: np.ndarray
    label: int
    artifact_mask: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.artifact_mask:
            self.artifact_mask = [None] * len(self.latent_stages)

    @property
    def n_instances(self) -> int:
        return self.images.shape[0]

    def with_images(self, images: np.ndarray, mask: list) -> "SyntheticVolume":
        return replace(self, images=images, artifact_mask=list(mask))


def bag_rng(seed: int, split: str, bag_index: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, SPLIT_CODES[split], bag_index, *extra]))


def draw_latent_stages(label: int, n_instances: int, rng: np.random.Generator) -> np.ndarray:
    """Slice stages in 1..label with at least one slice at ``label``."""
    stages = rng.integers(1, label + 1, size=n_instances)
    stages[rng.integers(n_instances)] = label
    return stages


def render_slices(stages, height: int, width: int, rng: np.random.Generator, bumps_per_stage: int = 2):
    """Render one volume's slices; the band row is shared by the whole volume."""
    stages = np.asarray(stages)
    n = stages.size
    rows = np.arange(height, dtype=np.float64)[None, :, None]
    cols = np.arange(width, dtype=np.float64)

    band_top = rng.uniform(0.28, 0.34) * height
    tilt = rng.uniform(-0.5, 0.5) * np.linspace(-1.0, 1.0, width)
    base_top = band_top + tilt  # (W,)

    elevation = np.zeros((n, width))
    for i, stage in enumerate(stages):
        k = bumps_per_stage * (int(stage) - 1)
        if k == 0:
            continue
        centers = rng.uniform(6, width - 6, size=k)
        heights = rng.uniform(4.5, 5.5, size=k)
        widths = rng.uniform(3.5, 4.5, size=k)
        elevation[i] = (heights[:, None] * np.exp(-0.5 * ((cols[None, :] - centers[:, None]) / widths[:, None]) ** 2)).sum(0)

    top = base_top[None, :] - elevation  # (I, W)
    top = top[:, None, :]
    band_bottom = base_top[None, None, :] + BAND_THICKNESS

    img = rng.gamma(2.0, 0.04, size=(n, height, width))
    # Fractional coverage of each pixel row by the drusen elevation.
    drusen = np.clip(np.minimum(rows + 1.0, base_top[None, None, :]) - np.maximum(rows, top), 0.0, 1.0)
    band = (rows >= base_top[None, None, :]) & (rows < band_bottom)
    choroid = (rows >= band_bottom) & (rows < band_bottom + 8)
    img = img + DRUSEN_LEVEL * drusen
    img = np.where(band, BAND_LEVEL + rng.normal(0.0, 0.05, size=img.shape), img)
    img = np.where(choroid, img + CHOROID_LEVEL, img)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_clean_volume(config: GeneratorConfig, bag_index: int, split: str = "test") -> SyntheticVolume:
    rng = bag_rng(config.seed, split, bag_index)
    label = int(rng.integers(1, config.n_classes + 1))
    n_instances = int(rng.integers(config.min_instances, config.max_instances + 1))
    stages = draw_latent_stages(label, n_instances, rng)
    images = render_slices(stages, config.height, config.width, rng, config.bumps_per_stage)
    return SyntheticVolume(f"{split}-{bag_index:05d}", images, stages, label)


def select_artifact_groups(n_instances: int, rng: np.random.Generator) -> list[int]:
    """One or two runs of adjacent slices, each 2-15% of the volume.

    Two runs never overlap or touch, so they stay distinguishable.
    """
    if n_instances < 1:
        raise ValidationError("volume has no slices")
    n_groups = 1 if rng.random() < 0.5 else 2
    sizes = [max(1, int(round(rng.uniform(0.02, 0.15) * n_instances))) for _ in range(n_groups)]
    for _ in range(100):
        starts = [int(rng.integers(0, n_instances - s + 1)) for s in sizes]
        ranges = [set(range(a, a + s)) for a, s in zip(starts, sizes)]
        if n_groups == 1 or not (_padded(ranges[0]) & ranges[1]):
            return sorted(set().union(*ranges))
    # Still overlapping: shrink the second group until it fits beside the first.
    first = ranges[0]
    for size in range(sizes[1], 0, -1):
        for start in range(0, n_instances - size + 1):
            cand = set(range(start, start + size))
            if not _padded(first) & cand:
                return sorted(first | cand)
    return sorted(first)


def _padded(indices: set) -> set:
    return indices | {i - 1 for i in indices} | {i + 1 for i in indices}


def fraction_key(fraction: float) -> int:
    return int(round(fraction * 1000))


def volume_stats(images: np.ndarray) -> tuple[float, float]:
    x = np.asarray(images, dtype=np.float64)
    return float(np.median(x)), float(np.std(x))


def apply_blinking(images, indices, rng, stats=None) -> np.ndarray:
    """Replace slices by Gaussian noise around the volume median."""
    median, std = volume_stats(images) if stats is None else stats
    out = np.array(images, copy=True)
    idx = np.asarray(indices, dtype=int)
    noise = rng.normal(median, std, size=(idx.size,) + out.shape[1:])
    out[idx] = np.clip(noise, 0.0, 1.0)
    return out


def apply_flip(images, indices) -> np.ndarray:
    out = np.array(images, copy=True)
    idx = np.asarray(indices, dtype=int)
    out[idx] = out[idx, ::-1, :]
    return out


def shadow_profile(width: int, mu: float, sigma: float) -> np.ndarray:
    """Per-column factor ``1 - pdf(column)`` of a normal with mean ``mu``, std ``sigma``."""
    cols = np.arange(width, dtype=np.float64)
    density = np.exp(-0.5 * ((cols - mu) / sigma) ** 2) / (sigma * np.sqrt(2.0 * np.pi))
    return 1.0 - density


def apply_shadow(images, indices, rng) -> np.ndarray:
    out = np.array(images, copy=True)
    width = out.shape[-1]
    if width < 2:
        raise ValidationError("shadow needs at least two columns")
    mu = rng.uniform(0.0, width)
    sigma = rng.uniform(width / 4.0, 3.0 * width / 4.0)
    idx = np.asarray(indices, dtype=int)
    out[idx] = out[idx] * shadow_profile(width, mu, sigma)[None, None, :]
    return out


def apply_noise(images, indices, rng, stats=None) -> np.ndarray:
    _, std = volume_stats(images) if stats is None else stats
    out = np.array(images, copy=True)
    idx = np.asarray(indices, dtype=int)
    noise = rng.normal(0.0, 4.0 * std, size=(idx.size,) + out.shape[1:])
    out[idx] = np.clip(out[idx] + noise, 0.0, 1.0)
    return out


def corrupt_volume(volume: SyntheticVolume, kind, rng: np.random.Generator) -> SyntheticVolume:
    """Inject one artifact kind into randomly placed slice groups.

    Statistics for the noise-based artifacts come from the pristine volume.
    """
    kind = ArtifactKind.parse(kind)
    indices = select_artifact_groups(volume.n_instances, rng)
    stats = volume_stats(volume.images)
    if kind is ArtifactKind.BLINKING:
        images = apply_blinking(volume.images, indices, rng, stats)
    elif kind is ArtifactKind.FLIP:
        images = apply_flip(volume.images, indices)
    elif kind is ArtifactKind.SHADOW:
        images = apply_shadow(volume.images, indices, rng)
    else:
        images = apply_noise(volume.images, indices, rng, stats)
    mask = list(volume.artifact_mask)
    for i in indices:
        mask[i] = kind.value
    return volume.with_images(images.astype(np.float32), mask)


def corrupted_bag_indices(n_bags: int, fraction: float, seed: int, split: str, kind) -> np.ndarray:
    """Exactly ``round(fraction * n_bags)`` bag indices, drawn without replacement."""
    kind = ArtifactKind.parse(kind)
    n_corrupt = int(round(fraction * n_bags))
    rng = np.random.default_rng(np.random.SeedSequence([seed, SPLIT_CODES[split], kind.code, 0x5E1EC7]))
    return np.sort(rng.permutation(n_bags)[:n_corrupt])


def generate_volume(
    config: GeneratorConfig, bag_index: int, split: str = "test", corrupt: bool = False
) -> SyntheticVolume:
    volume = generate_clean_volume(config, bag_index, split)
    if corrupt:
        if config.artifact is None:
            raise ValidationError("corruption requested but no artifact kind configured")
        # Keyed by the fraction too, so each fraction gets an independent draw.
        rng = bag_rng(config.seed, split, bag_index, config.artifact.code, fraction_key(config.artifact_fraction))
        volume = corrupt_volume(volume, config.artifact, rng)
    return volume


def generate_split(config: GeneratorConfig, split: str, n_bags: Optional[int] = None):
    """Yield the volumes of one split; corruption follows ``config.artifact_fraction``."""
    n = config.n_bags if n_bags is None else n_bags
    corrupt = set()
    if config.artifact is not None and config.artifact_fraction > 0:
        corrupt = set(corrupted_bag_indices(n, config.artifact_fraction, config.seed, split, config.artifact).tolist())
    for b in range(n):
        yield generate_volume(config, b, split, b in corrupt)
