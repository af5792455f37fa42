"""Line-delimited JSON fixtures, prediction files and on-disk synthetic datasets."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ubix.core import BagLogits, BagPrediction, ValidationError
from ubix.synth import SPLIT_CODES, SyntheticVolume

log = logging.getLogger(__name__)


def _read_jsonl(path) -> list[tuple[int, dict]]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed JSON ({exc.msg})")
            if not isinstance(rec, dict):
                raise ValidationError(f"{path}:{lineno}: expected a JSON object")
            records.append((lineno, rec))
    return records


def write_jsonl(records: Iterable[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def bag_to_record(bag: BagLogits) -> dict:
    return {"bag_id": bag.bag_id, "label": bag.label, "logits": bag.logits.tolist()}


def write_fixture(bags: Sequence[BagLogits], path) -> None:
    write_jsonl((bag_to_record(b) for b in bags), path)


def read_fixture(path) -> list[BagLogits]:
    """Read bags from a logit fixture; every record must share the first one's (M, C)."""
    records = _read_jsonl(path)
    if not records:
        log.warning("%s: fixture is empty", path)
        return []
    bags: list[BagLogits] = []
    shape = None
    for lineno, rec in records:
        missing = {"bag_id", "logits"} - set(rec)
        if missing:
            raise ValidationError(f"{path}:{lineno}: missing field(s) {sorted(missing)}")
        bag_id = str(rec["bag_id"])
        try:
            logits = np.asarray(rec["logits"], dtype=np.float64)
        except (TypeError, ValueError):
            raise ValidationError(f"{path}:{lineno}: bag {bag_id!r} has ragged or non-numeric logits")
        if logits.ndim != 3:
            raise ValidationError(
                f"{path}:{lineno}: bag {bag_id!r} logits must be nested [I][M][C], got {logits.ndim} levels"
            )
        if shape is None:
            shape = logits.shape[1:]
        elif logits.shape[1:] != shape:
            raise ValidationError(
                f"{path}:{lineno}: bag {bag_id!r} has (M, C)={logits.shape[1:]}, file started with {shape}"
            )
        try:
            bags.append(BagLogits(bag_id, logits, rec.get("label")))
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}")
    return bags


def write_predictions(preds: Sequence[BagPrediction], path) -> None:
    write_jsonl((p.to_record() for p in sorted(preds, key=lambda p: p.bag_id)), path)


def read_predictions(path) -> list[dict]:
    out = []
    for lineno, rec in _read_jsonl(path):
        missing = {"bag_id", "probs", "predicted"} - set(rec)
        if missing:
            raise ValidationError(f"{path}:{lineno}: missing field(s) {sorted(missing)}")
        out.append(rec)
    return out


def read_labels(path) -> dict[str, int]:
    """``bag_id -> label`` from any JSONL file with those two fields (fixtures qualify)."""
    labels = {}
    for lineno, rec in _read_jsonl(path):
        if "bag_id" not in rec or rec.get("label") is None:
            raise ValidationError(f"{path}:{lineno}: record needs bag_id and label")
        labels[str(rec["bag_id"])] = int(rec["label"])
    return labels


# Synthetic dataset layout: <root>/manifest.json, <root>/<split>/manifest.json,
# <root>/<split>/logits.jsonl and one <bag_id>.f32 per bag (I x H x W, float32 LE).


def volume_entry(volume: SyntheticVolume, seed: int, split: str, index: int) -> dict:
    return {
        "bag_id": volume.bag_id,
        "label": int(volume.label),
        "n_instances": int(volume.n_instances),
        "latent_stages": [int(s) for s in volume.latent_stages],
        "artifact_mask": list(volume.artifact_mask),
        "seed_key": [seed, SPLIT_CODES[split], index],
    }


def write_volume(volume: SyntheticVolume, directory) -> None:
    np.asarray(volume.images, dtype="<f4").tofile(Path(directory) / f"{volume.bag_id}.f32")


def read_volume(directory, entry: dict, height: int, width: int) -> SyntheticVolume:
    path = Path(directory) / f"{entry['bag_id']}.f32"
    data = np.fromfile(path, dtype="<f4")
    expected = entry["n_instances"] * height * width
    if data.size != expected:
        raise ValidationError(f"{path}: expected {expected} floats, found {data.size}")
    return SyntheticVolume(
        entry["bag_id"],
        data.reshape(entry["n_instances"], height, width),
        np.asarray(entry["latent_stages"]),
        int(entry["label"]),
        list(entry["artifact_mask"]),
    )


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc.msg})")
