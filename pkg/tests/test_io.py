import json
import logging

import numpy as np
import pytest

from conftest import random_bags
from ubix.core import ValidationError
from ubix.io import read_fixture, read_labels, read_volume, volume_entry, write_fixture, write_volume
from ubix.synth import GeneratorConfig, generate_clean_volume


def test_fixture_roundtrip(tmp_path, rng):
    bags = random_bags(rng, 6)
    bags[2].label = None
    path = tmp_path / "f.jsonl"
    write_fixture(bags, path)
    back = read_fixture(path)
    assert [b.bag_id for b in back] == [b.bag_id for b in bags]
    for a, b in zip(bags, back):
        assert a.label == b.label
        assert a.logits.tobytes() == b.logits.tobytes()


def test_fixture_shape_mismatch_names_bag(tmp_path):
    path = tmp_path / "f.jsonl"
    path.write_text(
        json.dumps({"bag_id": "a", "label": 1, "logits": [[[0, 1, 2]]]}) + "\n"
        + json.dumps({"bag_id": "oddball", "label": 1, "logits": [[[0, 1, 2]], [[0, 1, 2]]]}) + "\n"
        + json.dumps({"bag_id": "wide", "label": 1, "logits": [[[0, 1, 2], [3, 4, 5]]]}) + "\n"
    )
    with pytest.raises(ValidationError, match="wide"):
        read_fixture(path)


@pytest.mark.parametrize(
    "line, match",
    [
        ("{not json", ":1: malformed"),
        (json.dumps({"label": 1, "logits": [[[0, 1]]]}), "bag_id"),
        (json.dumps({"bag_id": "a", "logits": [[0, 1]]}), "nested"),
        (json.dumps({"bag_id": "a", "logits": [[[0, 1]], [[0]]]}), "ragged"),
        (json.dumps({"bag_id": "a", "label": 9, "logits": [[[0, 1]]]}), "label"),
    ],
)
def test_fixture_diagnostics(tmp_path, line, match):
    path = tmp_path / "f.jsonl"
    path.write_text(line + "\n")
    with pytest.raises(ValidationError, match=match):
        read_fixture(path)


def test_empty_fixture_warns(tmp_path, caplog):
    path = tmp_path / "f.jsonl"
    path.write_text("")
    with caplog.at_level(logging.WARNING):
        assert read_fixture(path) == []
    assert "empty" in caplog.text


def test_read_labels(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text('{"bag_id": "a", "label": 2}\n{"bag_id": "b", "label": 5}\n')
    assert read_labels(path) == {"a": 2, "b": 5}


def test_volume_file_layout(tmp_path):
    cfg = GeneratorConfig(seed=2)
    v = generate_clean_volume(cfg, 0)
    write_volume(v, tmp_path)
    raw = (tmp_path / f"{v.bag_id}.f32").read_bytes()
    assert len(raw) == v.n_instances * 64 * 128 * 4
    first = np.frombuffer(raw[:4], dtype="<f4")[0]
    assert first == v.images[0, 0, 0]
    back = read_volume(tmp_path, volume_entry(v, 2, "test", 0), 64, 128)
    assert back.images.tobytes() == v.images.astype("<f4").tobytes()
    assert back.label == v.label
