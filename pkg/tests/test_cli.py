import json
import time
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from ubix.cli import main, split_sizes

SCHEMAS = Path(__file__).resolve().parents[1] / "docs" / "schemas"


def schema(name):
    return json.loads((SCHEMAS / f"{name}.schema.json").read_text())


def lines(path):
    return [json.loads(x) for x in Path(path).read_text().splitlines() if x.strip()]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds") / "data"
    assert run("--quiet", "--seed", 3, "synth", "--out", root, "--n-bags", 40,
               "--artifact", "blinking", "--fraction", 0.5) == 0
    return root


@pytest.fixture(scope="module")
def params(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("params")
    paths = {}
    for mode in ("soft", "hard"):
        for measure in ("ordinal-entropy", "entropy"):
            p = out / f"{mode}-{measure}.json"
            assert run("--quiet", "calibrate", "--val", dataset / "val" / "logits.jsonl",
                       "--measure", measure, "--mode", mode, "--out", p) == 0
            paths[mode, measure] = p
    return paths


def test_split_sizes():
    assert split_sizes(200) == {"train": 40, "val": 80, "test": 80}
    assert sum(split_sizes(7).values()) == 7


def test_synth_layout_and_schema(dataset):
    root_manifest = json.loads((dataset / "manifest.json").read_text())
    jsonschema.validate(root_manifest, schema("dataset_manifest"))
    assert root_manifest["generator"]["seed"] == 3
    for split in ("train", "val", "test"):
        m = json.loads((dataset / split / "manifest.json").read_text())
        jsonschema.validate(m, schema("dataset_manifest"))
        fixture = lines(dataset / split / "logits.jsonl")
        assert [r["bag_id"] for r in fixture] == [b["bag_id"] for b in m["bags"]]
        for rec, entry in zip(fixture, m["bags"]):
            jsonschema.validate(rec, schema("logit_fixture_record"))
            assert len(rec["logits"]) == entry["n_instances"]
            assert entry["label"] == max(entry["latent_stages"])
            size = (dataset / split / f"{entry['bag_id']}.f32").stat().st_size
            assert size == entry["n_instances"] * 64 * 128 * 4
            if split != "test":
                assert entry["artifact_mask"] == [None] * entry["n_instances"]
    test = json.loads((dataset / "test" / "manifest.json").read_text())
    corrupted = [b for b in test["bags"] if any(test_m for test_m in b["artifact_mask"])]
    assert len(corrupted) == round(0.5 * len(test["bags"]))


def test_synth_deterministic_across_workers(tmp_path, dataset):
    other = tmp_path / "again"
    assert run("--quiet", "--seed", 3, "--workers", 2, "synth", "--out", other, "--n-bags", 40,
               "--artifact", "blinking", "--fraction", 0.5) == 0
    for rel in ("manifest.json", "test/manifest.json", "test/logits.jsonl", "val/logits.jsonl"):
        assert (other / rel).read_bytes() == (dataset / rel).read_bytes(), rel
    name = sorted(p.name for p in (dataset / "test").glob("*.f32"))[0]
    assert (other / "test" / name).read_bytes() == (dataset / "test" / name).read_bytes()


def test_synth_fraction_zero(tmp_path):
    out = tmp_path / "clean"
    assert run("--quiet", "synth", "--out", out, "--n-bags", 10, "--no-images") == 0
    for split in ("train", "val", "test"):
        m = json.loads((out / split / "manifest.json").read_text())
        assert all(x is None for b in m["bags"] for x in b["artifact_mask"])
    assert not list(out.glob("*/*.f32"))


def test_synth_200_bags_under_a_minute(tmp_path):
    start = time.perf_counter()
    assert run("--quiet", "synth", "--out", tmp_path / "big", "--n-bags", 200) == 0
    assert time.perf_counter() - start < 60


def test_calibrate_output(params, dataset, tmp_path):
    for path in params.values():
        doc = json.loads(path.read_text())
        jsonschema.validate(doc, schema("ubix_params"))
        assert len(doc) == 9
    again = tmp_path / "p.json"
    run("--quiet", "calibrate", "--val", dataset / "val" / "logits.jsonl",
        "--measure", "entropy", "--mode", "soft", "--out", again)
    assert again.read_bytes() == params["soft", "entropy"].read_bytes()


def test_calibrate_rejects_unlabeled(tmp_path):
    fixture = tmp_path / "u.jsonl"
    fixture.write_text('{"bag_id": "a", "logits": [[[0, 1]]]}\n{"bag_id": "b", "logits": [[[1, 0]]]}\n')
    assert run("--quiet", "calibrate", "--val", fixture, "--out", tmp_path / "p.json") == 1


def test_missing_file_is_io_error(tmp_path):
    assert run("--quiet", "calibrate", "--val", tmp_path / "nope.jsonl", "--out", tmp_path / "p.json") == 2


def test_infer_outputs(dataset, params, tmp_path):
    fixture = dataset / "test" / "logits.jsonl"
    sizes = {r["bag_id"]: len(r["logits"]) for r in lines(fixture)}
    out = tmp_path / "soft.jsonl"
    assert run("--quiet", "infer", "--test", fixture, "--params", params["soft", "ordinal-entropy"],
               "--mode", "soft", "--out", out) == 0
    preds = lines(out)
    assert len(preds) == len(sizes)
    for rec in preds:
        jsonschema.validate(rec, schema("prediction"))
        assert len(rec["instance_uncertainties"]) == sizes[rec["bag_id"]]


def test_infer_mil_ignores_measure(dataset, params, tmp_path):
    fixture = dataset / "test" / "logits.jsonl"
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    run("--quiet", "infer", "--test", fixture, "--params", params["soft", "ordinal-entropy"], "--mode", "mil", "--out", a)
    run("--quiet", "infer", "--test", fixture, "--params", params["soft", "entropy"], "--mode", "mil", "--out", b)
    assert a.read_bytes() == b.read_bytes()


def test_infer_line_order_and_workers(dataset, params, tmp_path):
    fixture = dataset / "test" / "logits.jsonl"
    shuffled = tmp_path / "shuffled.jsonl"
    text = fixture.read_text().splitlines()
    order = np.random.default_rng(0).permutation(len(text))
    shuffled.write_text("\n".join(text[i] for i in order) + "\n")
    outs = []
    for src, workers in ((fixture, 1), (shuffled, 1), (fixture, 3)):
        out = tmp_path / f"p{len(outs)}.jsonl"
        assert run("--quiet", "--workers", workers, "infer", "--test", src,
                   "--params", params["hard", "ordinal-entropy"], "--mode", "hard", "--out", out) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_infer_shape_mismatch(tmp_path, params):
    fixture = tmp_path / "f.jsonl"
    fixture.write_text('{"bag_id": "a", "label": 1, "logits": [[[0, 1, 2]]]}\n')
    assert run("--quiet", "infer", "--test", fixture, "--params", params["soft", "entropy"],
               "--out", tmp_path / "o.jsonl") == 1


def test_eval_perfect_and_ci(tmp_path):
    truth = tmp_path / "truth.jsonl"
    preds = tmp_path / "preds.jsonl"
    labels = [1, 2, 3, 4, 5, 3, 1, 4]
    truth.write_text("".join(json.dumps({"bag_id": f"b{i}", "label": c}) + "\n" for i, c in enumerate(labels)))
    preds.write_text("".join(
        json.dumps({"bag_id": f"b{i}", "probs": np.eye(5)[c - 1].tolist(), "predicted": c}) + "\n"
        for i, c in enumerate(labels)
    ))
    out = tmp_path / "r.json"
    assert run("--quiet", "eval", "--preds", preds, "--truth", truth, "--out", out) == 0
    report = json.loads(out.read_text())
    jsonschema.validate(report, schema("eval_report"))
    assert report["kappa_w"] == 1.0 and report["auc"] == 1.0 and "ci" not in report
    assert run("--quiet", "--seed", 4, "eval", "--preds", preds, "--truth", truth, "--bootstrap", 100, "--out", out) == 0
    report = json.loads(out.read_text())
    jsonschema.validate(report, schema("eval_report"))
    assert report["ci"]["kappa_w"]["iterations"] == 100 and report["ci"]["kappa_w"]["seed"] == 4
    first = out.read_bytes()
    run("--quiet", "--seed", 4, "eval", "--preds", preds, "--truth", truth, "--bootstrap", 100, "--out", out)
    assert out.read_bytes() == first


def test_eval_two_class(tmp_path):
    truth = tmp_path / "truth.jsonl"
    preds = tmp_path / "preds.jsonl"
    labels = [1, 2, 2, 1, 2]
    predicted = [1, 2, 1, 1, 2]
    truth.write_text("".join(json.dumps({"bag_id": f"b{i}", "label": c}) + "\n" for i, c in enumerate(labels)))
    preds.write_text("".join(
        json.dumps({"bag_id": f"b{i}", "probs": np.eye(2)[c - 1].tolist(), "predicted": c}) + "\n"
        for i, c in enumerate(predicted)
    ))
    out = tmp_path / "r.json"
    assert run("--quiet", "eval", "--preds", preds, "--truth", truth, "--out", out) == 0
    report = json.loads(out.read_text())
    assert "kappa" in report and "kappa_w" not in report


def test_eval_unmatched(tmp_path, caplog):
    truth = tmp_path / "truth.jsonl"
    preds = tmp_path / "preds.jsonl"
    truth.write_text('{"bag_id": "a", "label": 1}\n{"bag_id": "lonely", "label": 2}\n')
    preds.write_text('{"bag_id": "a", "probs": [1, 0], "predicted": 1}\n')
    assert run("eval", "--preds", preds, "--truth", truth) == 1
    assert "lonely" in caplog.text


def test_eval_on_real_predictions(dataset, params, tmp_path):
    fixture = dataset / "test" / "logits.jsonl"
    out = tmp_path / "p.jsonl"
    run("--quiet", "infer", "--test", fixture, "--mode", "mil", "--out", out)
    report = tmp_path / "r.json"
    assert run("--quiet", "eval", "--preds", out, "--truth", fixture, "--bootstrap", 50, "--out", report) == 0
    jsonschema.validate(json.loads(report.read_text()), schema("eval_report"))


def test_sweep_small(tmp_path):
    outs = []
    for workers in (1, 2):
        out = tmp_path / f"sweep{workers}"
        assert run("--quiet", "--seed", 1, "--workers", workers, "sweep", "--artifact", "noise",
                   "--fractions", "0,0.5", "--n-test", 12, "--n-val", 12, "--bootstrap", 20, "--out", out) == 0
        outs.append(((out / "sweep.csv").read_bytes(), (out / "sweep.json").read_bytes()))
    assert outs[0] == outs[1]
    rows = outs[0][0].decode().splitlines()
    assert rows[0] == "artifact,mode,fraction,kappa_w,kappa_w_lo,kappa_w_hi,auc,auc_lo,auc_hi"
    assert len(rows) - 1 == 2 * 3
    doc = json.loads(outs[0][1])
    jsonschema.validate(doc, schema("sweep"))


def test_sweep_rejects_unsorted(tmp_path):
    assert run("--quiet", "sweep", "--fractions", "0.5,0.1", "--n-test", 4, "--n-val", 4, "--out", tmp_path) == 1


def test_compare_uncertainty(dataset, tmp_path):
    out = tmp_path / "cmp"
    assert run("--quiet", "compare-uncertainty", "--test", dataset, "--out", out) == 0
    report = json.loads((out / "uncertainty_report.json").read_text())
    jsonschema.validate(report, schema("uncertainty_report"))
    assert len(report["measures"]) == 5
    for name in report["measures"]:
        hist = (out / f"density_{name}.csv").read_text().splitlines()
        assert hist[0] == "bin_lo,bin_hi,clean_density,artifact_density"
        assert len(hist) == 51
    first = (out / "uncertainty_report.json").read_bytes()
    run("--quiet", "compare-uncertainty", "--test", dataset, "--out", out)
    assert (out / "uncertainty_report.json").read_bytes() == first


def test_compare_rejects_clean_dataset(tmp_path):
    clean = tmp_path / "clean"
    run("--quiet", "synth", "--out", clean, "--n-bags", 6, "--no-images")
    assert run("--quiet", "compare-uncertainty", "--test", clean, "--out", tmp_path / "o") == 1
