"""``ubix`` command line: synth, calibrate, infer, eval, sweep, compare-uncertainty.

Exit codes: 0 on success, 1 on invalid input, 2 on I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from ubix import io
from ubix.core import ValidationError
from ubix.exclusion import InferenceMode, UbixParams, calibrate, infer
from ubix.experiments import (
    DEFAULT_FRACTIONS,
    SweepSpec,
    compare_uncertainty,
    histogram_csv_lines,
    run_sweep,
    simulate_split,
    sweep_csv_lines,
)
from ubix.metrics import evaluate
from ubix.oracle import OracleConfig
from ubix.synth import ArtifactKind, GeneratorConfig, corrupted_bag_indices
from ubix.uncertainty import UncertaintyMeasure

log = logging.getLogger("ubix")

SPLIT_SHARES = (("train", 0.2), ("val", 0.4))


def split_sizes(n_bags: int) -> dict[str, int]:
    sizes = {name: int(round(share * n_bags)) for name, share in SPLIT_SHARES}
    sizes["test"] = n_bags - sum(sizes.values())
    return sizes


def _write_lines(lines, path) -> None:
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_synth(args) -> None:
    gen = GeneratorConfig(
        n_bags=args.n_bags,
        height=args.height,
        width=args.width,
        min_instances=args.min_instances,
        max_instances=args.max_instances,
        seed=args.seed,
        artifact_fraction=args.fraction,
        artifact=args.artifact,
    )
    oracle = OracleConfig(n_models=args.n_models, n_classes=gen.n_classes, seed=args.oracle_seed)
    root = Path(args.out)
    root.mkdir(parents=True, exist_ok=True)
    summary = {"generator": gen.to_dict(), "oracle": oracle.to_dict(), "splits": {}}
    for split, n in split_sizes(args.n_bags).items():
        # Artifacts are injected into the test split only.
        split_gen = gen if split == "test" else replace(gen, artifact_fraction=0.0)
        corrupt = []
        if split == "test" and gen.artifact_fraction > 0:
            corrupt = corrupted_bag_indices(n, gen.artifact_fraction, gen.seed, split, gen.artifact).tolist()
        results = simulate_split(
            split_gen, oracle, split, range(n), corrupt, workers=args.workers, keep_images=not args.no_images
        )
        directory = root / split
        directory.mkdir(exist_ok=True)
        entries = []
        bags = []
        for index, (volume, logits) in enumerate(results):
            if not args.no_images:
                io.write_volume(volume, directory)
            entries.append(io.volume_entry(volume, gen.seed, split, index))
            bags.append((volume.bag_id, volume.label, logits))
        io.write_json(
            {"split": split, "height": gen.height, "width": gen.width, "bags": entries},
            directory / "manifest.json",
        )
        io.write_jsonl(
            ({"bag_id": b, "label": int(y), "logits": l.tolist()} for b, y, l in bags),
            directory / "logits.jsonl",
        )
        summary["splits"][split] = {
            "n_bags": n,
            "corrupted_bags": [int(i) for i in corrupt],
            "images_written": not args.no_images,
        }
        log.info("wrote %s split: %d bags", split, n)
    io.write_json(summary, root / "manifest.json")


def cmd_calibrate(args) -> None:
    bags = io.read_fixture(args.val)
    params = calibrate(bags, args.measure, args.mode)
    params.save(args.out)
    log.info("calibrated %s/%s on %d bags", args.mode, args.measure, len(bags))


def _infer_chunk(payload):
    bags, params, mode = payload
    return [infer(b, params, mode) for b in bags]


def cmd_infer(args) -> None:
    mode = InferenceMode.parse(args.mode)
    params = UbixParams.load(args.params) if args.params else None
    if params is None and mode is not InferenceMode.PLAIN_MIL:
        raise ValidationError(f"mode {mode.value!r} requires --params")
    bags = io.read_fixture(args.test)
    if args.workers > 1 and len(bags) > 1:
        chunks = [bags[i :: args.workers] for i in range(args.workers)]
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            preds = [p for chunk in pool.map(_infer_chunk, [(c, params, mode) for c in chunks]) for p in chunk]
    else:
        preds = _infer_chunk((bags, params, mode))
    io.write_predictions(preds, args.out)
    log.info("wrote %d predictions", len(preds))


def cmd_eval(args) -> None:
    preds = io.read_predictions(args.preds)
    truth = io.read_labels(args.truth)
    pred_ids = {p["bag_id"] for p in preds}
    unmatched = sorted(pred_ids ^ set(truth))
    if unmatched:
        raise ValidationError(f"unmatched bag_ids: {', '.join(unmatched[:20])}")
    preds.sort(key=lambda p: p["bag_id"])
    probs = np.array([p["probs"] for p in preds], dtype=np.float64)
    n_classes = probs.shape[1]
    report = evaluate(
        [truth[p["bag_id"]] for p in preds],
        [p["predicted"] for p in preds],
        probs,
        n_classes,
        bootstrap=args.bootstrap,
        seed=args.seed,
    )
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _parse_fractions(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ValidationError(f"cannot parse fractions {text!r}")


def cmd_sweep(args) -> None:
    kinds = list(ArtifactKind) if args.artifact == "all" else [ArtifactKind.parse(args.artifact)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, runs = [], []
    for kind in kinds:
        spec = SweepSpec(
            artifact=kind,
            fractions=_parse_fractions(args.fractions),
            modes=tuple(args.modes.split(",")),
            measure=args.measure,
            seed=args.seed,
            n_test=args.n_test,
            n_val=args.n_val,
            bootstrap=args.bootstrap,
        )
        result = run_sweep(spec, workers=args.workers)
        rows.extend(result["rows"])
        runs.append(result)
    _write_lines(sweep_csv_lines(rows), out / "sweep.csv")
    io.write_json({"runs": runs}, out / "sweep.json")


def _dataset_split_dir(path: Path) -> Path:
    if (path / "test" / "manifest.json").exists():
        return path / "test"
    return path


def cmd_compare(args) -> None:
    directory = _dataset_split_dir(Path(args.test))
    manifest = io.read_json(directory / "manifest.json")
    bags = io.read_fixture(directory / "logits.jsonl")
    masks = {e["bag_id"]: e["artifact_mask"] for e in manifest["bags"]}
    missing = [b.bag_id for b in bags if b.bag_id not in masks]
    if missing:
        raise ValidationError(f"bags missing from manifest: {missing[:10]}")
    result = compare_uncertainty(bags, [masks[b.bag_id] for b in bags])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(result["report"], out / "uncertainty_report.json")
    for name, (edges, clean_d, art_d) in result["histograms"].items():
        _write_lines(histogram_csv_lines(edges, clean_d, art_d), out / f"density_{name}.csv")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master random seed")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="worker processes")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="ubix", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--quiet", action="store_true", default=False)
    sub = parser.add_subparsers(dest="command", required=True)

    measures = [m.value for m in UncertaintyMeasure]
    modes = [m.value for m in InferenceMode]

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset and oracle logits")
    p.add_argument("--out", required=True)
    p.add_argument("--n-bags", type=int, default=200, help="total bags over train/val/test")
    p.add_argument("--artifact", choices=[k.value for k in ArtifactKind], default="blinking")
    p.add_argument("--fraction", type=float, default=0.0, help="share of test volumes with artifacts")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--min-instances", type=int, default=14)
    p.add_argument("--max-instances", type=int, default=73)
    p.add_argument("--n-models", type=int, default=5)
    p.add_argument("--oracle-seed", type=int, default=0)
    p.add_argument("--no-images", action="store_true", help="skip writing the .f32 volumes")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", parents=[common], help="fit UBIX parameters on a validation fixture")
    p.add_argument("--val", required=True)
    p.add_argument("--measure", choices=measures, default="ordinal-entropy")
    p.add_argument("--mode", choices=modes, default="soft")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("infer", parents=[common], help="bag predictions for a logit fixture")
    p.add_argument("--test", required=True)
    p.add_argument("--params")
    p.add_argument("--mode", choices=modes, default="soft")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="kappa/AUC report for predictions")
    p.add_argument("--preds", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--bootstrap", type=int, default=None, help="bootstrap iterations for CIs")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="robustness versus share of corrupted volumes")
    p.add_argument("--artifact", choices=[k.value for k in ArtifactKind] + ["all"], default="blinking")
    p.add_argument("--fractions", default=",".join(str(f) for f in DEFAULT_FRACTIONS))
    p.add_argument("--modes", default="mil,soft,hard")
    p.add_argument("--measure", choices=measures, default="ordinal-entropy")
    p.add_argument("--n-test", type=int, default=300)
    p.add_argument("--n-val", type=int, default=150)
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare-uncertainty", parents=[common], help="artifact separation per measure")
    p.add_argument("--test", required=True, help="dataset root or split directory written by synth")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except ValidationError as exc:
        log.error("%s", exc)
        return 1
    except OSError as exc:
        log.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
