import numpy as np
import pytest

from ubix.oracle import OracleConfig, OracleEnsemble, image_features
from ubix.synth import ArtifactKind, GeneratorConfig, generate_split
from ubix.uncertainty import uncertainty


@pytest.fixture(scope="module")
def oracle():
    return OracleEnsemble()


def collect(oracle, cfg, split="test"):
    logits, stages, flags = [], [], []
    for v in generate_split(cfg, split):
        logits.append(oracle.logits(v.images))
        stages.append(v.latent_stages)
        flags.append([m is not None for m in v.artifact_mask])
    return np.concatenate(logits), np.concatenate(stages), np.concatenate(flags).astype(bool)


def test_clean_instances_classified(oracle):
    logits, stages, _ = collect(oracle, GeneratorConfig(n_bags=25, seed=42))
    assert len(stages) >= 1000
    pred = logits[:1000].mean(axis=1).argmax(axis=1) + 1
    assert np.mean(pred == stages[:1000]) >= 0.95


def test_blinking_instances_are_uncertain(oracle):
    cfg = GeneratorConfig(n_bags=60, seed=42, artifact=ArtifactKind.BLINKING, artifact_fraction=1.0)
    logits, _, flags = collect(oracle, cfg)
    u = uncertainty("ordinal-entropy", logits)
    threshold = np.percentile(u[~flags], 95)
    assert np.mean(u[flags] > threshold) >= 0.90


def test_members_agree_inside_envelope(oracle):
    v = next(generate_split(GeneratorConfig(n_bags=1, seed=3), "test"))
    feats = image_features(v.images)
    assert np.all(oracle.envelope_excess(feats) == 0)


def test_deterministic():
    v = next(generate_split(GeneratorConfig(n_bags=1, seed=1), "test"))
    a = OracleEnsemble(OracleConfig(seed=4)).logits(v.images)
    b = OracleEnsemble(OracleConfig(seed=4)).logits(v.images)
    assert a.tobytes() == b.tobytes()
    assert a.shape == (v.n_instances, 5, 5)
    c = OracleEnsemble(OracleConfig(seed=5)).logits(v.images)
    assert a.tobytes() != c.tobytes()
