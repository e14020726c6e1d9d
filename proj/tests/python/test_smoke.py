# SPDX-License-Identifier: Apache-2.0
import math
import os
from pathlib import Path

import numpy as np
import pytest

import dsner

SOURCE = Path(os.environ.get("DSNER_SOURCE_DIR", Path(__file__).resolve().parents[2]))

TOY = [
    "model.hidden=16",
    "model.layers=1",
    "model.heads=2",
    "model.ffn=32",
    "model.max_length=32",
    "robust.epochs=2",
    "robust.weight_update_period=5",
    "robust.lr=0.003",
    "bench.train_size=200",
    "bench.test_size=50",
    "ensemble.members=2",
    "self_train.iterations=1",
]


def test_losses_match_closed_forms():
    probs = np.array([[0.8, 0.2], [0.3, 0.7]])
    labels = [0, 1]
    ce = dsner.ce_loss(probs, labels)
    assert ce["value"] == pytest.approx(-(math.log(0.8) + math.log(0.7)) / 2)
    mae = dsner.mae_loss(probs, labels)
    assert mae["value"] == pytest.approx((0.2 + 0.3) / 2)
    gce = dsner.gce_loss(probs, labels, q=0.7)
    assert gce["value"] == pytest.approx(((1 - 0.8**0.7) + (1 - 0.7**0.7)) / 0.7 / 2)
    assert dsner.gce_loss(probs, labels, q=1.0)["value"] == pytest.approx(mae["value"], abs=1e-12)
    masked = dsner.ce_loss(probs, labels, mask=[1, 0])
    assert masked["contributing"] == 1
    assert masked["grad"][1] == 0.0


def test_soft_labels_worked_example():
    rows, freq, warnings = dsner.soft_labels(np.array([[0.8, 0.2], [0.4, 0.6]]))
    np.testing.assert_allclose(rows, [[0.914286, 0.085714], [0.228571, 0.771429]], atol=5e-7)
    np.testing.assert_allclose(freq, [1.2, 0.8])
    assert warnings == []


def test_span_scoring_and_round_trip():
    assert dsner.decode_entities([1, 1, 0, 2]) == [(0, 2, 1), (3, 4, 2)]
    assert dsner.encode_entities([(0, 2, 1), (3, 4, 2)], 4) == [1, 1, 0, 2]
    r = dsner.score([(0, 2, 1), (3, 4, 1)], [(0, 2, 1), (3, 4, 2)])
    assert (r["precision"], r["recall"], r["f1"]) == (0.5, 0.5, 0.5)
    rep = dsner.evaluate([[1, 1, 0, 1]], [[1, 1, 0, 2]], ["PER", "ORG"])
    assert rep["overall"]["f1"] == 0.5
    assert rep["per_type"]["ORG"]["recall"] == 0.0


def test_distant_labeling_and_augmentation():
    tokens = [["Ann", "visited", "Paris"], ["the", "Acme", "Corp", "hired", "Bob"]]
    gaz = [("Paris", "LOC"), ("Acme Corp", "ORG"), ("Ann", "PER"), ("Bob", "PER")]
    labels = dsner.distant_label(tokens, gaz)
    assert labels == [["PER", "O", "LOC"], ["O", "ORG", "ORG", "O", "PER"]]

    aug = dsner.augment(tokens * 20, mask_rate=0.15, top_k=5, seed=3)
    assert len(aug) == 40
    assert aug == dsner.augment(tokens * 20, mask_rate=0.15, top_k=5, seed=3)
    for orig, new in zip(tokens * 20, aug):
        assert new is not None and len(new) == len(orig)
        assert sum(a != b for a, b in zip(orig, new)) <= 1


def test_recipes():
    r = dsner.load_recipe(SOURCE / "configs" / "default.conf")
    assert r["robust.q"] == "0.7" and r["robust.tau"] == "0.7"
    assert r["ensemble.members"] == "5"
    assert r["augment.top_k"] == "5"
    assert dsner.recipe_hash(overrides=["seed=1"]) != dsner.recipe_hash(overrides=["seed=2"])
    with pytest.raises(dsner.ConfigError):
        dsner.load_recipe(overrides=["robust.qq=1"])


def test_synthetic_benchmark_shapes():
    b = dsner.synthetic_benchmark(overrides=["bench.train_size=50", "bench.test_size=10"])
    assert b["types"] == ["PER", "ORG", "LOC", "MISC"]
    assert len(b["train_tokens"]) == 50 and len(b["test_gold"]) == 10
    assert all(len(t) == len(y) for t, y in zip(b["train_tokens"], b["train_noisy"]))
    assert 0.0 < b["corruption_rate"] < 0.5


def test_pipeline_run_all_and_tagger(tmp_path):
    config = SOURCE / "configs" / "synthetic.conf"
    with pytest.raises(dsner.MissingArtifactError):
        dsner.run_stage("distill", config, tmp_path / "empty", TOY)
    out = dsner.run_all(config, tmp_path / "run", TOY)
    assert [s["stage"] for s in out["stages"]] == list(dsner.STAGES)
    assert Path(out["manifest"]).exists()
    f1 = float(out["stages"][-1]["metrics"]["f1"])
    assert 0.0 <= f1 <= 1.0

    tagger = dsner.Tagger(str(tmp_path / "run" / "self_train" / "model.ckpt"))
    assert len(tagger.types) == 4
    toks = dsner.synthetic_benchmark(config, TOY)["test_tokens"][0]
    probs = tagger.probabilities(toks)
    assert probs.shape == (len(toks), 5)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    assert len(tagger.tag(toks)) == len(toks)
