import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from mmia.errors import PerplexityError, SingleClassError
from mmia.evalkit import (AttackReport, attack_accuracy, emit_report, mann_whitney_auc,
                          read_predictions, read_roc, roc_curve, tsne_2d)


def test_accuracy_examples():
    assert attack_accuracy([1, 0], [1, 0]) == 1.0
    assert attack_accuracy([1, 0], [0, 1]) == 0.0
    assert attack_accuracy([1, 1, 0, 0], [1, 1, 0, 1]) == 0.75
    with pytest.raises(ValueError):
        attack_accuracy([1], [1, 0])


def test_auc_examples():
    assert roc_curve([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]).auc == 1.0
    assert roc_curve([0.9, 0.8, 0.2, 0.1], [1, 0, 1, 0]).auc == pytest.approx(0.75)
    with pytest.raises(SingleClassError):
        roc_curve([0.1, 0.2], [1, 1])


def test_auc_null():
    rng = np.random.default_rng(0)
    auc = roc_curve(rng.uniform(size=1000), rng.integers(0, 2, 1000)).auc
    assert 0.45 <= auc <= 0.55


def _check_monotone(roc):
    assert roc.fpr[0] == 0.0 and roc.tpr[0] == 0.0
    assert roc.fpr[-1] == 1.0 and roc.tpr[-1] == 1.0
    assert all(a <= b for a, b in zip(roc.fpr, roc.fpr[1:]))
    assert all(a <= b for a, b in zip(roc.tpr, roc.tpr[1:]))
    assert all(a >= b for a, b in zip(roc.thresholds, roc.thresholds[1:]))


def test_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(2, 60))
        truths = rng.integers(0, 2, n)
        truths[:2] = [0, 1]
        # coarse values so ties are common
        values = rng.integers(0, 6, n) / 5.0
        roc = roc_curve(values, truths)
        assert abs(roc.auc - oracles.pairwise_auc(values, truths)) <= 1e-9
        assert abs(mann_whitney_auc(values, truths) - roc.auc) <= 1e-9
        _check_monotone(roc)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(-5, 5, allow_nan=False), st.integers(0, 1)), min_size=2,
                max_size=40).filter(lambda r: len({t for _, t in r}) == 2))
def test_roc_invariants(rows):
    values, truths = zip(*rows)
    roc = roc_curve(values, truths)
    _check_monotone(roc)
    assert 0.0 <= roc.auc <= 1.0
    assert roc.auc == pytest.approx(oracles.pairwise_auc(values, truths), abs=1e-9)
    # flipping the scores mirrors the AUC
    assert roc_curve([-v for v in values], truths).auc == pytest.approx(1 - roc.auc, abs=1e-9)


def test_tsne_shape_determinism_and_separation():
    rng = np.random.default_rng(0)
    x = np.r_[rng.normal(0, 1, (60, 10)), rng.normal(8, 1, (60, 10))]
    y = np.r_[np.zeros(60), np.ones(60)]
    a = tsne_2d(x, perplexity=10, iters=1000, seed=1)
    assert a.shape == (120, 2)
    np.testing.assert_array_equal(a, tsne_2d(x, perplexity=10, iters=1000, seed=1))
    assert _best_linear_accuracy(a, y) >= 0.95


def _best_linear_accuracy(points, y):
    # sweep directions and cut points; exhaustive enough for two dimensions
    best = 0.0
    for angle in np.linspace(0, np.pi, 360, endpoint=False):
        proj = points @ np.array([np.cos(angle), np.sin(angle)])
        for cut in proj:
            acc = np.mean((proj >= cut) == (y == 1))
            best = max(best, acc, 1 - acc)
    return best


def test_tsne_rejects_tiny_input():
    with pytest.raises(PerplexityError):
        tsne_2d(np.zeros((10, 3)), perplexity=30)


def _report():
    rng = np.random.default_rng(2)
    truths = [1] * 40 + [0] * 40
    values = list(rng.normal(np.array(truths) * 0.5, 1.0))
    return AttackReport("fb", [f"id{i}" for i in range(80)], values,
                        [int(v > 0.25) for v in values], truths, value_name="prob",
                        scenario="FRFR")


def test_emit_report_files(tmp_path):
    rep = _report()
    feats = np.random.default_rng(3).normal(size=(80, 5))
    out = emit_report(rep, tmp_path / "r", features=feats, perplexity=5, tsne_iters=100)
    for name in ("predictions.csv", "roc.csv", "summary.json", "roc_linear.png", "roc_log.png",
                 "features_2d.csv", "features_2d.png"):
        assert (out / name).exists(), name
    back = read_predictions(out / "predictions.csv")
    assert back["ids"] == rep.ids and back["values"] == rep.values
    assert back["preds"] == rep.preds and back["truths"] == rep.truths
    roc = read_roc(out / "roc.csv")
    assert roc.auc == rep.roc.auc and roc.fpr == rep.roc.fpr
    _check_monotone(roc)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["accuracy"] == rep.accuracy and summary["n"] == 80


def test_reemission_is_byte_identical(tmp_path):
    feats = np.random.default_rng(3).normal(size=(80, 5))
    a = emit_report(_report(), tmp_path / "a", features=feats, perplexity=5, tsne_iters=50)
    b = emit_report(_report(), tmp_path / "b", features=feats, perplexity=5, tsne_iters=50)
    for f in sorted(p.name for p in a.iterdir()):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_report_without_truth():
    rep = AttackReport("mb", ["a"], [0.3], [0], [None])
    assert np.isnan(rep.accuracy) and rep.roc is None
    with pytest.raises(ValueError):
        AttackReport("mb", ["a", "b"], [0.3], [0], [None])
