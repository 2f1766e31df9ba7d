import numpy as np
import pytest
import torch

import oracles
from mmia.captioner import Vocab
from mmia.errors import FormatError, SingleClassError
from mmia.fb_attack import (AttackConfig, AttackDataset, bce_loss, build_attack_dataset,
                            build_attack_mlp, infer_fb, label_from_prob, load_attack_mlp,
                            predict_proba, read_features, run_fb_attack, save_attack_mlp,
                            train_attack, write_features)
from mmia.mfe import MfeConfig, build_mfe, pretrain_mfe
from mmia.synthdata import CorpusSpec, generate_corpus


def _blobs(n=60, d=8, gap=2.0, seed=0):
    rng = np.random.default_rng(seed)
    z = np.r_[rng.normal(gap, 1, (n, d)), rng.normal(-gap, 1, (n, d))].astype(np.float32)
    y = np.r_[np.ones(n), np.zeros(n)].astype(np.float32)
    return AttackDataset([f"s{i}" for i in range(2 * n)], z, y)


@pytest.fixture(scope="module")
def mfe():
    public = generate_corpus(CorpusSpec("F", 200, 9))
    vocab = Vocab.from_captions([p.caption for p in public])
    return pretrain_mfe(build_mfe(vocab, 0), public, MfeConfig(epochs=20))[0]


def test_mlp_shapes():
    mlp = build_attack_mlp(32, 0)
    shapes = [tuple(p.shape) for p in mlp.parameters()]
    assert shapes == [(256, 32), (256,), (20, 256), (20,), (1, 20), (1,)]
    p = predict_proba(mlp, np.zeros((5, 32)))
    assert p.shape == (5,) and np.all((p > 0) & (p < 1))


def test_label_rule():
    assert label_from_prob(0.7) == "member"
    assert label_from_prob(0.3) == "nonmember"
    assert label_from_prob(0.5) == "nonmember"


def test_training_separable_and_deterministic():
    ds = _blobs()
    cfg = AttackConfig(epochs=30, seed=1)
    mlp, hist = train_attack(build_attack_mlp(8, 1), ds, cfg)
    assert hist[-1] < hist[0]
    acc = np.mean((predict_proba(mlp, ds.z) > 0.5) == ds.labels)
    assert acc > 0.95
    _, hist2 = train_attack(build_attack_mlp(8, 1), ds, cfg)
    assert hist == hist2
    prob, label = infer_fb(mlp, ds.z[0])
    assert label == label_from_prob(prob)


def test_single_class_rejected():
    ds = _blobs()
    ds.labels[:] = 1
    with pytest.raises(SingleClassError):
        train_attack(build_attack_mlp(8, 0), ds, AttackConfig(epochs=1))


def test_shuffled_labels_give_chance():
    accs = []
    for seed in range(5):
        # classes share one distribution, so nothing can be learned
        train = _blobs(gap=0.0, seed=seed)
        test = _blobs(gap=0.0, seed=100 + seed)
        train.labels = np.random.default_rng(seed).permutation(train.labels)
        mlp, _ = train_attack(build_attack_mlp(8, seed), train, AttackConfig(epochs=20, seed=seed))
        accs.append(np.mean((predict_proba(mlp, test.z) > 0.5) == test.labels))
    assert abs(np.mean(accs) - 0.5) <= 0.1


def test_gradient_check():
    ds = _blobs(n=10)
    mlp = build_attack_mlp(8, 0).double()
    z = torch.from_numpy(ds.z).double()
    y = torch.from_numpy(ds.labels).double()
    assert oracles.central_fd_check(lambda: bce_loss(mlp, z, y), list(mlp.parameters())) >= 0.95


def test_attack_dataset_on_overfit_shadow(mfe, overfit_v, f_members, f_nonmembers):
    model, _ = overfit_v
    ds = build_attack_dataset(mfe, model, f_members, f_nonmembers)
    assert len(ds) == len(f_members) + len(f_nonmembers)
    assert ds.z.shape == (len(ds), mfe.feature_dim)
    again = build_attack_dataset(mfe, model, f_members, f_nonmembers)
    np.testing.assert_array_equal(ds.z, again.z)
    norms = np.linalg.norm(ds.z, axis=1)
    assert norms[ds.labels == 1].mean() < norms[ds.labels == 0].mean()


def test_run_fb_attack_report(mfe, overfit_v, f_members, f_nonmembers):
    model, _ = overfit_v
    ds = build_attack_dataset(mfe, model, f_members, f_nonmembers)
    mlp, _ = train_attack(build_attack_mlp(ds.z.shape[1], 0), ds, AttackConfig(epochs=5))
    pairs = f_members[:10] + f_nonmembers[:10]
    report, z = run_fb_attack(mfe, model, pairs, mlp, [1] * 10 + [0] * 10, "FVFV")
    assert len(report.ids) == 20 and z.shape == (20, mfe.feature_dim)
    assert report.preds == [int(v > 0.5) for v in report.values]
    assert 0.0 <= report.accuracy <= 1.0
    again, _ = run_fb_attack(mfe, model, pairs, mlp, [1] * 10 + [0] * 10, "FVFV")
    assert again.values == report.values


def test_persistence(tmp_path):
    ds = _blobs(n=5)
    mlp = build_attack_mlp(8, 0)
    save_attack_mlp(mlp, tmp_path / "a.ckpt")
    back = load_attack_mlp(tmp_path / "a.ckpt")
    np.testing.assert_array_equal(predict_proba(back, ds.z), predict_proba(mlp, ds.z))
    write_features(ds.ids, ds.z, [1, 0, None] + [1] * 7, tmp_path / "f.csv")
    ids, z, labels = read_features(tmp_path / "f.csv")
    assert ids == ds.ids and labels[:3] == [1, 0, None]
    np.testing.assert_array_equal(z, ds.z)
    (tmp_path / "bad.csv").write_text("x,y\n")
    with pytest.raises(FormatError):
        read_features(tmp_path / "bad.csv")
