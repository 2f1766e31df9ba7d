import numpy as np
import pytest
import torch

import oracles
from mmia.captioner import Vocab, to_nchw
from mmia.errors import CheckpointError
from mmia.mfe import (MfeConfig, build_mfe, encode_image, encode_text, extract_feature,
                      extract_features, load_mfe, mfe_loss, pretrain_mfe, save_mfe)
from mmia.synthdata import CorpusSpec, generate_corpus


@pytest.fixture(scope="module")
def pairs():
    return generate_corpus(CorpusSpec("C", 100, 2))


@pytest.fixture(scope="module")
def vocab(pairs):
    return Vocab.from_captions([p.caption for p in pairs])


@pytest.fixture(scope="module")
def trained(pairs, vocab):
    return pretrain_mfe(build_mfe(vocab, 0), pairs, MfeConfig(epochs=100, seed=0))


def test_loss_examples():
    assert mfe_loss(np.zeros((3, 4))) == 0.0
    assert mfe_loss([3.0, 4.0]) == 25.0
    assert mfe_loss([[1.0, 0.0], [0.0, 2.0]]) == 2.5
    assert mfe_loss(torch.tensor([[1.0, 0.0], [0.0, 2.0]])).item() == 2.5


def test_feature_is_difference(pairs, vocab):
    mfe = build_mfe(vocab, 1)
    p = pairs[0]
    z = extract_feature(mfe, p.image, p.caption)
    assert z.shape == (mfe.feature_dim,)
    np.testing.assert_allclose(z, encode_image(mfe, p.image) - encode_text(mfe, p.caption), atol=1e-6)
    batch = extract_features(mfe, [q.image for q in pairs[:5]], [q.caption for q in pairs[:5]])
    np.testing.assert_allclose(batch[0], z, atol=1e-6)
    assert np.isfinite(encode_image(mfe, np.zeros_like(p.image))).all()


def test_aligned_encoders_give_zero(pairs, vocab):
    # force both sides to the same constant vector
    mfe = build_mfe(vocab, 0)
    with torch.no_grad():
        for lin in (mfe.image_encoder[-1], mfe.text_encoder[-1]):
            lin.weight.zero_()
            lin.bias.fill_(0.25)
    assert np.all(extract_feature(mfe, pairs[0].image, pairs[0].caption) == 0.0)


def test_oov_maps_to_unk(vocab):
    mfe = build_mfe(vocab, 0)
    np.testing.assert_array_equal(encode_text(mfe, ["qqq"]), encode_text(mfe, ["<unk>"]))


def _np_conv(x, w, b):
    # x: (C, H, W); w: (O, C, 3, 3); zero padding 1
    c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros((w.shape[0], h, wd))
    for i in range(3):
        for j in range(3):
            out += np.einsum("oc,chw->ohw", w[:, :, i, j], xp[:, i:i + h, j:j + wd])
    return out + b[:, None, None]


def _np_pool(x, k):
    c, h, w = x.shape
    return x.reshape(c, h // k, k, w // k, k).max(axis=(2, 4))


def test_forward_matches_numpy_oracle(pairs, vocab):
    mfe = build_mfe(vocab, 4).double()
    with torch.no_grad():
        mfe.image_encoder[-1].weight.normal_(0, 0.1)
    p = {k: v.numpy() for k, v in mfe.state_dict().items()}
    img = pairs[3].image.astype(np.float64).transpose(2, 0, 1) - 0.5
    relu = lambda a: np.maximum(a, 0)
    h = _np_pool(relu(_np_conv(img, p["image_encoder.0.weight"], p["image_encoder.0.bias"])), 2)
    h = _np_pool(relu(_np_conv(h, p["image_encoder.3.weight"], p["image_encoder.3.bias"])), 4)
    h = relu(p["image_encoder.7.weight"] @ h.reshape(-1) + p["image_encoder.7.bias"])
    f_img = p["image_encoder.9.weight"] @ h + p["image_encoder.9.bias"]
    bow = np.zeros(len(vocab))
    bow[vocab.encode(pairs[3].caption)] = 1.0
    t = relu(p["text_encoder.0.weight"] @ bow + p["text_encoder.0.bias"])
    t = relu(p["text_encoder.2.weight"] @ t + p["text_encoder.2.bias"])
    f_txt = p["text_encoder.4.weight"] @ t + p["text_encoder.4.bias"]
    with torch.no_grad():
        z = mfe(to_nchw(pairs[3].image).double(), mfe.bag_of_words([pairs[3].caption]).double())
    np.testing.assert_allclose(z[0].numpy(), f_img - f_txt, rtol=1e-9, atol=1e-12)


def test_pretraining_lowers_loss(trained):
    _, history = trained
    assert history[-1] < history[0]


def test_pretraining_deterministic(pairs, vocab):
    cfg = MfeConfig(epochs=2, seed=7)
    h1 = pretrain_mfe(build_mfe(vocab, 0), pairs, cfg)[1]
    h2 = pretrain_mfe(build_mfe(vocab, 0), pairs, cfg)[1]
    assert h1 == h2


def test_text_encoder_frozen_by_default(pairs, vocab):
    mfe = build_mfe(vocab, 0)
    before = {k: v.clone() for k, v in mfe.text_encoder.state_dict().items()}
    pretrain_mfe(mfe, pairs[:20], MfeConfig(epochs=1))
    for k, v in mfe.text_encoder.state_dict().items():
        assert torch.equal(v, before[k])


def test_matched_pairs_closer_than_mismatched(trained, pairs):
    mfe, _ = trained
    imgs = [p.image for p in pairs]
    matched = mfe_loss(extract_features(mfe, imgs, [p.caption for p in pairs]))
    rolled = [pairs[(i + 1) % len(pairs)].caption for i in range(len(pairs))]
    mismatched = mfe_loss(extract_features(mfe, imgs, rolled))
    assert matched < mismatched


def test_gradient_check(pairs, vocab):
    mfe = build_mfe(vocab, 0).double()
    with torch.no_grad():
        mfe.image_encoder[-1].weight.normal_(0, 0.1)
    x = to_nchw([p.image for p in pairs[:4]]).double()
    bow = mfe.bag_of_words([p.caption for p in pairs[:4]]).double()
    frac = oracles.central_fd_check(lambda: mfe_loss(mfe(x, bow)), list(mfe.parameters()))
    assert frac >= 0.95


def test_save_load(tmp_path, trained, pairs):
    mfe, _ = trained
    save_mfe(mfe, tmp_path / "mfe.ckpt")
    back = load_mfe(tmp_path / "mfe.ckpt")
    p = pairs[0]
    np.testing.assert_array_equal(extract_feature(back, p.image, p.caption),
                                  extract_feature(mfe, p.image, p.caption))
    (tmp_path / "bad.ckpt").write_bytes(b"junk")
    with pytest.raises(CheckpointError):
        load_mfe(tmp_path / "bad.ckpt")
