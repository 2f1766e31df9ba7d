"""Multi-modal feature extractor: image and text encoders mapped into one space.

The feature of an (image, caption) pair is the difference ``z = f_img(image) -
f_txt(caption)``; training pulls matching pairs together by minimising the mean
squared norm of ``z``.
"""

import logging
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import checkpoint
from .captioner import Vocab, he_init, seeded, to_nchw
from .errors import CheckpointError, DivergenceError

log = logging.getLogger(__name__)

FEATURE_DIM = 32


@dataclass
class MfeConfig:
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 0.05
    train_text: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError(f"invalid MFE config {self}")


class MfeModel(nn.Module):
    def __init__(self, vocab, feature_dim=FEATURE_DIM):
        super().__init__()
        self.vocab = vocab
        self.feature_dim = feature_dim
        self.image_encoder = nn.Sequential(
            nn.Conv2d(3, 16, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, padding=1), nn.ReLU(), nn.MaxPool2d(4),
            nn.Flatten(), nn.Linear(32 * 4 * 4, 64), nn.ReLU(), nn.Linear(64, feature_dim))
        self.text_encoder = nn.Sequential(
            nn.Linear(len(vocab), 64), nn.ReLU(), nn.Linear(64, 64), nn.ReLU(),
            nn.Linear(64, feature_dim))
        he_init(self.image_encoder)
        he_init(self.text_encoder)
        nn.init.normal_(self.text_encoder[-1].weight, std=1.0 / np.sqrt(64))
        # image side starts at the zero vector and learns towards the text features
        nn.init.zeros_(self.image_encoder[-1].weight)

    def bag_of_words(self, captions):
        x = torch.zeros(len(captions), len(self.vocab))
        for i, cap in enumerate(captions):
            x[i, self.vocab.encode(cap)] = 1.0
        return x

    def encode_images(self, images):
        """NCHW tensor -> (B, d)."""
        return self.image_encoder(images - 0.5)

    def encode_texts(self, bow):
        return self.text_encoder(bow)

    def forward(self, images, bow):
        return self.encode_images(images) - self.encode_texts(bow)


def build_mfe(vocab, seed, feature_dim=FEATURE_DIM):
    if not isinstance(vocab, Vocab):
        vocab = Vocab(list(vocab))
    with seeded(seed):
        return MfeModel(vocab, feature_dim)


@torch.no_grad()
def encode_image(mfe, image):
    return mfe.encode_images(to_nchw(image))[0].numpy()


@torch.no_grad()
def encode_text(mfe, tokens):
    return mfe.encode_texts(mfe.bag_of_words([tokens]))[0].numpy()


def extract_feature(mfe, image, tokens):
    return encode_image(mfe, image) - encode_text(mfe, tokens)


@torch.no_grad()
def extract_features(mfe, images, captions, batch_size=256):
    """z vectors for parallel lists of images and token lists, shape (N, d)."""
    out = []
    for s in range(0, len(captions), batch_size):
        x = to_nchw(images[s:s + batch_size])
        out.append(mfe(x, mfe.bag_of_words(captions[s:s + batch_size])).numpy())
    return np.concatenate(out) if out else np.zeros((0, mfe.feature_dim), np.float32)


def mfe_loss(z):
    """Mean squared Euclidean norm of the rows of ``z``."""
    if isinstance(z, torch.Tensor):
        return (z ** 2).sum(dim=-1).mean()
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[None]
    return float((z ** 2).sum(axis=1).mean())


def pretrain_mfe(mfe, pairs, cfg):
    """SGD on the alignment loss over ground-truth pairs. Returns ``(mfe, loss_history)``.

    By default only the image encoder is updated and the text encoder stays at
    its initialisation: with matching pairs only, letting both sides move
    collapses every feature onto one point.
    """
    if not pairs:
        raise ValueError("no public pairs")
    images = to_nchw([p.image for p in pairs])
    bow = mfe.bag_of_words([p.caption for p in pairs])
    params = list(mfe.image_encoder.parameters())
    if cfg.train_text:
        params += list(mfe.text_encoder.parameters())
    history = []
    n = len(pairs)
    for epoch in range(cfg.epochs):
        order = torch.from_numpy(np.random.default_rng([cfg.seed, epoch]).permutation(n))
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss = mfe_loss(mfe(images[idx], bow[idx]))
            if not torch.isfinite(loss):
                raise DivergenceError(epoch + 1)
            mfe.zero_grad()
            loss.backward()
            with torch.no_grad():
                for p in params:
                    p -= cfg.learning_rate * p.grad
            total += loss.item() * len(idx)
        history.append(total / n)
        if not np.isfinite(history[-1]):
            raise DivergenceError(epoch + 1)
        log.debug("mfe epoch %d loss %.5f", epoch + 1, history[-1])
    return mfe, history


def save_mfe(mfe, path):
    meta = {"vocab": mfe.vocab.tokens, "vocab_hash": checkpoint.vocab_hash(mfe.vocab.tokens),
            "feature_dim": mfe.feature_dim}
    checkpoint.save(path, "mfe", meta, mfe.state_dict())


def load_mfe(path):
    meta, state = checkpoint.load(path, "mfe")
    if checkpoint.vocab_hash(meta["vocab"]) != meta["vocab_hash"]:
        raise CheckpointError(f"{path}: vocabulary hash mismatch")
    mfe = MfeModel(Vocab(meta["vocab"]), meta["feature_dim"])
    checkpoint.load_into(mfe, state, path)
    return mfe
