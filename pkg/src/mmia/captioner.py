"""Toy encoder-decoder captioning models: conv encoder, GRU decoder, greedy decoding.

Two encoder architectures stand in for the large pretrained backbones:

* ``R``: deep-narrow, four conv blocks, 64-d image embedding
* ``V``: shallow-wide, two conv blocks, 128-d image embedding

Both feed a single-layer GRU decoder whose initial state is computed from the
image embedding.
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn
from torch.func import functional_call, grad, vmap

from . import checkpoint
from .defenses import DpConfig, augment_image, dp_sgd_step, l2_penalty
from .errors import CheckpointError, DivergenceError

log = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)
ARCHS = ("R", "V")
HIDDEN = 64
WORD_DIM = 32
MAX_LEN = 12
# a batch loss this many times the uniform-guess loss log(V) counts as divergence
DIVERGENCE_FACTOR = 100.0


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 0.5
    weight_decay: float = 0.0
    augment: bool = False
    dp: Optional[DpConfig] = None
    seed: int = 0
    # global gradient-norm cap for non-private training; 0 disables it
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be >= 0")


class Vocab:
    def __init__(self, words):
        words = [w for w in words if w not in SPECIALS]
        if not words:
            raise ValueError("vocabulary is empty")
        if len(set(words)) != len(words):
            raise ValueError("duplicate vocabulary entries")
        self.tokens = list(SPECIALS) + words
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def from_captions(cls, captions):
        return cls(sorted({w for c in captions for w in c}))

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def encode(self, tokens):
        unk = self.index[UNK]
        return [self.index.get(t, unk) for t in tokens]

    def decode(self, ids):
        out = []
        for i in ids:
            tok = self.tokens[i]
            if tok == EOS:
                break
            if tok not in SPECIALS:
                out.append(tok)
        return out


@contextmanager
def seeded(seed):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def conv_encoder(arch):
    if arch == "R":
        chans, layers = (3, 16, 32, 32, 64), []
        for cin, cout in zip(chans, chans[1:]):
            layers += [nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2)]
        net, dim = nn.Sequential(*layers, nn.Flatten(), nn.Linear(64 * 2 * 2, 64)), 64
    elif arch == "V":
        net, dim = nn.Sequential(
            nn.Conv2d(3, 32, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(32, 64, 3, padding=1), nn.ReLU(), nn.MaxPool2d(4),
            nn.Flatten(), nn.Linear(64 * 4 * 4, 128)), 128
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    he_init(net)
    return net, dim


def he_init(net):
    # torch's default init shrinks activations through stacked ReLU convs
    for m in net.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            nn.init.zeros_(m.bias)


class GRUCell(nn.Module):
    def __init__(self, input_size, hidden_size):
        super().__init__()
        self.x2h = nn.Linear(input_size, 3 * hidden_size)
        self.h2h = nn.Linear(hidden_size, 3 * hidden_size)

    def forward(self, x, h):
        xr, xz, xn = self.x2h(x).chunk(3, dim=-1)
        hr, hz, hn = self.h2h(h).chunk(3, dim=-1)
        r = torch.sigmoid(xr + hr)
        z = torch.sigmoid(xz + hz)
        n = torch.tanh(xn + r * hn)
        return (1 - z) * n + z * h


class CaptionModel(nn.Module):
    def __init__(self, arch, vocab):
        super().__init__()
        self.arch = arch
        self.vocab = vocab
        self.trained_epochs = 0
        self.encoder, feat_dim = conv_encoder(arch)
        self.init_h = nn.Linear(feat_dim, HIDDEN)
        self.embed = nn.Embedding(len(vocab), WORD_DIM)
        self.cell = GRUCell(WORD_DIM + HIDDEN, HIDDEN)
        self.out = nn.Linear(2 * HIDDEN, len(vocab))

    def image_context(self, images):
        # pixels are in [0, 1]; centre them before the conv stack
        return torch.tanh(self.init_h(torch.relu(self.encoder((images - 0.5) * 4.0))))

    def step(self, tokens, h, ctx):
        h = self.cell(torch.cat([self.embed(tokens), ctx], dim=-1), h)
        return h, self.out(torch.cat([h, ctx], dim=-1))

    def forward(self, images, inputs):
        """Teacher-forced logits, shape (B, T, V), for NCHW images and (B, T) input ids."""
        ctx = self.image_context(images)
        h = ctx
        logits = []
        for t in range(inputs.shape[1]):
            h, o = self.step(inputs[:, t], h, ctx)
            logits.append(o)
        return torch.stack(logits, dim=1)


def build_model(arch, vocab, seed):
    if not isinstance(vocab, Vocab):
        vocab = Vocab(list(vocab))
    with seeded(seed):
        return CaptionModel(arch, vocab)


def to_nchw(images):
    arr = np.stack(images) if isinstance(images, (list, tuple)) else np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2), dtype=np.float32))


def encode_captions(vocab, captions, max_len=MAX_LEN):
    """Input ids ``[BOS, w...]`` and targets ``[w..., EOS]``, PAD-filled to max_len + 1."""
    n, t = len(captions), max_len + 1
    inp = torch.full((n, t), vocab.index[PAD], dtype=torch.long)
    tgt = torch.full((n, t), vocab.index[PAD], dtype=torch.long)
    for i, cap in enumerate(captions):
        ids = vocab.encode(cap[:max_len])
        inp[i, :len(ids) + 1] = torch.tensor([vocab.index[BOS]] + ids)
        tgt[i, :len(ids) + 1] = torch.tensor(ids + [vocab.index[EOS]])
    return inp, tgt


def token_loss(logits, targets, pad):
    """Token-averaged cross-entropy per sample, shape (B,)."""
    ce = nn.functional.cross_entropy(logits.transpose(1, 2), targets, ignore_index=pad,
                                     reduction="none")
    mask = (targets != pad).to(ce.dtype)
    return (ce * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1)


def per_sample_loss(model, images, inputs, targets):
    return token_loss(model(images, inputs), targets, model.vocab.index[PAD])


def batch_loss(model, images, inputs, targets, weight_decay=0.0):
    loss = per_sample_loss(model, images, inputs, targets).mean()
    if weight_decay > 0:
        loss = loss + l2_penalty(model.parameters(), weight_decay)
    return loss


def per_sample_grads(model, images, inputs, targets):
    """Per-sample loss gradients flattened into a (B, P) matrix."""
    params = {k: v.detach() for k, v in model.named_parameters()}
    pad = model.vocab.index[PAD]

    def one(p, img, inp, tgt):
        logits = functional_call(model, p, (img[None], inp[None]))
        return token_loss(logits, tgt[None], pad).sum()

    grads = vmap(grad(one), in_dims=(None, 0, 0, 0))(params, images, inputs, targets)
    return torch.cat([g.reshape(g.shape[0], -1) for g in grads.values()], dim=1)


def _sgd_update(model, flat_grad, lr, weight_decay):
    offset = 0
    with torch.no_grad():
        for p in model.parameters():
            g = flat_grad[offset:offset + p.numel()].view_as(p)
            offset += p.numel()
            if weight_decay > 0:
                g = g + 2 * weight_decay * p
            p -= lr * g


def train(model, pairs, cfg):
    """Mini-batch SGD on next-token cross-entropy. Returns ``(model, loss_history)``."""
    if not pairs:
        raise ValueError("no training pairs")
    images = np.stack([p.image for p in pairs])
    inputs, targets = encode_captions(model.vocab, [p.caption for p in pairs])
    noise_gen = torch.Generator().manual_seed(cfg.dp.seed if cfg.dp else cfg.seed)
    params = list(model.parameters())
    history = []
    n = len(pairs)
    limit = DIVERGENCE_FACTOR * np.log(len(model.vocab))

    def check(loss, epoch):
        if not torch.isfinite(loss) or loss.item() > limit:
            raise DivergenceError(epoch + 1)

    model.train()
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if cfg.augment:
                rng = np.random.default_rng([cfg.seed, epoch, start, 1])
                batch_img = to_nchw([augment_image(images[i], rng) for i in idx])
            else:
                batch_img = to_nchw(images[idx])
            ti = torch.from_numpy(idx)
            inp, tgt = inputs[ti], targets[ti]
            if cfg.dp is not None:
                with torch.no_grad():
                    loss = batch_loss(model, batch_img, inp, tgt, cfg.weight_decay)
                check(loss, epoch)
                g = dp_sgd_step(per_sample_grads(model, batch_img, inp, tgt), cfg.dp, noise_gen)
                _sgd_update(model, g, cfg.learning_rate, cfg.weight_decay)
            else:
                loss = batch_loss(model, batch_img, inp, tgt, cfg.weight_decay)
                check(loss, epoch)
                model.zero_grad()
                loss.backward()
                if cfg.grad_clip > 0:
                    nn.utils.clip_grad_norm_(params, cfg.grad_clip)
                with torch.no_grad():
                    for p in params:
                        p -= cfg.learning_rate * p.grad
            total += loss.item() * len(idx)
        mean = total / n
        if not np.isfinite(mean) or not all(torch.isfinite(p).all() for p in params):
            raise DivergenceError(epoch + 1)
        history.append(mean)
        model.trained_epochs += 1
        log.debug("epoch %d loss %.4f", epoch + 1, mean)
    model.eval()
    return model, history


@torch.no_grad()
def caption_batch(model, images, max_len=MAX_LEN, batch_size=256):
    """Greedy decoding for a list/array of HxWxC images."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if model.trained_epochs == 0:
        log.warning("captioning with an untrained %s model", model.arch)
    images = np.asarray(images) if not isinstance(images, list) else images
    eos, bos = model.vocab.index[EOS], model.vocab.index[BOS]
    results = []
    for start in range(0, len(images), batch_size):
        x = to_nchw(images[start:start + batch_size])
        ctx = model.image_context(x)
        h = ctx
        tok = torch.full((x.shape[0],), bos, dtype=torch.long)
        steps = []
        for _ in range(max_len):
            h, logits = model.step(tok, h, ctx)
            tok = logits.argmax(dim=-1)
            steps.append(tok)
        ids = torch.stack(steps, dim=1).tolist()
        results += [model.vocab.decode(row + [eos]) for row in ids]
    return results


def caption(model, image, max_len=MAX_LEN):
    return caption_batch(model, [image], max_len)[0]


def save_checkpoint(model, path):
    meta = {"arch": model.arch, "vocab": model.vocab.tokens,
            "vocab_hash": checkpoint.vocab_hash(model.vocab.tokens),
            "trained_epochs": model.trained_epochs}
    checkpoint.save(path, "caption_model", meta, model.state_dict())


def load_checkpoint(path, arch=None):
    meta, state = checkpoint.load(path, "caption_model")
    if arch is not None and meta["arch"] != arch:
        raise CheckpointError(f"{path}: architecture {meta['arch']} != requested {arch}")
    if checkpoint.vocab_hash(meta["vocab"]) != meta["vocab_hash"]:
        raise CheckpointError(f"{path}: vocabulary hash mismatch")
    try:
        model = CaptionModel(meta["arch"], Vocab(meta["vocab"]))
    except ValueError as e:
        raise CheckpointError(f"{path}: {e}") from e
    checkpoint.load_into(model, state, path)
    model.trained_epochs = meta["trained_epochs"]
    model.eval()
    return model
