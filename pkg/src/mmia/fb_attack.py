"""Feature-based membership inference.

The shadow model captions its own members and non-members; the feature
extractor turns each (image, generated caption) pair into a difference vector
``z``; a small MLP learns to separate member from non-member vectors and is
then applied to the target model's captions.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import checkpoint
from .captioner import MAX_LEN, caption_batch, seeded
from .errors import DivergenceError, FormatError, SingleClassError
from .evalkit import AttackReport
from .mfe import extract_features

log = logging.getLogger(__name__)


@dataclass
class AttackConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-2
    seed: int = 0


@dataclass
class AttackDataset:
    ids: list
    z: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.ids)


class AttackMlp(nn.Module):
    def __init__(self, in_dim):
        super().__init__()
        self.in_dim = in_dim
        self.net = nn.Sequential(nn.Linear(in_dim, 256), nn.ReLU(), nn.Linear(256, 20), nn.ReLU(),
                                 nn.Linear(20, 1))

    def logits(self, z):
        return self.net(z).squeeze(-1)

    def forward(self, z):
        return torch.sigmoid(self.logits(z))


def build_attack_mlp(in_dim, seed):
    with seeded(seed):
        return AttackMlp(in_dim)


def generated_features(mfe, model, pairs, max_len=MAX_LEN):
    caps = caption_batch(model, [p.image for p in pairs], max_len) if pairs else []
    return extract_features(mfe, [p.image for p in pairs], caps), caps


def build_attack_dataset(mfe, shadow_model, shadow_member, shadow_nonmember, max_len=MAX_LEN):
    zm, _ = generated_features(mfe, shadow_model, shadow_member, max_len)
    zn, _ = generated_features(mfe, shadow_model, shadow_nonmember, max_len)
    return AttackDataset([p.id for p in shadow_member] + [p.id for p in shadow_nonmember],
                         np.concatenate([zm, zn]).astype(np.float32),
                         np.r_[np.ones(len(zm)), np.zeros(len(zn))].astype(np.float32))


def bce_loss(mlp, z, y):
    return nn.functional.binary_cross_entropy_with_logits(mlp.logits(z), y)


def train_attack(mlp, dataset, cfg):
    """Mini-batch SGD on binary cross-entropy. Returns ``(mlp, loss_history)``."""
    if len(set(dataset.labels.tolist())) != 2:
        raise SingleClassError("attack dataset needs members and non-members")
    z = torch.from_numpy(dataset.z)
    y = torch.from_numpy(dataset.labels)
    params = list(mlp.parameters())
    history = []
    n = len(dataset)
    for epoch in range(cfg.epochs):
        order = torch.from_numpy(np.random.default_rng([cfg.seed, epoch]).permutation(n))
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss = bce_loss(mlp, z[idx], y[idx])
            if not torch.isfinite(loss):
                raise DivergenceError(epoch + 1)
            mlp.zero_grad()
            loss.backward()
            with torch.no_grad():
                for p in params:
                    p -= cfg.learning_rate * p.grad
            total += loss.item() * len(idx)
        history.append(total / n)
    return mlp, history


@torch.no_grad()
def predict_proba(mlp, z):
    return mlp(torch.as_tensor(np.asarray(z, dtype=np.float32))).numpy()


def infer_fb(mlp, z):
    """Return ``(prob, label)``; member iff prob > 0.5."""
    prob = float(predict_proba(mlp, np.asarray(z)[None])[0])
    return prob, label_from_prob(prob)


def label_from_prob(prob):
    return "member" if prob > 0.5 else "nonmember"


def run_fb_attack(mfe, target_model, test_pairs, mlp, truths=None, scenario="", max_len=MAX_LEN):
    """Caption each test image with the target, extract z and classify it."""
    z, _ = generated_features(mfe, target_model, test_pairs, max_len)
    probs = predict_proba(mlp, z) if len(z) else np.zeros(0)
    preds = [int(p > 0.5) for p in probs]
    report = AttackReport("fb", [p.id for p in test_pairs], [float(p) for p in probs], preds,
                          list(truths) if truths is not None else [None] * len(preds),
                          value_name="prob", scenario=scenario)
    return report, z


def save_attack_mlp(mlp, path):
    checkpoint.save(path, "attack_mlp", {"in_dim": mlp.in_dim}, mlp.state_dict())


def load_attack_mlp(path):
    meta, state = checkpoint.load(path, "attack_mlp")
    mlp = AttackMlp(meta["in_dim"])
    checkpoint.load_into(mlp, state, path)
    return mlp


def write_features(ids, z, labels, path):
    """CSV dump: ``sample_id,z_1..z_d,label``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = z.shape[1] if len(z) else 0
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_id", *(f"z_{i + 1}" for i in range(d)), "label"])
        for i, row, lab in zip(ids, z, labels):
            w.writerow([i, *(repr(float(v)) for v in row),
                        "unknown" if lab is None else ("member" if lab == 1 else "nonmember")])


def read_features(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][0] != "sample_id" or rows[0][-1] != "label":
        raise FormatError(f"{path}: bad feature dump header")
    code = {"member": 1, "nonmember": 0, "unknown": None}
    ids = [r[0] for r in rows[1:]]
    z = np.array([[float(v) for v in r[1:-1]] for r in rows[1:]], dtype=np.float32)
    labels = [code[r[-1]] for r in rows[1:]]
    return ids, z.reshape(len(ids), len(rows[0]) - 2), labels
