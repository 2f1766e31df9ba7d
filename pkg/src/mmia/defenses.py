"""Training-time mitigations: augmentation, l2 penalty and clipped+noised gradients."""

from dataclasses import dataclass, replace

import numpy as np
import torch


@dataclass(frozen=True)
class DpConfig:
    clip_norm: float = 1.0
    noise_multiplier: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")
        if self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be >= 0")


def augment_image(image, rng, flip=None, max_shift=2, brightness=0.1):
    """Flip / brightness jitter / translate one HxWxC image. ``flip=None`` flips with p=0.5."""
    if flip is None:
        flip = rng.random() < 0.5
    out = image[:, ::-1] if flip else image
    out = out * np.float32(rng.uniform(1 - brightness, 1 + brightness))
    dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
    if dy or dx:
        h, w = out.shape[:2]
        padded = np.pad(out, ((max_shift, max_shift), (max_shift, max_shift), (0, 0)), mode="edge")
        out = padded[max_shift - dy:max_shift - dy + h, max_shift - dx:max_shift - dx + w]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def augment(pair, seed, flip=None):
    # captions stay untouched, including left/right relations under a flip
    rng = np.random.default_rng(seed)
    return replace(pair, image=augment_image(pair.image, rng, flip=flip))


def l2_penalty(params, lam):
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if lam == 0:
        return 0.0
    return lam * sum((p ** 2).sum() for p in params)


def clip_per_sample(grads, clip_norm):
    """Rescale each row of a (B, P) gradient matrix to norm <= clip_norm."""
    norms = grads.norm(dim=1, keepdim=True)
    over = norms > clip_norm
    factor = torch.where(over, clip_norm / torch.where(over, norms, torch.ones_like(norms)),
                         torch.ones_like(norms))
    return grads * factor


def dp_sgd_step(per_sample_grads, dp, generator=None):
    """Clip per-sample gradients, average them and add Gaussian noise.

    ``per_sample_grads`` is a (B, P) tensor or array. Noise has standard
    deviation ``noise_multiplier * clip_norm / B`` per coordinate.
    """
    g = torch.as_tensor(per_sample_grads)
    if g.ndim == 1:
        g = g[None]
    if g.shape[0] < 1:
        raise ValueError("need at least one per-sample gradient")
    if generator is None:
        generator = torch.Generator().manual_seed(dp.seed)
    b = g.shape[0]
    mean = clip_per_sample(g, dp.clip_norm).mean(dim=0)
    if dp.noise_multiplier > 0:
        noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
        mean = mean + noise * (dp.noise_multiplier * dp.clip_norm / b)
    return mean
