"""Rectified-flow training for the toy denoiser.

The target field is noise minus data along the straight path
x_t = (1 - t) x0 + t eps, optimized by plain SGD with momentum on a fixed
warmup + cosine schedule.  Everything is driven by one seeded stream so a
(dataset, config, seed) triple reproduces the same weights bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError, TrainingError
from .model import DenoiserModel, ModelConfig, backward, forward, patchify
from .numerics import SeededRng
from .text import Caption


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2200
    batch_size: int = 8
    lr: float = 0.05
    momentum: float = 0.9
    warmup: int = 100
    final_lr_frac: float = 0.05
    clip_norm: float = 1.0
    uncond_prob: float = 0.1
    holdout_frac: float = 0.1
    eval_every: int = 200


@dataclass
class TrainingHistory:
    """Held-out loss curve; heldout[0] is the pre-training loss."""

    steps: list[int] = field(default_factory=list)
    heldout: list[float] = field(default_factory=list)
    train: list[float] = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.heldout[0]

    @property
    def final_loss(self) -> float:
        return self.heldout[-1]

    def as_dict(self) -> dict:
        return {"steps": self.steps, "heldout": self.heldout, "train": self.train}


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to cfg.lr, then cosine decay to final_lr_frac * lr."""
    if step < cfg.warmup:
        return cfg.lr * (step + 1) / cfg.warmup
    span = max(1, cfg.steps - cfg.warmup)
    progress = min(1.0, (step - cfg.warmup) / span)
    floor = cfg.final_lr_frac
    return cfg.lr * (floor + (1.0 - floor) * 0.5 * (1.0 + np.cos(np.pi * progress)))


def clip_and_step(params, grads, velocity, lr, momentum, clip_norm):
    """Global-norm clip followed by a momentum SGD update, in place."""
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = np.sqrt(total)
    scale = 1.0 if norm <= clip_norm else clip_norm / norm
    for name, g in grads.items():
        velocity[name] = momentum * velocity[name] + g * scale
        params[name] -= lr * velocity[name]
    return norm


class _Group:
    """Training items of one image width, stacked for batched access."""

    def __init__(self, images: list[np.ndarray], captions: list[Caption]):
        self.images = np.stack(images)
        self.ids = np.stack([c.as_array() for c in captions])

    def __len__(self):
        return self.images.shape[0]


def _group_by_width(items: Sequence[tuple[np.ndarray, Caption]], order: np.ndarray):
    buckets: dict[int, tuple[list, list]] = {}
    for idx in order:
        img, cap = items[int(idx)]
        buckets.setdefault(img.shape[1], ([], []))
        buckets[img.shape[1]][0].append(np.asarray(img, dtype=np.float64))
        buckets[img.shape[1]][1].append(cap)
    return {w: _Group(imgs, caps) for w, (imgs, caps) in sorted(buckets.items())}


def velocity_loss_batch(model, group: _Group, idx, t, eps_tokens, ids):
    """Loss, gradient seed, and cache for one batch (training step core)."""
    imgs = group.images[idx]
    tokens01, row_idx, col_idx = patchify(imgs, model.config)
    x0 = 2.0 * tokens01 - 1.0
    x_t = (1.0 - t)[:, None, None] * x0 + t[:, None, None] * eps_tokens
    target = eps_tokens - x0
    v, cache = forward(model, ids, x_t, row_idx, col_idx, t, keep_cache=True)
    diff = v - target
    loss = float((diff * diff).mean())
    d_v = 2.0 * diff / diff.size
    return loss, d_v, cache


def _eval_loss(model, group: _Group, t, eps_tokens) -> float:
    tokens01, row_idx, col_idx = patchify(group.images, model.config)
    x0 = 2.0 * tokens01 - 1.0
    x_t = (1.0 - t)[:, None, None] * x0 + t[:, None, None] * eps_tokens
    target = eps_tokens - x0
    v, _ = forward(model, group.ids, x_t, row_idx, col_idx, t)
    return float(((v - target) ** 2).mean())


def train_denoiser(
    items: Sequence[tuple[np.ndarray, Caption]],
    model_config: ModelConfig,
    train_config: TrainConfig,
    rng: SeededRng,
) -> tuple[DenoiserModel, TrainingHistory]:
    """Train from scratch; returns the model and the held-out loss curve."""
    if not items:
        raise InputError("training dataset is empty")
    cfg = train_config
    model = DenoiserModel.initialize(model_config, rng.spawn(0))

    data_rng = rng.spawn(1)
    eval_rng = rng.spawn(2)
    perm = data_rng.permutation(len(items))
    if cfg.holdout_frac <= 0.0 or len(items) < 2:
        n_hold = 0
    else:
        n_hold = min(len(items) - 1, max(1, int(round(cfg.holdout_frac * len(items)))))
    hold_groups = _group_by_width(items, perm[:n_hold]) if n_hold else {}
    train_groups = _group_by_width(items, perm[n_hold:])
    if not train_groups:
        raise InputError("no training items left after holdout split")

    # Fixed (t, eps) per held-out item keeps the eval curve comparable.
    hold_fixed = {}
    for width, group in hold_groups.items():
        n = len(group)
        s_tokens = group.images.shape[1] * width * 3 // model_config.patch_dim
        t = eval_rng.uniform(n)
        eps = eval_rng.gaussian(n * s_tokens * model_config.patch_dim).reshape(
            n, s_tokens, model_config.patch_dim
        )
        hold_fixed[width] = (t, eps)

    def heldout_loss() -> float:
        if not hold_groups:
            return float("nan")
        total, count = 0.0, 0
        for width, group in hold_groups.items():
            t, eps = hold_fixed[width]
            total += _eval_loss(model, group, t, eps) * len(group)
            count += len(group)
        return total / count

    widths = list(train_groups)
    sizes = np.array([len(train_groups[w]) for w in widths], dtype=np.float64)
    cum = np.cumsum(sizes / sizes.sum())

    history = TrainingHistory()
    history.steps.append(0)
    history.heldout.append(heldout_loss())
    history.train.append(float("nan"))

    velocity = {name: np.zeros_like(p) for name, p in model.params.items()}
    pad_row = np.zeros(model_config.text_len, dtype=np.int64)
    running: list[float] = []
    for step in range(cfg.steps):
        gi = int(np.searchsorted(cum, data_rng.uniform(1)[0], side="right"))
        group = train_groups[widths[min(gi, len(widths) - 1)]]
        idx = data_rng.integers(cfg.batch_size, 0, len(group))
        t = data_rng.uniform(cfg.batch_size)
        s_tokens = group.images.shape[1] * group.images.shape[2] * 3 // model_config.patch_dim
        eps = data_rng.gaussian(cfg.batch_size * s_tokens * model_config.patch_dim)
        eps = eps.reshape(cfg.batch_size, s_tokens, model_config.patch_dim)
        ids = group.ids[idx].copy()
        drop = data_rng.uniform(cfg.batch_size) < cfg.uncond_prob
        ids[drop] = pad_row

        loss, d_v, cache = velocity_loss_batch(model, group, idx, t, eps, ids)
        if not np.isfinite(loss):
            raise TrainingError(f"loss became non-finite at step {step}")
        grads, _ = backward(model, cache, d_v)
        clip_and_step(model.params, grads, velocity,
                      lr_at(step, cfg), cfg.momentum, cfg.clip_norm)
        running.append(loss)

        if (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps:
            history.steps.append(step + 1)
            history.heldout.append(heldout_loss())
            history.train.append(float(np.mean(running)))
            running.clear()
            if hold_groups and not np.isfinite(history.heldout[-1]):
                raise TrainingError(f"held-out loss non-finite at step {step + 1}")
    return model, history
