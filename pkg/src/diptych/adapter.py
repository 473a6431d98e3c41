"""Inpainting conditioning adapter: per-block residuals from the known region.

The adapter embeds (masked image, mask) patch pairs and projects them into
one additive residual per denoiser block, injected into the image-token
stream.  Block projections start at zero so an untrained adapter is a
no-op, and the runtime conditioning scale multiplies the injected features
(scale 0 disables them entirely).  Training freezes the base model and
minimizes velocity error on the masked region only.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import KIND_ADAPTER, read_checkpoint, write_checkpoint
from .errors import CompatibilityError, InputError, TrainingError
from .model import DenoiserModel, ModelConfig, _outer, backward, forward, patchify
from .numerics import SeededRng
from .text import Caption
from .training import TrainConfig, TrainingHistory, _group_by_width, clip_and_step, lr_at


def adapter_param_order(depth: int) -> list[str]:
    names = ["embed_w", "embed_b", "row_pos", "col_pos"]
    for i in range(depth):
        names.extend([f"proj{i}_w", f"proj{i}_b"])
    return names


@dataclass
class ConditionAdapter:
    model_config: ModelConfig
    base_fingerprint: str
    params: dict[str, np.ndarray] = field(repr=False)

    @classmethod
    def initialize(cls, model: DenoiserModel, rng: SeededRng) -> "ConditionAdapter":
        cfg = model.config
        m = cfg.dim
        in_dim = cfg.patch_dim + cfg.patch * cfg.patch  # masked pixels + mask bits
        params: dict[str, np.ndarray] = {
            "embed_w": rng.gaussian(in_dim * m).reshape(in_dim, m) / np.sqrt(in_dim),
            "embed_b": np.zeros(m),
            "row_pos": rng.gaussian(cfg.grid * m).reshape(cfg.grid, m) * 0.02,
            "col_pos": rng.gaussian(2 * cfg.grid * m).reshape(2 * cfg.grid, m) * 0.02,
        }
        for i in range(cfg.depth):
            params[f"proj{i}_w"] = rng.gaussian(m * m).reshape(m, m) / np.sqrt(m)
            params[f"proj{i}_b"] = np.zeros(m)
        return cls(cfg, model.fingerprint(), params)

    def features(
        self, masked01: np.ndarray, mask: np.ndarray, keep_cache: bool = False
    ):
        """Per-block injected residuals for (B, h, W, 3) masked images.

        ``masked01`` is the known content with synthesized pixels zeroed;
        ``mask`` is the (B, h, W) grid of ones on pixels to synthesize.
        """
        cfg = self.model_config
        tokens, row_idx, col_idx = patchify(masked01, cfg)
        m3 = np.repeat(mask[..., None], 3, axis=3)
        mask_tokens, _, _ = patchify(m3, cfg)
        mask_tokens = mask_tokens[:, :, ::3]  # one bit per pixel
        x = np.concatenate([tokens, mask_tokens], axis=2)
        z = (
            x @ self.params["embed_w"]
            + self.params["embed_b"]
            + self.params["row_pos"][row_idx]
            + self.params["col_pos"][col_idx]
        )
        sig = 1.0 / (1.0 + np.exp(-z))
        base = z * sig
        out = [base @ self.params[f"proj{i}_w"] + self.params[f"proj{i}_b"]
               for i in range(cfg.depth)]
        cache = None
        if keep_cache:
            cache = {"x": x, "z": z, "sig": sig, "base": base,
                     "row_idx": row_idx, "col_idx": col_idx}
        return out, cache

    def features_backward(self, cache: dict, d_out: list[np.ndarray]) -> dict[str, np.ndarray]:
        grads = {name: np.zeros_like(p) for name, p in self.params.items()}
        d_base = np.zeros_like(cache["base"])
        for i, d in enumerate(d_out):
            grads[f"proj{i}_w"] = _outer(cache["base"], d)
            grads[f"proj{i}_b"] = d.sum(axis=(0, 1))
            d_base += d @ self.params[f"proj{i}_w"].T
        z, sig = cache["z"], cache["sig"]
        d_z = d_base * sig * (1.0 + z * (1.0 - sig))
        grads["embed_w"] = _outer(cache["x"], d_z)
        grads["embed_b"] = d_z.sum(axis=(0, 1))
        d_pos = d_z.sum(axis=0)
        np.add.at(grads["row_pos"], cache["row_idx"], d_pos)
        np.add.at(grads["col_pos"], cache["col_idx"], d_pos)
        return grads

    def save(self, path) -> None:
        config = {"model": asdict(self.model_config), "base_fingerprint": self.base_fingerprint}
        tensors = [(n, self.params[n]) for n in adapter_param_order(self.model_config.depth)]
        write_checkpoint(path, KIND_ADAPTER, config, tensors)

    @classmethod
    def load(cls, path) -> "ConditionAdapter":
        kind, config, tensors = read_checkpoint(path)
        if kind != KIND_ADAPTER:
            raise CompatibilityError(f"{path}: checkpoint kind {kind} is not an adapter")
        cfg = ModelConfig(**config["model"])
        names = [n for n, _ in tensors]
        if names != adapter_param_order(cfg.depth):
            raise CompatibilityError(f"{path}: adapter tensors do not match declaration order")
        return cls(cfg, config["base_fingerprint"], dict(tensors))


def check_compatible(model: DenoiserModel, adapter: ConditionAdapter) -> None:
    if adapter.base_fingerprint != model.fingerprint():
        raise CompatibilityError(
            "adapter was trained for a different base model "
            f"({adapter.base_fingerprint} != {model.fingerprint()})"
        )


def _random_mask(height: int, width: int, patch: int, rng: SeededRng,
                 right_half_prob: float) -> np.ndarray:
    """Patch-aligned training mask: the right half, or a random rectangle."""
    mask = np.zeros((height, width))
    gh, gw = height // patch, width // patch
    if width > height and rng.uniform(1)[0] < right_half_prob:
        mask[:, width // 2 :] = 1.0
        return mask
    h_patches = int(rng.integers(1, max(1, gh // 2), gh + 1)[0])
    w_patches = int(rng.integers(1, max(1, gw // 3), gw + 1)[0])
    top = int(rng.integers(1, 0, gh - h_patches + 1)[0]) * patch
    left = int(rng.integers(1, 0, gw - w_patches + 1)[0]) * patch
    mask[top : top + h_patches * patch, left : left + w_patches * patch] = 1.0
    return mask


@dataclass(frozen=True)
class AdapterTrainConfig(TrainConfig):
    steps: int = 1200
    lr: float = 0.05
    uncond_prob: float = 0.1
    right_half_prob: float = 0.7


def train_condition_adapter(
    model: DenoiserModel,
    items,
    train_config: AdapterTrainConfig,
    rng: SeededRng,
) -> tuple[ConditionAdapter, TrainingHistory]:
    """Train the adapter on randomly masked images with the base model frozen.

    The objective is the velocity error restricted to masked tokens, so the
    adapter learns to reconstruct missing regions from the visible ones.
    """
    if not items:
        raise InputError("adapter training dataset is empty")
    cfg = train_config
    mcfg = model.config
    adapter = ConditionAdapter.initialize(model, rng.spawn(0))
    data_rng = rng.spawn(1)
    eval_rng = rng.spawn(2)

    perm = data_rng.permutation(len(items))
    if cfg.holdout_frac <= 0.0 or len(items) < 2:
        n_hold = 0
    else:
        n_hold = min(len(items) - 1, max(1, int(round(cfg.holdout_frac * len(items)))))
    hold_groups = _group_by_width(items, perm[:n_hold]) if n_hold else {}
    train_groups = _group_by_width(items, perm[n_hold:])

    def batch_loss(group, idx, t, eps, ids, masks, keep_cache):
        imgs = group.images[idx]
        tokens01, row_idx, col_idx = patchify(imgs, mcfg)
        x0 = 2.0 * tokens01 - 1.0
        x_t = (1.0 - t)[:, None, None] * x0 + t[:, None, None] * eps
        target = eps - x0
        masked01 = imgs * (1.0 - masks)[..., None]
        feats, feat_cache = adapter.features(masked01, masks, keep_cache=keep_cache)
        mask_tok, _, _ = patchify(np.repeat(masks[..., None], 3, axis=3), mcfg)
        token_w = mask_tok.mean(axis=2)[:, :, None]  # fraction of masked pixels
        v, cache = forward(model, ids, x_t, row_idx, col_idx, t,
                           inject=feats, keep_cache=keep_cache)
        diff = (v - target) * token_w
        denom = float(token_w.sum()) * mcfg.patch_dim
        loss = float((diff * (v - target)).sum() / max(denom, 1.0))
        d_v = 2.0 * token_w * (v - target) / max(denom, 1.0)
        return loss, d_v, cache, feat_cache

    # fixed eval draws
    hold_fixed = {}
    for width, group in hold_groups.items():
        n = len(group)
        height = group.images.shape[1]
        s_tokens = height * width * 3 // mcfg.patch_dim
        t = eval_rng.uniform(n)
        eps = eval_rng.gaussian(n * s_tokens * mcfg.patch_dim).reshape(n, s_tokens, mcfg.patch_dim)
        masks = np.stack([
            _random_mask(height, width, mcfg.patch, eval_rng, cfg.right_half_prob)
            for _ in range(n)
        ])
        hold_fixed[width] = (t, eps, masks)

    def heldout_loss():
        if not hold_groups:
            return float("nan")
        total, count = 0.0, 0
        for width, group in hold_groups.items():
            t, eps, masks = hold_fixed[width]
            loss, _, _, _ = batch_loss(group, np.arange(len(group)), t, eps,
                                       group.ids, masks, keep_cache=False)
            total += loss * len(group)
            count += len(group)
        return total / count

    widths = list(train_groups)
    sizes = np.array([len(train_groups[w]) for w in widths], dtype=np.float64)
    cum = np.cumsum(sizes / sizes.sum())

    history = TrainingHistory()
    history.steps.append(0)
    history.heldout.append(heldout_loss())
    history.train.append(float("nan"))

    velocity = {name: np.zeros_like(p) for name, p in adapter.params.items()}
    pad_row = np.zeros(mcfg.text_len, dtype=np.int64)
    running: list[float] = []
    for step in range(cfg.steps):
        gi = int(np.searchsorted(cum, data_rng.uniform(1)[0], side="right"))
        group = train_groups[widths[min(gi, len(widths) - 1)]]
        height, width = group.images.shape[1], group.images.shape[2]
        idx = data_rng.integers(cfg.batch_size, 0, len(group))
        t = data_rng.uniform(cfg.batch_size)
        s_tokens = height * width * 3 // mcfg.patch_dim
        eps = data_rng.gaussian(cfg.batch_size * s_tokens * mcfg.patch_dim)
        eps = eps.reshape(cfg.batch_size, s_tokens, mcfg.patch_dim)
        masks = np.stack([
            _random_mask(height, width, mcfg.patch, data_rng, cfg.right_half_prob)
            for _ in range(cfg.batch_size)
        ])
        ids = group.ids[idx].copy()
        drop = data_rng.uniform(cfg.batch_size) < cfg.uncond_prob
        ids[drop] = pad_row

        loss, d_v, cache, feat_cache = batch_loss(
            group, idx, t, eps, ids, masks, keep_cache=True
        )
        if not np.isfinite(loss):
            raise TrainingError(f"adapter loss became non-finite at step {step}")
        _, inject_grads = backward(model, cache, d_v, want_inject_grads=True)
        grads = adapter.features_backward(feat_cache, inject_grads)
        clip_and_step(adapter.params, grads, velocity,
                      lr_at(step, cfg), cfg.momentum, cfg.clip_norm)
        running.append(loss)

        if (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps:
            history.steps.append(step + 1)
            history.heldout.append(heldout_loss())
            history.train.append(float(np.mean(running)))
            running.clear()
            if hold_groups and not np.isfinite(history.heldout[-1]):
                raise TrainingError(f"adapter held-out loss non-finite at step {step + 1}")
    return adapter, history
