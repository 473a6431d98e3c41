"""Euler sampling of the velocity field with classifier-free guidance.

Integration runs the straight-path flow from pure noise at t=1 down to
data at t=0 in equal steps.  Guidance combines the conditional prediction
with an all-pad-caption unconditional one: v = v_u + s (v_c - v_u); the
degenerate scales 0 and 1 short-circuit to a single branch so they are
exactly the unconditional / conditional predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionPartition, EnhancementConfig
from .errors import ConfigError
from .model import DenoiserModel, forward, patchify, unpatchify
from .numerics import SeededRng
from .text import Caption, blank_caption


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 30
    guidance_scale: float = 3.5
    seed: int = 0
    conditioning_scale: float = 0.95
    reference_factor: float = 1.3
    renormalize: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.guidance_scale < 0:
            raise ConfigError(f"guidance scale must be >= 0, got {self.guidance_scale}")
        if not 0.0 <= self.conditioning_scale <= 1.0:
            raise ConfigError(
                f"conditioning scale must lie in [0, 1], got {self.conditioning_scale}"
            )
        if self.reference_factor < 1.0:
            raise ConfigError(f"reference factor must be >= 1, got {self.reference_factor}")

    def enhancement(self) -> EnhancementConfig:
        return EnhancementConfig(self.reference_factor, self.renormalize)


def guided_velocity(
    model: DenoiserModel,
    x: np.ndarray,
    time: float,
    caption: Caption,
    guidance_scale: float,
    enhancement: tuple[AttentionPartition, EnhancementConfig] | None = None,
    inject: list[np.ndarray] | None = None,
) -> np.ndarray:
    """Classifier-free-guided velocity for one image-shaped state ``x``."""
    tokens, row_idx, col_idx = patchify(x[None], model.config)
    t_arr = np.asarray([time], dtype=np.float64)
    cond_ids = caption.as_array()[None, :]
    uncond_ids = blank_caption(model.config.text_len).as_array()[None, :]

    if guidance_scale == 0.0:
        v, _ = forward(model, uncond_ids, tokens, row_idx, col_idx, t_arr,
                       enhancement=enhancement, inject=inject)
        return unpatchify(v, model.config, x.shape[1])[0]
    if guidance_scale == 1.0:
        v, _ = forward(model, cond_ids, tokens, row_idx, col_idx, t_arr,
                       enhancement=enhancement, inject=inject)
        return unpatchify(v, model.config, x.shape[1])[0]

    ids = np.concatenate([uncond_ids, cond_ids], axis=0)
    pair_tokens = np.concatenate([tokens, tokens], axis=0)
    pair_inject = None if inject is None else [np.concatenate([f, f], axis=0) for f in inject]
    v, _ = forward(model, ids, pair_tokens, row_idx, col_idx,
                   np.asarray([time, time], dtype=np.float64),
                   enhancement=enhancement, inject=pair_inject)
    v_img = unpatchify(v, model.config, x.shape[1])
    return v_img[0] + guidance_scale * (v_img[1] - v_img[0])


def sample(
    model: DenoiserModel,
    caption: Caption,
    sampler: SamplerConfig,
    rng: SeededRng | None = None,
    canvas: bool = False,
) -> np.ndarray:
    """Generate an image in [0, 1]; a two-panel canvas when ``canvas``.

    Plain generation applies no attention enhancement; that is an
    inpainting-time mechanism.
    """
    rng = rng if rng is not None else SeededRng(sampler.seed)
    cfg = model.config
    width = 2 * cfg.panel if canvas else cfg.panel
    x = rng.gaussian(cfg.panel * width * 3).reshape(cfg.panel, width, 3)
    dt = 1.0 / sampler.steps
    for k in range(sampler.steps):
        t = 1.0 - k * dt
        v = guided_velocity(model, x, t, caption, sampler.guidance_scale)
        x = x - dt * v
    return np.clip((x + 1.0) / 2.0, 0.0, 1.0)
