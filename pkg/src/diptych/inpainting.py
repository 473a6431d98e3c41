"""Text-conditioned diptych inpainting.

Two strategies share one loop.  Zero-shot: at every Euler step the known
region (mask = 0) is replaced by the forward-noised input at the current
time, so only masked pixels are synthesized.  Conditioned: additionally,
adapter residuals computed once from (masked canvas, mask) are injected
into every block, scaled by the conditioning scale; scale 0 skips the
injection entirely and reproduces the zero-shot output bit-for-bit.

In both strategies the final image copies the input on mask = 0 pixels, so
the reference panel of the output is pixel-identical to the input panel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapter import ConditionAdapter, check_compatible
from .attention import AttentionPartition, EnhancementConfig
from .canvas import DiptychCanvas, DiptychMask, DiptychPrompt
from .errors import ConfigError, ShapeError
from .model import DenoiserModel
from .numerics import SeededRng
from .sampling import SamplerConfig, guided_velocity
from .text import encode_caption

ZERO_SHOT = "zero-shot"
CONDITIONED = "conditioned"


@dataclass(frozen=True)
class InpaintRequest:
    canvas: DiptychCanvas
    mask: DiptychMask
    prompt: DiptychPrompt
    sampler: SamplerConfig
    strategy: str = ZERO_SHOT

    def __post_init__(self):
        h, w = self.canvas.panel_height, self.canvas.panel_width
        if self.mask.values.shape != (h, 2 * w):
            raise ShapeError(
                f"mask shape {self.mask.values.shape} does not match canvas ({h}, {2 * w})"
            )
        if self.strategy not in (ZERO_SHOT, CONDITIONED):
            raise ConfigError(f"unknown strategy {self.strategy!r}")


def _check_patch_alignment(mask: np.ndarray, patch: int) -> None:
    h, w = mask.shape
    blocks = mask.reshape(h // patch, patch, w // patch, patch)
    per_patch = blocks.transpose(0, 2, 1, 3).reshape(-1, patch * patch)
    uniform = np.all(per_patch == per_patch[:, :1], axis=1)
    if not uniform.all():
        raise ShapeError(f"mask is not aligned to the {patch}x{patch} patch grid")


def _inpaint(
    model: DenoiserModel,
    request: InpaintRequest,
    enhancement_cfg: EnhancementConfig | None,
    rng: SeededRng | None,
    inject: list[np.ndarray] | None,
) -> DiptychCanvas:
    cfg = model.config
    if request.canvas.panel_height != cfg.panel:
        raise ShapeError(
            f"canvas panel {request.canvas.panel_height} does not match model panel {cfg.panel}"
        )
    _check_patch_alignment(request.mask.values, cfg.patch)
    sampler = request.sampler
    rng = rng if rng is not None else SeededRng(sampler.seed)

    input01 = request.canvas.compose()
    known = 2.0 * input01 - 1.0
    mask3 = request.mask.values[:, :, None]
    caption = encode_caption(request.prompt.rendered, cfg.text_len)
    partition: AttentionPartition | None = None
    enhancement = None
    if enhancement_cfg is not None:
        partition = model.default_partition()
        enhancement = (partition, enhancement_cfg)

    h, width = known.shape[0], known.shape[1]
    noise = rng.gaussian(h * width * 3).reshape(h, width, 3)
    x = noise.copy()
    dt = 1.0 / sampler.steps
    for k in range(sampler.steps):
        t = 1.0 - k * dt
        v = guided_velocity(model, x, t, caption, sampler.guidance_scale,
                            enhancement=enhancement, inject=inject)
        x = x - dt * v
        t_next = 1.0 - (k + 1) * dt
        # keep the known region on its straight noise-to-data path
        x = mask3 * x + (1.0 - mask3) * ((1.0 - t_next) * known + t_next * noise)

    out01 = np.clip((x + 1.0) / 2.0, 0.0, 1.0)
    out01 = np.where(mask3 == 0.0, input01, out01)
    return DiptychCanvas.from_composed(out01)


def zeroshot_inpaint(
    model: DenoiserModel,
    request: InpaintRequest,
    enhancement: EnhancementConfig | None = None,
    rng: SeededRng | None = None,
) -> DiptychCanvas:
    """Training-free inpainting via per-step known-region replacement."""
    return _inpaint(model, request, enhancement, rng, inject=None)


def conditioned_inpaint(
    model: DenoiserModel,
    adapter: ConditionAdapter,
    request: InpaintRequest,
    enhancement: EnhancementConfig | None = None,
    rng: SeededRng | None = None,
) -> DiptychCanvas:
    """Adapter-conditioned inpainting; keeps the hard known-region blend."""
    check_compatible(model, adapter)
    scale = request.sampler.conditioning_scale
    inject = None
    if scale != 0.0:
        input01 = request.canvas.compose()
        mask = request.mask.values
        masked01 = (input01 * (1.0 - mask)[:, :, None])[None]
        feats, _ = adapter.features(masked01, mask[None])
        inject = [scale * f for f in feats]
    return _inpaint(model, request, enhancement, rng, inject=inject)
