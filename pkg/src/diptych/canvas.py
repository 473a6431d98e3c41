"""Two-panel canvas, inpainting mask, and the three prompt templates."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import RegionError, ShapeError, TemplateError

# Pixel value filling the panel to be synthesized; neutral for pixel-space
# diffusion (the masked region is replaced by noise at t=1 anyway).
BLANK_FILL = 0.5

FULL_RIGHT = "full-right"


def ensure_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"{name} must be (h, w, 3), got {img.shape}")
    return img


@dataclass(frozen=True)
class DiptychCanvas:
    """Left reference panel and right target panel, each h x w."""

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        left = ensure_image(self.left, "left panel")
        right = ensure_image(self.right, "right panel")
        if left.shape != right.shape:
            raise ShapeError(f"panel shapes differ: {left.shape} vs {right.shape}")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def panel_height(self) -> int:
        return self.left.shape[0]

    @property
    def panel_width(self) -> int:
        return self.left.shape[1]

    def compose(self) -> np.ndarray:
        """Single (h, 2w, 3) image with the panels side by side."""
        return np.concatenate([self.left, self.right], axis=1)

    @classmethod
    def from_composed(cls, image: np.ndarray) -> "DiptychCanvas":
        image = ensure_image(image, "composed canvas")
        if image.shape[1] % 2 != 0:
            raise ShapeError(f"composed canvas width must be even, got {image.shape[1]}")
        w = image.shape[1] // 2
        return cls(image[:, :w].copy(), image[:, w:].copy())


@dataclass(frozen=True)
class DiptychMask:
    """Binary (h, 2w) grid: ones mark pixels to synthesize."""

    values: np.ndarray
    region: object = FULL_RIGHT

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got {values.ndim}-D")
        if not np.all((values == 0) | (values == 1)):
            raise ShapeError("mask values must be 0 or 1")
        object.__setattr__(self, "values", values.astype(np.float64))

    @property
    def known(self) -> np.ndarray:
        return 1.0 - self.values


def build_canvas(ref: np.ndarray) -> DiptychCanvas:
    """Generation-mode canvas: reference left, blank right."""
    ref = ensure_image(ref, "reference")
    return DiptychCanvas(ref.copy(), np.full_like(ref, BLANK_FILL))


def build_canvas_editing(ref: np.ndarray, target: np.ndarray) -> DiptychCanvas:
    """Editing-mode canvas: reference left, editing target right."""
    ref = ensure_image(ref, "reference")
    target = ensure_image(target, "target")
    if ref.shape != target.shape:
        raise ShapeError(f"reference {ref.shape} and target {target.shape} differ")
    return DiptychCanvas(ref.copy(), target.copy())


def build_mask(height: int, width: int, region=FULL_RIGHT) -> DiptychMask:
    """Mask over an h x 2w canvas.

    ``region`` is either ``FULL_RIGHT`` or a (top, left, bottom, right)
    rectangle in canvas coordinates that must lie inside the right panel.
    """
    values = np.zeros((height, 2 * width))
    if region == FULL_RIGHT:
        values[:, width:] = 1.0
        return DiptychMask(values, FULL_RIGHT)
    try:
        top, left, bottom, right = (int(v) for v in region)
    except (TypeError, ValueError) as exc:
        raise RegionError(f"region must be {FULL_RIGHT!r} or a 4-tuple, got {region!r}") from exc
    if top >= bottom or left >= right:
        raise RegionError(f"zero-area region {region}")
    if left < width or right > 2 * width or top < 0 or bottom > height:
        raise RegionError(
            f"rectangle {region} must lie inside the right panel "
            f"(rows 0..{height}, cols {width}..{2 * width})"
        )
    values[top:bottom, left:right] = 1.0
    return DiptychMask(values, (top, left, bottom, right))


class PromptKind(enum.Enum):
    GENERATION = "generation"
    SUBJECT = "subject-inpaint"
    STYLE = "style-inpaint"


GENERATION_TEMPLATE = (
    "A diptych with two side-by-side images of the same {object}. "
    "On the left, {left}. "
    "On the right, replicate this {object} but as {right}"
)
SUBJECT_TEMPLATE = (
    "A diptych with two side-by-side images of same {subject}. "
    "On the left, a photo of {subject}. "
    "On the right, replicate this {subject} exactly but as {target}"
)
STYLE_TEMPLATE = (
    "A diptych with two side-by-side images of same style. "
    "On the left, {left}. "
    "On the right, replicate this style exactly but as {target}"
)


@dataclass(frozen=True)
class DiptychPrompt:
    kind: PromptKind
    subject_name: str
    left_desc: str
    target_text: str
    rendered: str = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "rendered", _render(self))


def _require(value: str, name: str, kind: PromptKind) -> str:
    if not value or not value.strip():
        raise TemplateError(f"{name} must be nonempty for {kind.value} prompts")
    return value


def _render(prompt: DiptychPrompt) -> str:
    kind = prompt.kind
    if kind is PromptKind.GENERATION:
        return GENERATION_TEMPLATE.format(
            object=_require(prompt.subject_name, "subject_name", kind),
            left=_require(prompt.left_desc, "left_desc", kind),
            right=_require(prompt.target_text, "target_text", kind),
        )
    if kind is PromptKind.SUBJECT:
        return SUBJECT_TEMPLATE.format(
            subject=_require(prompt.subject_name, "subject_name", kind),
            target=_require(prompt.target_text, "target_text", kind),
        )
    if kind is PromptKind.STYLE:
        return STYLE_TEMPLATE.format(
            left=_require(prompt.left_desc, "left_desc", kind),
            target=_require(prompt.target_text, "target_text", kind),
        )
    raise TemplateError(f"unknown prompt kind {kind!r}")


def render_prompt(
    kind: PromptKind | str,
    subject_name: str = "",
    left_desc: str = "",
    target_text: str = "",
) -> DiptychPrompt:
    """Instantiate one of the three diptych prompt templates."""
    if isinstance(kind, str):
        kind = PromptKind(kind)
    return DiptychPrompt(kind, subject_name, left_desc, target_text)
