"""Closed caption grammar: word-level tokenizer and attribute terms.

The sprite world is described by four attribute axes (shape, color,
texture, scene) plus a small set of template words.  The vocabulary is a
fixed, versioned list; captions are lowercased, split on non-word
characters (hyphens kept), and padded to a fixed length.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

SHAPES = ("circle", "square", "triangle", "diamond", "cross")
COLORS = ("red", "green", "blue", "yellow", "purple", "cyan")
TEXTURES = ("solid", "striped", "dotted")

# scene id -> caption phrase; the final word of each phrase is its attribute term.
SCENES = {
    "backdrop": "on a dark backdrop",
    "floor": "on a checkered floor",
    "sky": "under a gradient sky",
    "night": "in a starry night",
    "wall": "beside a brick wall",
    "beach": "on a sandy beach",
}

_TEMPLATE_WORDS = (
    "a", "diptych", "with", "two", "side-by-side", "images", "of", "the",
    "same", "on", "left", "right", "photo", "replicate", "this", "exactly",
    "but", "as", "style", "in", "under", "beside", "and",
)
_SCENE_WORDS = ("dark", "backdrop", "checkered", "floor", "gradient", "sky",
                "starry", "night", "brick", "wall", "sandy", "beach")

PAD, UNK = "<pad>", "<unk>"
VOCABULARY: tuple[str, ...] = (
    (PAD, UNK) + _TEMPLATE_WORDS + _SCENE_WORDS + SHAPES + COLORS + TEXTURES
)
PAD_ID = 0
UNK_ID = 1
_WORD_TO_ID = {w: i for i, w in enumerate(VOCABULARY)}
_TOKEN_RE = re.compile(r"[a-z0-9]+(?:-[a-z0-9]+)*")

DEFAULT_CAPTION_LENGTH = 48


def vocab_size() -> int:
    return len(VOCABULARY)


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens; punctuation is dropped, hyphens kept."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Caption:
    """Token ids padded to a fixed length."""

    ids: tuple[int, ...]

    def __post_init__(self):
        bad = [i for i in self.ids if not 0 <= i < len(VOCABULARY)]
        if bad:
            raise ConfigError(f"token ids outside vocabulary: {bad[:5]}")

    @property
    def length(self) -> int:
        return len(self.ids)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.ids, dtype=np.int64)

    def is_blank(self) -> bool:
        return all(i == PAD_ID for i in self.ids)


def encode_caption(text: str, length: int = DEFAULT_CAPTION_LENGTH) -> Caption:
    """Tokenize and pad/truncate to ``length`` ids."""
    words = tokenize(text)
    ids = [_WORD_TO_ID.get(w, UNK_ID) for w in words][:length]
    ids += [PAD_ID] * (length - len(ids))
    return Caption(tuple(ids))


def blank_caption(length: int = DEFAULT_CAPTION_LENGTH) -> Caption:
    """All-pad caption used as the unconditional guidance branch."""
    return Caption(tuple([PAD_ID] * length))


def subject_phrase(color: str, texture: str, shape: str) -> str:
    return f"{color} {texture} {shape}"


def single_caption(color: str, texture: str, shape: str, scene: str) -> str:
    return f"a photo of a {subject_phrase(color, texture, shape)} {SCENES[scene]}"
