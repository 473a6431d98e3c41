"""Alignment scoring with handcrafted deterministic embedders.

Two image descriptors stand in for the usual pretrained encoders:

* structural: per-channel 16-bin color histograms + normalized central
  moments of the detected subject mask + a 4x4 spatial color grid.  Shape
  sensitive, used for the primary subject-alignment column.
* chromatic: histograms + grid only.  A second, purely color-based
  subject-alignment column.

Text alignment maps image descriptors into a bag-of-attribute space with a
linear least-squares map fit once on the synthetic dataset and frozen.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .canvas import ensure_image
from .errors import ConfigError, InputError, ShapeError
from .numerics import cosine_similarity
from .segmenter import COLOR_THRESHOLD, _border_background, _connected_components
from .text import COLORS, SCENES, SHAPES, TEXTURES, Caption, VOCABULARY, tokenize

ATTRIBUTE_TERMS: tuple[str, ...] = SHAPES + COLORS + TEXTURES + tuple(SCENES)
_MOMENT_DIM = 10


def _detect_foreground(img: np.ndarray) -> np.ndarray | None:
    """Name-free largest-component foreground; None when nothing stands out."""
    background = _border_background(img)
    dist = np.sqrt(((img - background[None, None, :]) ** 2).sum(axis=2))
    cand = dist > COLOR_THRESHOLD
    if not cand.any():
        return None
    labels = _connected_components(cand)
    areas = np.bincount(labels.ravel())
    areas[0] = 0
    return (labels == int(areas.argmax())).astype(np.float64)


def _mask_moments(mask: np.ndarray | None, shape: tuple[int, int]) -> np.ndarray:
    out = np.zeros(_MOMENT_DIM)
    if mask is None or not mask.any():
        return out
    h, w = shape
    ys, xs = np.nonzero(mask)
    area = float(len(ys))
    cy, cx = ys.mean(), xs.mean()
    dy = (ys - cy) / max(h, w)
    dx = (xs - cx) / max(h, w)
    out[0] = area / (h * w)
    out[1] = cy / h
    out[2] = cx / w
    out[3] = (dy * dy).mean()
    out[4] = (dx * dx).mean()
    out[5] = (dy * dx).mean()
    out[6] = (dy * dy * dx).mean()
    out[7] = (dy * dx * dx).mean()
    out[8] = (dy * dy * dy).mean()
    out[9] = (dx * dx * dx).mean()
    return out


@dataclass(frozen=True)
class AttributeMap:
    """Frozen linear map from image-descriptor space to attribute space."""

    matrix: np.ndarray
    version: int = 1

    @classmethod
    def fit(cls, descriptors: np.ndarray, attributes: np.ndarray,
            ridge: float = 1e-6) -> "AttributeMap":
        x = np.asarray(descriptors, dtype=np.float64)
        y = np.asarray(attributes, dtype=np.float64)
        gram = x.T @ x + ridge * np.eye(x.shape[1])
        return cls(np.linalg.solve(gram, x.T @ y))

    def apply(self, descriptor: np.ndarray) -> np.ndarray:
        return np.asarray(descriptor, dtype=np.float64) @ self.matrix

    def save(self, path) -> None:
        np.savez(path, matrix=self.matrix, version=np.asarray([self.version]))

    @classmethod
    def load(cls, path) -> "AttributeMap":
        data = np.load(path)
        return cls(np.asarray(data["matrix"], dtype=np.float64), int(data["version"][0]))


@dataclass(frozen=True)
class ImageEmbedder:
    hist_bins: int = 16
    grid: int = 4
    use_moments: bool = True
    attribute_map: AttributeMap | None = None

    @classmethod
    def structural(cls, attribute_map: AttributeMap | None = None) -> "ImageEmbedder":
        return cls(use_moments=True, attribute_map=attribute_map)

    @classmethod
    def chromatic(cls, attribute_map: AttributeMap | None = None) -> "ImageEmbedder":
        return cls(use_moments=False, attribute_map=attribute_map)

    def embed(self, image: np.ndarray) -> np.ndarray:
        img = ensure_image(image, "embedder input")
        h, w = img.shape[:2]
        parts = []
        for c in range(3):
            hist, _ = np.histogram(img[:, :, c], bins=self.hist_bins, range=(0.0, 1.0))
            parts.append(hist / (h * w))
        if self.use_moments:
            parts.append(_mask_moments(_detect_foreground(img), (h, w)))
        gh, gw = h // self.grid, w // self.grid
        cells = img[: gh * self.grid, : gw * self.grid]
        cells = cells.reshape(self.grid, gh, self.grid, gw, 3).mean(axis=(1, 3))
        parts.append(cells.ravel())
        return np.concatenate(parts)


@dataclass(frozen=True)
class TextEmbedder:
    """Bag-of-attribute indicator vector over the closed caption grammar."""

    terms: tuple[str, ...] = ATTRIBUTE_TERMS

    def embed(self, text) -> np.ndarray:
        if isinstance(text, Caption):
            words = {VOCABULARY[i] for i in text.ids}
        else:
            words = set(tokenize(str(text)))
        return np.asarray([1.0 if t in words else 0.0 for t in self.terms])


def subject_alignment(generated, references, embedder: ImageEmbedder) -> float:
    """Mean pairwise cosine similarity between the two embedded sets."""
    generated = list(generated)
    references = list(references)
    if not generated or not references:
        raise InputError("subject_alignment requires nonempty image sets")
    gen = [embedder.embed(g) for g in generated]
    ref = [embedder.embed(r) for r in references]
    return float(np.mean([[cosine_similarity(g, r) for r in ref] for g in gen]))


def text_alignment(generated, target_text, img_embedder: ImageEmbedder,
                   txt_embedder: TextEmbedder) -> float:
    """Mean cosine between mapped image descriptors and the text embedding."""
    generated = list(generated)
    if not generated:
        raise InputError("text_alignment requires a nonempty image set")
    if img_embedder.attribute_map is None:
        raise ConfigError("image embedder has no fitted attribute map")
    text_vec = txt_embedder.embed(target_text)
    scores = [
        cosine_similarity(img_embedder.attribute_map.apply(img_embedder.embed(g)), text_vec)
        for g in generated
    ]
    return float(np.mean(scores))


@dataclass(frozen=True)
class SplitScores:
    cross_panel: float
    left_text: float
    right_text: float


def diptych_split_eval(diptych, left_desc, right_desc, img_embedder: ImageEmbedder,
                       txt_embedder: TextEmbedder) -> SplitScores:
    """Split a composed two-panel image at the midline and score each half."""
    img = ensure_image(diptych, "diptych")
    if img.shape[1] % 2 != 0:
        raise ShapeError(f"diptych width must be even, got {img.shape[1]}")
    w = img.shape[1] // 2
    left, right = img[:, :w], img[:, w:]
    return SplitScores(
        cross_panel=subject_alignment([left], [right], img_embedder),
        left_text=text_alignment([left], left_desc, img_embedder, txt_embedder),
        right_text=text_alignment([right], right_desc, img_embedder, txt_embedder),
    )


# ---------------------------------------------------------------------------
# score reports

REPORT_VERSION = 1


@dataclass
class ScoreReport:
    config: dict
    code_version: str
    items: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    version: int = REPORT_VERSION

    def add(self, key: str, **fields) -> None:
        self.items.append({"key": key, **fields})

    def finalize(self) -> "ScoreReport":
        self.items.sort(key=lambda item: item["key"])
        self.aggregates = self.compute_aggregates()
        return self

    def compute_aggregates(self) -> dict:
        scored = [it for it in self.items if "error" not in it]
        keys = sorted({k for it in scored for k in it if isinstance(it[k], (int, float))})
        agg = {k: float(np.mean([it[k] for it in scored if k in it]))
               for k in keys if any(k in it for it in scored)}
        agg["items_total"] = len(self.items)
        agg["items_failed"] = len(self.items) - len(scored)
        return agg

    def validate(self) -> None:
        recomputed = self.compute_aggregates()
        for key, value in recomputed.items():
            stored = self.aggregates.get(key)
            if stored is None or abs(stored - value) > 1e-9:
                raise ConfigError(f"report aggregate {key!r} does not match items")

    def to_json(self) -> str:
        payload = {
            "version": self.version,
            "config": self.config,
            "code_version": self.code_version,
            "items": self.items,
            "aggregates": self.aggregates,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "ScoreReport":
        payload = json.loads(text)
        report = cls(
            config=payload["config"],
            code_version=payload["code_version"],
            items=payload["items"],
            aggregates=payload["aggregates"],
            version=payload["version"],
        )
        report.validate()
        return report

    @classmethod
    def load(cls, path) -> "ScoreReport":
        return cls.from_json(Path(path).read_text())
