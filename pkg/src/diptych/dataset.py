"""Synthetic sprite world: renderer, training corpus, and benchmark manifest.

Subject classes are (color, texture, shape) triples rendered into small
scenes with procedurally generated captions and exact ground-truth masks.
The corpus mixes three item kinds:

* single: one panel, one sprite in a scene.
* paired: a two-panel canvas showing the same subject twice.  Half of them
  put the isolated subject on white in the left panel (inpainting-style
  caption), half show two scenes of the subject (generation-style caption);
  this instills the two-panel prior the sampler relies on.
* unpaired: two unrelated subjects side by side with a neutral caption, a
  control corpus for measuring the value of paired data.

Alongside the corpus the generator writes a benchmark manifest (subjects
with reference images and shared prompts, plus style and editing cases) and
fits the frozen descriptor-to-attribute map used by text alignment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .canvas import PromptKind, render_prompt
from .errors import InputError
from .metrics import AttributeMap, ImageEmbedder, TextEmbedder
from .numerics import SeededRng
from .palette import BACKGROUNDS, DOT_LIGHTEN, SPRITE_RGB, STRIPE_LIGHTEN, lighten
from .pngio import load_image, save_image, save_mask
from .text import COLORS, SCENES, SHAPES, TEXTURES, single_caption, subject_phrase

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class GeneratorConfig:
    panel: int = 32
    singles: int = 900
    paired: int = 900
    unpaired: int = 300
    benchmark_subjects: int = 10
    benchmark_prompts: int = 5
    refs_per_subject: int = 3
    images_per_cell: int = 4
    styles: int = 4
    edits: int = 4


@dataclass(frozen=True)
class SubjectClass:
    id: str
    color: str
    texture: str
    shape: str

    @property
    def name(self) -> str:
        return subject_phrase(self.color, self.texture, self.shape)


def subject_classes() -> list[SubjectClass]:
    out = []
    for color in COLORS:
        for texture in TEXTURES:
            for shape in SHAPES:
                out.append(SubjectClass(f"{color}-{texture}-{shape}", color, texture, shape))
    return out


# ---------------------------------------------------------------------------
# rendering


def render_background(scene: str, panel: int, rng: SeededRng) -> np.ndarray:
    spec = BACKGROUNDS[scene]
    img = np.zeros((panel, panel, 3))
    if spec["kind"] == "flat":
        img[:] = spec["color"]
    elif spec["kind"] == "checker":
        cell = spec["cell"]
        ys, xs = np.mgrid[0:panel, 0:panel]
        parity = ((ys // cell) + (xs // cell)) % 2
        img[parity == 0] = spec["colors"][0]
        img[parity == 1] = spec["colors"][1]
    elif spec["kind"] == "gradient":
        top = np.asarray(spec["top"])
        bottom = np.asarray(spec["bottom"])
        ramp = np.linspace(0.0, 1.0, panel)[:, None]
        img[:] = (top[None, None] + ramp[:, :, None] * (bottom - top)[None, None])
    elif spec["kind"] == "brick":
        ys, xs = np.mgrid[0:panel, 0:panel]
        course = ys // 8
        mortar = (ys % 8 == 0) | ((xs + 8 * (course % 2)) % 16 == 0)
        img[:] = spec["brick"]
        img[mortar] = spec["mortar"]
    elif spec["kind"] == "stars":
        img[:] = spec["color"]
        for _ in range(spec["count"]):
            y = int(rng.integers(1, 1, panel - 1)[0])
            x = int(rng.integers(1, 1, panel - 1)[0])
            img[y, x] = spec["star"]
    elif spec["kind"] == "speckle":
        img[:] = spec["color"]
        noise = rng.uniform(panel * panel).reshape(panel, panel)
        img += ((noise - 0.5) * 2.0 * spec["amplitude"])[:, :, None]
    else:
        raise InputError(f"unknown background kind {spec['kind']!r}")
    return np.clip(img, 0.0, 1.0)


def _shape_mask(shape: str, panel: int, cx: float, cy: float, radius: float) -> np.ndarray:
    ys, xs = np.mgrid[0:panel, 0:panel]
    dx = xs - cx
    dy = ys - cy
    if shape == "circle":
        return dx * dx + dy * dy <= radius * radius
    if shape == "square":
        side = 0.85 * radius
        return (np.abs(dx) <= side) & (np.abs(dy) <= side)
    if shape == "triangle":
        return (dy >= -radius) & (dy <= 0.75 * radius) & (np.abs(dx) <= 0.62 * (dy + radius))
    if shape == "diamond":
        return np.abs(dx) + np.abs(dy) <= 1.1 * radius
    if shape == "cross":
        arm = 0.38 * radius
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= radius)) | (
            (np.abs(dy) <= arm) & (np.abs(dx) <= radius)
        )
    raise InputError(f"unknown shape {shape!r}")


def _texture_colors(color: str, texture: str, mask: np.ndarray) -> np.ndarray:
    base = np.asarray(SPRITE_RGB[color])
    panel = mask.shape[0]
    img = np.zeros((panel, panel, 3))
    img[:] = base
    ys, xs = np.mgrid[0:panel, 0:panel]
    if texture == "striped":
        accent = np.asarray(lighten(SPRITE_RGB[color], STRIPE_LIGHTEN))
        img[(ys // 2) % 2 == 0] = accent
    elif texture == "dotted":
        accent = np.asarray(lighten(SPRITE_RGB[color], DOT_LIGHTEN))
        dots = ((ys % 4) < 2) & ((xs % 4) < 2)
        img[dots] = accent
    return np.where(mask[:, :, None], img, 0.0)


def render_sprite(
    cls: SubjectClass, scene: str | None, panel: int, rng: SeededRng,
    center_jitter: int = 3,
) -> tuple[np.ndarray, np.ndarray]:
    """(image, ground-truth mask); scene None renders on white (isolated).

    Jitter and radius are bounded so the sprite never reaches the border
    pixels the segmenter samples for its background estimate.
    """
    jit = rng.integers(3, -center_jitter, center_jitter + 1)
    cx = panel / 2.0 - 0.5 + float(jit[0]) * panel / 32.0
    cy = panel / 2.0 - 0.5 + float(jit[1]) * panel / 32.0
    radius = (8.0 + 3.0 * (float(jit[2]) + center_jitter) / (2.0 * center_jitter)) * panel / 32.0
    mask = _shape_mask(cls.shape, panel, cx, cy, radius)
    sprite = _texture_colors(cls.color, cls.texture, mask)
    if scene is None:
        background = np.ones((panel, panel, 3))
    else:
        background = render_background(scene, panel, rng)
    img = np.where(mask[:, :, None], sprite, background)
    return img, mask.astype(np.float64)


# ---------------------------------------------------------------------------
# corpus generation


def _paired_subject_item(cls, scene, panel, rng):
    left, lmask = render_sprite(cls, None, panel, rng)
    right, rmask = render_sprite(cls, scene, panel, rng)
    caption = render_prompt(
        PromptKind.SUBJECT,
        subject_name=cls.name,
        target_text=single_caption(cls.color, cls.texture, cls.shape, scene),
    ).rendered
    return np.concatenate([left, right], axis=1), np.concatenate([lmask, rmask], axis=1), caption


def _paired_generation_item(cls, scene_a, scene_b, panel, rng):
    left, lmask = render_sprite(cls, scene_a, panel, rng)
    right, rmask = render_sprite(cls, scene_b, panel, rng)
    caption = render_prompt(
        PromptKind.GENERATION,
        subject_name=cls.name,
        left_desc=single_caption(cls.color, cls.texture, cls.shape, scene_a),
        target_text=single_caption(cls.color, cls.texture, cls.shape, scene_b),
    ).rendered
    return np.concatenate([left, right], axis=1), np.concatenate([lmask, rmask], axis=1), caption


def _unpaired_item(cls_a, cls_b, scene_a, scene_b, panel, rng):
    left, lmask = render_sprite(cls_a, scene_a, panel, rng)
    right, rmask = render_sprite(cls_b, scene_b, panel, rng)
    caption = (
        f"on the left, {single_caption(cls_a.color, cls_a.texture, cls_a.shape, scene_a)} "
        f"and on the right, {single_caption(cls_b.color, cls_b.texture, cls_b.shape, scene_b)}"
    )
    return np.concatenate([left, right], axis=1), np.concatenate([lmask, rmask], axis=1), caption


def generate_dataset(config: GeneratorConfig, rng: SeededRng, out_dir) -> dict:
    """Write images, masks, manifests, and the frozen attribute map.

    Deterministic per (config, seed): the same inputs reproduce every file
    byte-for-byte.  Returns the training manifest dict.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    classes = subject_classes()
    scenes = list(SCENES)
    panel = config.panel
    items = []

    def pick(seq, r):
        return seq[int(r.integers(1, 0, len(seq))[0])]

    single_rng = rng.spawn(1)
    for i in range(config.singles):
        cls = pick(classes, single_rng)
        scene = pick(scenes, single_rng)
        img, mask = render_sprite(cls, scene, panel, single_rng)
        name = f"single_{i:05d}"
        save_image(out / "images" / f"{name}.png", img)
        save_mask(out / "masks" / f"{name}.png", mask)
        items.append({
            "id": name, "kind": "single", "image": f"images/{name}.png",
            "mask": f"masks/{name}.png", "class_id": cls.id, "scene": scene,
            "caption": single_caption(cls.color, cls.texture, cls.shape, scene),
        })

    paired_rng = rng.spawn(2)
    for i in range(config.paired):
        cls = pick(classes, paired_rng)
        scene = pick(scenes, paired_rng)
        if i % 2 == 0:
            img, mask, caption = _paired_subject_item(cls, scene, panel, paired_rng)
            style = "subject"
        else:
            scene_b = pick(scenes, paired_rng)
            img, mask, caption = _paired_generation_item(cls, scene, scene_b, panel, paired_rng)
            style = "generation"
        name = f"paired_{i:05d}"
        save_image(out / "images" / f"{name}.png", img)
        save_mask(out / "masks" / f"{name}.png", mask)
        items.append({
            "id": name, "kind": "paired", "image": f"images/{name}.png",
            "mask": f"masks/{name}.png", "class_id": cls.id, "scene": scene,
            "caption": caption, "caption_style": style,
        })

    unpaired_rng = rng.spawn(3)
    for i in range(config.unpaired):
        cls_a = pick(classes, unpaired_rng)
        cls_b = pick(classes, unpaired_rng)
        scene_a = pick(scenes, unpaired_rng)
        scene_b = pick(scenes, unpaired_rng)
        img, mask, caption = _unpaired_item(cls_a, cls_b, scene_a, scene_b, panel, unpaired_rng)
        name = f"unpaired_{i:05d}"
        save_image(out / "images" / f"{name}.png", img)
        save_mask(out / "masks" / f"{name}.png", mask)
        items.append({
            "id": name, "kind": "unpaired", "image": f"images/{name}.png",
            "mask": f"masks/{name}.png", "class_id": f"{cls_a.id}+{cls_b.id}",
            "scene": f"{scene_a}+{scene_b}", "caption": caption,
        })

    manifest = {
        "version": MANIFEST_VERSION,
        "panel": panel,
        "classes": [
            {"id": c.id, "color": c.color, "texture": c.texture,
             "shape": c.shape, "subject_name": c.name}
            for c in classes
        ],
        "items": items,
        "counts": {"single": config.singles, "paired": config.paired,
                   "unpaired": config.unpaired},
    }
    _write_json(out / "manifest.json", manifest)

    _write_benchmark(config, rng.spawn(4), out, classes, scenes)
    _fit_attribute_map(out, manifest)
    return manifest


def _write_benchmark(config, rng, out: Path, classes, scenes):
    (out / "refs").mkdir(exist_ok=True)
    (out / "styles").mkdir(exist_ok=True)
    (out / "edits").mkdir(exist_ok=True)
    chosen_idx = rng.permutation(len(classes))[: config.benchmark_subjects]
    prompt_scenes = scenes[: config.benchmark_prompts]
    subjects = []
    for n, ci in enumerate(sorted(int(i) for i in chosen_idx)):
        cls = classes[ci]
        refs = []
        for r in range(config.refs_per_subject):
            scene = scenes[(n + r) % len(scenes)]
            img, mask = render_sprite(cls, scene, config.panel, rng)
            rel = f"refs/{cls.id}_{r}.png"
            save_image(out / rel, img)
            save_mask(out / f"refs/{cls.id}_{r}_mask.png", mask)
            refs.append(rel)
        subjects.append({
            "id": cls.id, "subject_name": cls.name, "class_id": cls.id, "refs": refs,
            "prompts": [
                {"id": scene, "text": f"a photo of a {cls.name} {SCENES[scene]}"}
                for scene in prompt_scenes
            ],
        })

    styles = []
    style_idx = rng.permutation(len(classes))[: config.styles]
    for n, ci in enumerate(sorted(int(i) for i in style_idx)):
        cls = classes[ci]
        scene = scenes[n % len(scenes)]
        img, _ = render_sprite(cls, scene, config.panel, rng)
        rel = f"styles/style_{cls.id}.png"
        save_image(out / rel, img)
        target_cls = classes[(ci + 7) % len(classes)]
        styles.append({
            "id": f"style-{cls.id}", "ref": rel,
            "left_desc": single_caption(cls.color, cls.texture, cls.shape, scene),
            "prompts": [
                {"id": f"p{j}", "text": f"a photo of a {c.name}"}
                for j, c in enumerate([target_cls, classes[(ci + 19) % len(classes)]])
            ],
        })

    edits = []
    edit_idx = rng.permutation(len(classes))[: config.edits]
    panel = config.panel
    for n, ci in enumerate(sorted(int(i) for i in edit_idx)):
        cls = classes[ci]
        other = classes[(ci + 11) % len(classes)]
        scene = scenes[n % len(scenes)]
        ref_img, _ = render_sprite(cls, scenes[(n + 2) % len(scenes)], panel, rng)
        target_img, _ = render_sprite(other, scene, panel, rng)
        ref_rel = f"edits/ref_{n}.png"
        target_rel = f"edits/target_{n}.png"
        save_image(out / ref_rel, ref_img)
        save_image(out / target_rel, target_img)
        quarter = panel // 4
        rect = [quarter, panel + quarter, panel - quarter, 2 * panel - quarter]
        edits.append({
            "id": f"edit-{n}", "ref": ref_rel, "target": target_rel,
            "subject_name": cls.name, "rect": rect,
            "target_text": f"a photo of a {cls.name} {SCENES[scene]}",
        })

    benchmark = {
        "version": MANIFEST_VERSION,
        "panel": config.panel,
        "images_per_cell": config.images_per_cell,
        "subjects": subjects,
        "styles": styles,
        "edits": edits,
    }
    _write_json(out / "benchmark.json", benchmark)


def _fit_attribute_map(out: Path, manifest: dict) -> None:
    embedder = ImageEmbedder.structural()
    text_embedder = TextEmbedder()
    descriptors, attributes = [], []
    for item in manifest["items"]:
        if item["kind"] != "single":
            continue
        img = load_image(out / item["image"])
        descriptors.append(embedder.embed(img))
        attributes.append(text_embedder.embed(item["caption"]))
    if not descriptors:
        raise InputError("no single-panel items to fit the attribute map on")
    AttributeMap.fit(np.stack(descriptors), np.stack(attributes)).save(out / "attribute_map.npz")


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# loading


@dataclass
class LoadedDataset:
    manifest: dict
    root: Path
    items: list = field(default_factory=list)  # (image, Caption) pairs

    @property
    def panel(self) -> int:
        return self.manifest["panel"]


def load_training_items(dataset_dir, text_len: int, kinds=("single", "paired")) -> LoadedDataset:
    """Materialize (image, caption) pairs for the requested item kinds."""
    from .text import encode_caption

    root = Path(dataset_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    loaded = LoadedDataset(manifest, root)
    for item in manifest["items"]:
        if item["kind"] not in kinds:
            continue
        img = load_image(root / item["image"])
        loaded.items.append((img, encode_caption(item["caption"], text_len)))
    if not loaded.items:
        raise InputError(f"no items of kinds {kinds} in {dataset_dir}")
    return loaded
