"""Experiment orchestration: benchmark runs, applications, ablations.

A run is fully described by (config, seed): per-item seeds derive from a
stable hash of (run seed, subject id, prompt id, sample index) so adding
items never perturbs existing ones, and all artifacts (PNGs, reports,
grids) are byte-reproducible.  Failures are isolated per benchmark item and
recorded in the report instead of aborting the sweep.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .adapter import ConditionAdapter
from .attention import EnhancementConfig
from .canvas import PromptKind, build_canvas, build_canvas_editing, build_mask, render_prompt
from .dataset import subject_classes
from .errors import ConfigError, RegionError
from .inpainting import CONDITIONED, ZERO_SHOT, InpaintRequest, conditioned_inpaint, zeroshot_inpaint
from .metrics import AttributeMap, ImageEmbedder, ScoreReport, TextEmbedder, diptych_split_eval, \
    subject_alignment, text_alignment
from .model import DenoiserModel
from .numerics import SeededRng, stable_seed
from .pngio import load_image, save_image
from .sampling import SamplerConfig, sample
from .segmenter import remote_segment, segment_subject
from .text import SCENES, encode_caption, single_caption

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
SEGMENT_ENDPOINT_ENV = "DIPTYCH_SEGMENT_ENDPOINT"

MODES = ("subject", "style", "edit", "diptych-gen", "ablation")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "subject"
    dataset_dir: str = "dataset"
    model_path: str = "model.ckpt"
    adapter_path: str | None = None
    out_dir: str | None = None
    tag: str = "run"
    seed: int = 0
    steps: int = 30
    guidance_scale: float = 3.5
    conditioning_scale: float = 0.95
    reference_factor: float = 1.3
    renormalize: bool = False
    gseg: bool = True
    strategy: str = CONDITIONED
    images_per_cell: int | None = None
    subjects_limit: int | None = None
    prompts_limit: int | None = None
    diptych_eval_classes: int = 20
    diptych_eval_pairs: int = 5
    workers: int = 1
    version: int = CONFIG_VERSION

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.reference_factor < 1.0:
            raise ConfigError(f"reference factor must be >= 1, got {self.reference_factor}")
        if self.strategy not in (ZERO_SHOT, CONDITIONED):
            raise ConfigError(f"unknown strategy {self.strategy!r}")

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        payload = json.loads(Path(path).read_text())
        version = payload.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version}")
        return cls(**payload)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **overrides) if overrides else self

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(asdict(self), sort_keys=True, indent=2) + "\n")


def code_version() -> str:
    """Hash of the installed package sources, embedded in every report."""
    root = Path(__file__).parent
    digest = hashlib.sha256()
    for path in sorted(root.glob("*.py")):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()[:16]


def resolve_out_dir(cfg: ExperimentConfig) -> Path:
    if cfg.out_dir:
        out = Path(cfg.out_dir)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        out = Path("runs") / f"{stamp}-{cfg.tag}"
    out.mkdir(parents=True, exist_ok=True)
    return out


class RunContext:
    """Loaded artifacts shared read-only by all items of a run."""

    def __init__(self, cfg: ExperimentConfig, need_model: bool = True):
        self.cfg = cfg
        self.dataset_dir = Path(cfg.dataset_dir)
        self.benchmark = json.loads((self.dataset_dir / "benchmark.json").read_text())
        attr_map = AttributeMap.load(self.dataset_dir / "attribute_map.npz")
        self.structural = ImageEmbedder.structural(attr_map)
        self.chromatic = ImageEmbedder.chromatic()
        self.text_embedder = TextEmbedder()
        self.model = DenoiserModel.load(cfg.model_path) if need_model else None
        self.adapter = None
        if need_model and cfg.adapter_path:
            self.adapter = ConditionAdapter.load(cfg.adapter_path)
        self.out = resolve_out_dir(cfg)
        cfg.save(self.out / "config.json")
        self.segment_endpoint = os.environ.get(SEGMENT_ENDPOINT_ENV)

    def segment(self, image, subject_name):
        if self.segment_endpoint:
            return remote_segment(self.segment_endpoint, image, subject_name)
        return segment_subject(image, subject_name)

    def report(self) -> ScoreReport:
        return ScoreReport(config=asdict(self.cfg), code_version=code_version())

    def subjects(self):
        subjects = self.benchmark["subjects"]
        if self.cfg.subjects_limit:
            subjects = subjects[: self.cfg.subjects_limit]
        return subjects

    def prompts_of(self, subject):
        prompts = subject["prompts"]
        if self.cfg.prompts_limit:
            prompts = prompts[: self.cfg.prompts_limit]
        return prompts

    @property
    def images_per_cell(self) -> int:
        return self.cfg.images_per_cell or self.benchmark["images_per_cell"]


@dataclass(frozen=True)
class Variant:
    """One point of an ablation sweep over the shared benchmark."""

    label: str
    strategy: str
    conditioning_scale: float
    reference_factor: float
    gseg: bool

    @classmethod
    def from_config(cls, cfg: ExperimentConfig, label: str = "default") -> "Variant":
        return cls(label, cfg.strategy, cfg.conditioning_scale,
                   cfg.reference_factor, cfg.gseg)


def _inpaint_once(ctx: RunContext, variant: Variant, left_panel, prompt, seed: int):
    cfg = ctx.cfg
    panel = left_panel.shape[0]
    canvas = build_canvas(left_panel)
    mask = build_mask(panel, panel)
    sampler = SamplerConfig(
        steps=cfg.steps, guidance_scale=cfg.guidance_scale, seed=seed,
        conditioning_scale=variant.conditioning_scale,
        reference_factor=variant.reference_factor, renormalize=cfg.renormalize,
    )
    request = InpaintRequest(canvas, mask, prompt, sampler, variant.strategy)
    enhancement = EnhancementConfig(variant.reference_factor, cfg.renormalize)
    rng = SeededRng(seed)
    if variant.strategy == CONDITIONED:
        if ctx.adapter is None:
            raise ConfigError("conditioned strategy requires an adapter checkpoint")
        return conditioned_inpaint(ctx.model, ctx.adapter, request, enhancement, rng)
    return zeroshot_inpaint(ctx.model, request, enhancement, rng)


def _score_cell(ctx: RunContext, generated, refs, target_text) -> dict:
    return {
        "subject_structural": subject_alignment(generated, refs, ctx.structural),
        "subject_chromatic": subject_alignment(generated, refs, ctx.chromatic),
        "text": text_alignment(generated, target_text, ctx.structural, ctx.text_embedder),
    }


def _run_benchmark(ctx: RunContext, variant: Variant) -> ScoreReport:
    """Segment -> canvas -> mask -> prompt -> inpaint -> score, per cell."""
    report = ctx.report()
    report.config["variant"] = asdict(variant)
    panel_dir = ctx.out / "panels" / variant.label
    image_dir = ctx.out / "images" / variant.label

    cells = []
    for subject in ctx.subjects():
        for prompt_spec in ctx.prompts_of(subject):
            cells.append((subject, prompt_spec))

    def run_cell(cell):
        subject, prompt_spec = cell
        key = f"{subject['id']}|{prompt_spec['id']}"
        try:
            refs = [load_image(ctx.dataset_dir / rel) for rel in subject["refs"]]
            if variant.gseg:
                left = ctx.segment(refs[0], subject["subject_name"]).segmented
            else:
                left = refs[0]
            prompt = render_prompt(
                PromptKind.SUBJECT,
                subject_name=subject["subject_name"],
                target_text=prompt_spec["text"],
            )
            generated = []
            for j in range(ctx.images_per_cell):
                seed = stable_seed(ctx.cfg.seed, subject["id"], prompt_spec["id"], j)
                out_canvas = _inpaint_once(ctx, variant, left, prompt, seed)
                name = f"{subject['id']}__{prompt_spec['id']}__{j}.png"
                save_image(image_dir / name, out_canvas.compose())
                save_image(panel_dir / name, out_canvas.right)
                generated.append(load_image(panel_dir / name))
            scores = _score_cell(ctx, generated, refs, prompt_spec["text"])
            return {"key": key, "subject": subject["id"], "prompt": prompt_spec["id"],
                    **scores}
        except Exception as exc:  # isolate per-cell failures
            log.warning("cell %s failed: %s", key, exc)
            return {"key": key, "subject": subject["id"], "prompt": prompt_spec["id"],
                    "error": f"{type(exc).__name__}: {exc}"}

    if ctx.cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=ctx.cfg.workers) as pool:
            results = list(pool.map(run_cell, cells))
    else:
        results = [run_cell(c) for c in cells]
    for item in results:
        report.items.append(item)
    return report.finalize()


def _write_grid(ctx: RunContext, variant_label: str, rows: list[list[Path]],
                row_labels: list[str], col_labels: list[str], name: str) -> None:
    """Composite PNG grid plus a sidecar JSON with the cell labels."""
    tiles = [[load_image(p) for p in row] for row in rows if row]
    if not tiles:
        return
    h, w = tiles[0][0].shape[:2]
    pad = 2
    n_rows, n_cols = len(tiles), max(len(r) for r in tiles)
    grid = np.ones((n_rows * (h + pad) - pad, n_cols * (w + pad) - pad, 3))
    for r, row in enumerate(tiles):
        for c, tile in enumerate(row):
            grid[r * (h + pad) : r * (h + pad) + h, c * (w + pad) : c * (w + pad) + w] = tile
    out = ctx.out / "reports" / f"{name}.png"
    save_image(out, grid)
    sidecar = {"rows": row_labels, "cols": col_labels, "variant": variant_label}
    (ctx.out / "reports" / f"{name}.json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n"
    )


def _benchmark_grid(ctx: RunContext, variant: Variant, name: str) -> None:
    rows, row_labels = [], []
    col_labels = None
    for subject in ctx.subjects():
        prompts = ctx.prompts_of(subject)
        paths = [
            ctx.out / "panels" / variant.label / f"{subject['id']}__{p['id']}__0.png"
            for p in prompts
        ]
        paths = [p for p in paths if p.exists()]
        if paths:
            rows.append(paths)
            row_labels.append(subject["id"])
            if col_labels is None:
                col_labels = [p["id"] for p in prompts]
    _write_grid(ctx, variant.label, rows, row_labels, col_labels or [], name)


def run_subject_generation(cfg: ExperimentConfig) -> ScoreReport:
    ctx = RunContext(cfg)
    variant = Variant.from_config(cfg)
    report = _run_benchmark(ctx, variant)
    report.save(ctx.out / "reports" / "scores.json")
    _benchmark_grid(ctx, variant, "grid")
    return report


def run_stylized(cfg: ExperimentConfig) -> ScoreReport:
    """Style transfer mode: style template, enhancement forced off."""
    if cfg.reference_factor != 1.0:
        log.warning("style mode forces reference factor 1.0 (was %s)", cfg.reference_factor)
        cfg = cfg.with_overrides(reference_factor=1.0)
    ctx = RunContext(cfg)
    variant = Variant.from_config(cfg, label="style")
    report = ctx.report()
    for style in ctx.benchmark["styles"]:
        ref = load_image(ctx.dataset_dir / style["ref"])
        for prompt_spec in style["prompts"]:
            key = f"{style['id']}|{prompt_spec['id']}"
            try:
                prompt = render_prompt(
                    PromptKind.STYLE,
                    left_desc=style["left_desc"],
                    target_text=prompt_spec["text"],
                )
                generated = []
                for j in range(ctx.images_per_cell):
                    seed = stable_seed(cfg.seed, style["id"], prompt_spec["id"], j)
                    out_canvas = _inpaint_once(ctx, variant, ref, prompt, seed)
                    name = f"{style['id']}__{prompt_spec['id']}__{j}.png"
                    save_image(ctx.out / "panels" / "style" / name, out_canvas.right)
                    save_image(ctx.out / "images" / "style" / name, out_canvas.compose())
                    generated.append(load_image(ctx.out / "panels" / "style" / name))
                report.add(
                    key,
                    style=style["id"], prompt=prompt_spec["id"],
                    style_chromatic=subject_alignment(generated, [ref], ctx.chromatic),
                    text=text_alignment(generated, prompt_spec["text"],
                                        ctx.structural, ctx.text_embedder),
                )
            except Exception as exc:
                log.warning("style cell %s failed: %s", key, exc)
                report.add(key, style=style["id"], prompt=prompt_spec["id"],
                           error=f"{type(exc).__name__}: {exc}")
    report.finalize()
    report.save(ctx.out / "reports" / "style_scores.json")
    for style in ctx.benchmark["styles"]:
        paths = [
            ctx.out / "panels" / "style" / f"{style['id']}__{p['id']}__{j}.png"
            for p in style["prompts"] for j in range(ctx.images_per_cell)
        ]
        paths = [p for p in paths if p.exists()]
        if paths:
            _write_grid(ctx, "style", [paths], [style["id"]],
                        [p.name for p in paths], f"grid_{style['id']}")
    return report


def run_editing(cfg: ExperimentConfig) -> ScoreReport:
    """Editing mode: target image in the right panel, rectangle mask only."""
    ctx = RunContext(cfg)
    variant = Variant.from_config(cfg, label="edit")
    report = ctx.report()
    panel = ctx.benchmark["panel"]
    for edit in ctx.benchmark["edits"]:
        key = edit["id"]
        try:
            ref = load_image(ctx.dataset_dir / edit["ref"])
            target = load_image(ctx.dataset_dir / edit["target"])
            left = ctx.segment(ref, edit["subject_name"]).segmented if cfg.gseg else ref
            top, left_col, bottom, right_col = edit["rect"]
            if not (panel <= left_col < right_col <= 2 * panel):
                raise RegionError(f"edit rectangle {edit['rect']} outside the right panel")
            canvas = build_canvas_editing(left, target)
            mask = build_mask(panel, panel, tuple(edit["rect"]))
            prompt = render_prompt(
                PromptKind.SUBJECT,
                subject_name=edit["subject_name"],
                target_text=edit["target_text"],
            )
            sampler = SamplerConfig(
                steps=cfg.steps, guidance_scale=cfg.guidance_scale,
                seed=stable_seed(cfg.seed, key),
                conditioning_scale=variant.conditioning_scale,
                reference_factor=variant.reference_factor,
            )
            request = InpaintRequest(canvas, mask, prompt, sampler, variant.strategy)
            enhancement = EnhancementConfig(variant.reference_factor, cfg.renormalize)
            rng = SeededRng(sampler.seed)
            if variant.strategy == CONDITIONED:
                out_canvas = conditioned_inpaint(ctx.model, ctx.adapter, request,
                                                 enhancement, rng)
            else:
                out_canvas = zeroshot_inpaint(ctx.model, request, enhancement, rng)
            composed = out_canvas.compose()
            save_image(ctx.out / "images" / "edit" / f"{key}.png", composed)
            save_image(ctx.out / "panels" / "edit" / f"{key}.png", out_canvas.right)

            preserved = bool(
                np.array_equal(
                    composed[mask.values == 0.0],
                    canvas.compose()[mask.values == 0.0],
                )
            )
            region_after = composed[top:bottom, left_col:right_col]
            region_before = canvas.compose()[top:bottom, left_col:right_col]
            subject_crop = ref
            report.add(
                key,
                preserved_outside_mask=float(preserved),
                region_subject_before=subject_alignment(
                    [region_before], [subject_crop], ctx.chromatic),
                region_subject_after=subject_alignment(
                    [region_after], [subject_crop], ctx.chromatic),
            )
        except Exception as exc:
            log.warning("edit %s failed: %s", key, exc)
            report.add(key, error=f"{type(exc).__name__}: {exc}")
    report.finalize()
    report.save(ctx.out / "reports" / "edit_scores.json")
    return report


def run_diptych_gen_eval(cfg: ExperimentConfig) -> ScoreReport:
    """Sample whole two-panel canvases from generation prompts and score halves."""
    ctx = RunContext(cfg)
    report = ctx.report()
    classes = subject_classes()[: cfg.diptych_eval_classes]
    scenes = list(SCENES)
    sampler = SamplerConfig(steps=cfg.steps, guidance_scale=cfg.guidance_scale, seed=cfg.seed)
    for cls in classes:
        for pair_idx in range(cfg.diptych_eval_pairs):
            scene_a = scenes[pair_idx % len(scenes)]
            scene_b = scenes[(pair_idx + 1 + pair_idx // len(scenes)) % len(scenes)]
            key = f"{cls.id}|{scene_a}-{scene_b}"
            try:
                left_desc = single_caption(cls.color, cls.texture, cls.shape, scene_a)
                right_desc = single_caption(cls.color, cls.texture, cls.shape, scene_b)
                prompt = render_prompt(PromptKind.GENERATION, subject_name=cls.name,
                                       left_desc=left_desc, target_text=right_desc)
                seed = stable_seed(cfg.seed, cls.id, scene_a, scene_b)
                caption = encode_caption(prompt.rendered, ctx.model.config.text_len)
                image = sample(ctx.model, caption, sampler, SeededRng(seed), canvas=True)
                name = f"{cls.id}__{scene_a}-{scene_b}.png"
                save_image(ctx.out / "images" / "diptych" / name, image)
                image = load_image(ctx.out / "images" / "diptych" / name)
                scores = diptych_split_eval(image, left_desc, right_desc,
                                            ctx.structural, ctx.text_embedder)
                half = image.shape[1] // 2
                chromatic_cross = subject_alignment(
                    [image[:, :half]], [image[:, half:]], ctx.chromatic)
                report.add(
                    key,
                    cross_panel_structural=scores.cross_panel,
                    cross_panel_chromatic=chromatic_cross,
                    text_left=scores.left_text,
                    text_right=scores.right_text,
                )
            except Exception as exc:
                log.warning("diptych cell %s failed: %s", key, exc)
                report.add(key, error=f"{type(exc).__name__}: {exc}")
    report.finalize()
    report.save(ctx.out / "reports" / "diptych_eval.json")
    return report


INPAINTING_SWEEP = (
    (ZERO_SHOT, None),
    (CONDITIONED, 0.5),
    (CONDITIONED, 0.8),
    (CONDITIONED, 0.95),
)
GSEG_LAMBDA_SWEEP = (
    (False, 1.3),
    (True, 1.0),
    (True, 1.3),
    (True, 1.5),
)


def run_ablation(cfg: ExperimentConfig) -> dict:
    """Both sweeps over the shared benchmark with shared per-item seeds."""
    ctx = RunContext(cfg)
    cache: dict[tuple, ScoreReport] = {}

    def benchmark(variant: Variant) -> ScoreReport:
        key = (variant.strategy, variant.conditioning_scale,
               variant.reference_factor, variant.gseg)
        if key not in cache:
            cache[key] = _run_benchmark(ctx, variant)
            cache[key].save(ctx.out / "reports" / f"scores_{variant.label}.json")
        return cache[key]

    inpainting_rows = []
    for strategy, scale in INPAINTING_SWEEP:
        eff_scale = cfg.conditioning_scale if scale is None else scale
        label = "zeroshot" if strategy == ZERO_SHOT else f"cond{scale:g}"
        variant = Variant(label, strategy, eff_scale if strategy == CONDITIONED else 0.0,
                          cfg.reference_factor, True)
        report = benchmark(variant)
        inpainting_rows.append({
            "strategy": strategy,
            "scale": None if strategy == ZERO_SHOT else eff_scale,
            **{k: v for k, v in report.aggregates.items() if not k.startswith("items")},
        })

    gseg_rows = []
    for gseg, factor in GSEG_LAMBDA_SWEEP:
        label = f"gseg{'on' if gseg else 'off'}_f{factor:g}"
        variant = Variant(label, cfg.strategy, cfg.conditioning_scale, factor, gseg)
        report = benchmark(variant)
        gseg_rows.append({
            "gseg": gseg,
            "reference_factor": factor,
            **{k: v for k, v in report.aggregates.items() if not k.startswith("items")},
        })

    consolidated = {
        "config": asdict(cfg),
        "code_version": code_version(),
        "inpainting_sweep": inpainting_rows,
        "gseg_lambda_sweep": gseg_rows,
    }
    path = ctx.out / "reports" / "ablation.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(consolidated, sort_keys=True, indent=2) + "\n")
    _write_ablation_tables(ctx.out / "reports" / "ablation.txt", consolidated)
    return consolidated


def _write_ablation_tables(path: Path, consolidated: dict) -> None:
    lines = ["inpainting sweep", "strategy      scale   subj-struct  subj-chrom  text"]
    for row in consolidated["inpainting_sweep"]:
        scale = "-" if row["scale"] is None else f"{row['scale']:.2f}"
        lines.append(
            f"{row['strategy']:<13s} {scale:>5s}   "
            f"{row.get('subject_structural', float('nan')):.4f}       "
            f"{row.get('subject_chromatic', float('nan')):.4f}      "
            f"{row.get('text', float('nan')):.4f}"
        )
    lines += ["", "background removal x reference factor",
              "gseg  factor  subj-struct  subj-chrom  text"]
    for row in consolidated["gseg_lambda_sweep"]:
        lines.append(
            f"{'on ' if row['gseg'] else 'off':<5s} {row['reference_factor']:<7.2f}"
            f"{row.get('subject_structural', float('nan')):.4f}       "
            f"{row.get('subject_chromatic', float('nan')):.4f}      "
            f"{row.get('text', float('nan')):.4f}"
        )
    path.write_text("\n".join(lines) + "\n")


def rescore_panels(cfg: ExperimentConfig, panels_dir, label: str = "default") -> ScoreReport:
    """Recompute a score report from previously generated panel images."""
    ctx = RunContext(cfg, need_model=False)
    report = ctx.report()
    panels = Path(panels_dir)
    for subject in ctx.subjects():
        refs = [load_image(ctx.dataset_dir / rel) for rel in subject["refs"]]
        for prompt_spec in ctx.prompts_of(subject):
            key = f"{subject['id']}|{prompt_spec['id']}"
            paths = sorted(panels.glob(f"{subject['id']}__{prompt_spec['id']}__*.png"))
            if not paths:
                report.add(key, subject=subject["id"], prompt=prompt_spec["id"],
                           error="FileNotFoundError: no panels")
                continue
            generated = [load_image(p) for p in paths]
            scores = _score_cell(ctx, generated, refs, prompt_spec["text"])
            report.add(key, subject=subject["id"], prompt=prompt_spec["id"], **scores)
    report.finalize()
    report.save(ctx.out / "reports" / f"rescore_{label}.json")
    return report
