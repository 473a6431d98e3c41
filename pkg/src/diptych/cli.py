"""Command line interface for the experiment harness.

Subcommands cover the full workflow: dataset generation, denoiser and
adapter training, the application modes (generate / stylize / edit), the
two evaluation protocols, and re-scoring of saved panels.  A JSON config
file supplies defaults; explicit flags override it.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .adapter import AdapterTrainConfig, train_condition_adapter
from .dataset import GeneratorConfig, generate_dataset, load_training_items
from .model import ModelConfig
from .numerics import SeededRng
from .pipeline import (
    ExperimentConfig,
    rescore_panels,
    run_ablation,
    run_diptych_gen_eval,
    run_editing,
    run_stylized,
    run_subject_generation,
)
from .training import TrainConfig, train_denoiser

log = logging.getLogger("diptych")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON experiment config file")
    parser.add_argument("--seed", type=int, help="run seed")
    parser.add_argument("--dataset", dest="dataset_dir", help="dataset directory")
    parser.add_argument("--model", dest="model_path", help="denoiser checkpoint")
    parser.add_argument("--adapter", dest="adapter_path", help="adapter checkpoint")
    parser.add_argument("--out", dest="out_dir", help="output directory")
    parser.add_argument("--steps", type=int, help="sampler steps")
    parser.add_argument("--lambda", dest="reference_factor", type=float,
                        help="reference attention rescale factor")
    parser.add_argument("--cond-scale", dest="conditioning_scale", type=float,
                        help="adapter conditioning scale")
    parser.add_argument("--no-gseg", dest="gseg", action="store_false", default=None,
                        help="skip background removal")
    parser.add_argument("--strategy", choices=("zero-shot", "conditioned"),
                        help="inpainting strategy")
    parser.add_argument("--images-per-cell", dest="images_per_cell", type=int)
    parser.add_argument("--subjects-limit", dest="subjects_limit", type=int)
    parser.add_argument("--prompts-limit", dest="prompts_limit", type=int)
    parser.add_argument("--workers", type=int)


_CONFIG_KEYS = (
    "seed", "dataset_dir", "model_path", "adapter_path", "out_dir", "steps",
    "reference_factor", "conditioning_scale", "gseg", "strategy",
    "images_per_cell", "subjects_limit", "prompts_limit", "workers",
)


def _experiment_config(args, mode: str) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_file(args.config).with_overrides(mode=mode)
    else:
        cfg = ExperimentConfig(mode=mode)
    overrides = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
    return cfg.with_overrides(**overrides)


def _cmd_dataset(args) -> int:
    cfg = GeneratorConfig(
        panel=args.panel, singles=args.singles, paired=args.paired,
        unpaired=args.unpaired, benchmark_subjects=args.benchmark_subjects,
        benchmark_prompts=args.benchmark_prompts, refs_per_subject=args.refs,
        images_per_cell=args.images_per_cell or 4,
    )
    manifest = generate_dataset(cfg, SeededRng(args.seed or 0), args.out_dir or "dataset")
    log.info("wrote %d items to %s", len(manifest["items"]), args.out_dir or "dataset")
    return 0


def _cmd_train(args) -> int:
    model_cfg = ModelConfig(
        panel=args.panel, patch=args.patch, dim=args.dim, depth=args.depth,
        heads=args.heads, text_len=args.text_len,
    )
    train_cfg = TrainConfig(
        steps=args.train_steps, batch_size=args.batch_size, lr=args.lr,
        eval_every=args.eval_every,
    )
    kinds = ("single", "paired") if args.kinds == "standard" else tuple(args.kinds.split(","))
    loaded = load_training_items(args.dataset_dir or "dataset", model_cfg.text_len, kinds)
    model, history = train_denoiser(loaded.items, model_cfg, train_cfg,
                                    SeededRng(args.seed or 0))
    out = Path(args.model_path or "model.ckpt")
    model.save(out)
    out.with_suffix(".history.json").write_text(
        json.dumps(history.as_dict(), sort_keys=True, indent=2) + "\n"
    )
    log.info("held-out loss %.4f -> %.4f (%d params) saved to %s",
             history.initial_loss, history.final_loss, model.parameter_count(), out)
    return 0


def _cmd_train_adapter(args) -> int:
    from .model import DenoiserModel

    model = DenoiserModel.load(args.model_path or "model.ckpt")
    train_cfg = AdapterTrainConfig(
        steps=args.train_steps, batch_size=args.batch_size, lr=args.lr,
        eval_every=args.eval_every,
    )
    loaded = load_training_items(args.dataset_dir or "dataset", model.config.text_len,
                                 ("single", "paired"))
    adapter, history = train_condition_adapter(model, loaded.items, train_cfg,
                                               SeededRng(args.seed or 0))
    out = Path(args.adapter_path or "adapter.ckpt")
    adapter.save(out)
    out.with_suffix(".history.json").write_text(
        json.dumps(history.as_dict(), sort_keys=True, indent=2) + "\n"
    )
    log.info("adapter held-out loss %.4f -> %.4f saved to %s",
             history.initial_loss, history.final_loss, out)
    return 0


def _cmd_generate(args) -> int:
    report = run_subject_generation(_experiment_config(args, "subject"))
    _print_aggregates(report.aggregates)
    return 0


def _cmd_stylize(args) -> int:
    report = run_stylized(_experiment_config(args, "style"))
    _print_aggregates(report.aggregates)
    return 0


def _cmd_edit(args) -> int:
    report = run_editing(_experiment_config(args, "edit"))
    _print_aggregates(report.aggregates)
    return 0


def _cmd_diptych_eval(args) -> int:
    report = run_diptych_gen_eval(_experiment_config(args, "diptych-gen"))
    _print_aggregates(report.aggregates)
    return 0


def _cmd_ablate(args) -> int:
    consolidated = run_ablation(_experiment_config(args, "ablation"))
    for row in consolidated["gseg_lambda_sweep"]:
        log.info("gseg=%s factor=%.2f subject=%.4f text=%.4f",
                 row["gseg"], row["reference_factor"],
                 row.get("subject_structural", float("nan")),
                 row.get("text", float("nan")))
    return 0


def _cmd_score(args) -> int:
    report = rescore_panels(_experiment_config(args, "subject"), args.panels, args.label)
    _print_aggregates(report.aggregates)
    return 0


def _print_aggregates(aggregates: dict) -> None:
    for key in sorted(aggregates):
        print(f"{key}: {aggregates[key]}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diptych",
                                     description="two-panel inpainting experiment harness")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="generate the sprite corpus and benchmark")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", dest="out_dir", default="dataset")
    p.add_argument("--panel", type=int, default=32)
    p.add_argument("--singles", type=int, default=900)
    p.add_argument("--paired", type=int, default=900)
    p.add_argument("--unpaired", type=int, default=300)
    p.add_argument("--benchmark-subjects", type=int, default=10)
    p.add_argument("--benchmark-prompts", type=int, default=5)
    p.add_argument("--refs", type=int, default=3)
    p.add_argument("--images-per-cell", type=int, default=4)
    p.set_defaults(func=_cmd_dataset)

    p = sub.add_parser("train", help="train the denoiser")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dataset", dest="dataset_dir", default="dataset")
    p.add_argument("--model", dest="model_path", default="model.ckpt")
    p.add_argument("--panel", type=int, default=32)
    p.add_argument("--patch", type=int, default=4)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--text-len", type=int, default=48)
    p.add_argument("--train-steps", type=int, default=TrainConfig.steps)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--lr", type=float, default=TrainConfig.lr)
    p.add_argument("--eval-every", type=int, default=TrainConfig.eval_every)
    p.add_argument("--kinds", default="standard",
                   help="comma-separated item kinds, or 'standard' (single+paired)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("train-adapter", help="train the inpainting adapter")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dataset", dest="dataset_dir", default="dataset")
    p.add_argument("--model", dest="model_path", default="model.ckpt")
    p.add_argument("--adapter", dest="adapter_path", default="adapter.ckpt")
    p.add_argument("--train-steps", type=int, default=AdapterTrainConfig.steps)
    p.add_argument("--batch-size", type=int, default=AdapterTrainConfig.batch_size)
    p.add_argument("--lr", type=float, default=AdapterTrainConfig.lr)
    p.add_argument("--eval-every", type=int, default=AdapterTrainConfig.eval_every)
    p.set_defaults(func=_cmd_train_adapter)

    for name, func, helptext in (
        ("generate", _cmd_generate, "subject-driven generation over the benchmark"),
        ("stylize", _cmd_stylize, "stylized generation (reference factor forced to 1)"),
        ("edit", _cmd_edit, "subject-driven editing with rectangle masks"),
        ("diptych-eval", _cmd_diptych_eval, "two-panel generation split evaluation"),
        ("ablate", _cmd_ablate, "conditioning-scale and gseg/factor sweeps"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("score", help="recompute scores from saved panels")
    _add_common(p)
    p.add_argument("--panels", required=True, help="directory of generated panels")
    p.add_argument("--label", default="default")
    p.set_defaults(func=_cmd_score)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
