"""Shared fixtures: a small dataset and quickly trained artifacts.

These are sized for fast unit tests; the acceptance suite builds its own
full-scale artifacts with the default configs.
"""

from __future__ import annotations

import pytest

from diptych.adapter import AdapterTrainConfig, train_condition_adapter
from diptych.dataset import GeneratorConfig, generate_dataset, load_training_items
from diptych.model import ModelConfig
from diptych.numerics import SeededRng
from diptych.training import TrainConfig, train_denoiser

TINY_MODEL = ModelConfig(panel=16, patch=4, dim=48, depth=2, heads=2, text_len=24)


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_dataset")
    cfg = GeneratorConfig(
        panel=16, singles=60, paired=60, unpaired=20,
        benchmark_subjects=3, benchmark_prompts=2, refs_per_subject=2,
        images_per_cell=2, styles=2, edits=2,
    )
    generate_dataset(cfg, SeededRng(0), out)
    return out


@pytest.fixture(scope="session")
def tiny_items(tiny_dataset_dir):
    return load_training_items(tiny_dataset_dir, TINY_MODEL.text_len).items


@pytest.fixture(scope="session")
def tiny_denoiser(tiny_items):
    cfg = TrainConfig(steps=120, batch_size=4, eval_every=60)
    return train_denoiser(tiny_items, TINY_MODEL, cfg, SeededRng(1))


@pytest.fixture(scope="session")
def tiny_model(tiny_denoiser):
    return tiny_denoiser[0]


@pytest.fixture(scope="session")
def tiny_adapter(tiny_model, tiny_items):
    cfg = AdapterTrainConfig(steps=60, batch_size=4, eval_every=30)
    adapter, history = train_condition_adapter(tiny_model, tiny_items, cfg, SeededRng(2))
    return adapter
