"""Shared fixtures: a tiny rendered dataset and a small trained retrieval
model, built once per session."""

import numpy as np
import pytest
import torch

from egoexo import flow as flow_mod
from egoexo import retrieval, toygen

torch.set_num_threads(2)

TINY_IMAGE = 64
TINY_LEN = 12


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """2 scenes x 3 sequences x 12 frames at 64px; per scene the sequences
    land in train/val/test in order."""
    root = tmp_path_factory.mktemp("tiny_ds")
    manifest = toygen.generate_dataset(
        root, scenes=2, seqs_per_scene=3, length=TINY_LEN, seed=123,
        image_size=TINY_IMAGE,
    )
    return manifest


@pytest.fixture(scope="session")
def tiny_dataset_with_flow(tiny_dataset):
    flow_mod.compute_manifest_flows(tiny_dataset, split="all", sigma=1.5)
    return tiny_dataset


@pytest.fixture(scope="session")
def tiny_retr_cfg():
    return retrieval.RetrievalConfig(
        variant="rgb", input_size=TINY_IMAGE, width_base=8, epochs=2,
        batch_size=16, seed=0, validate_every=0,
    )


@pytest.fixture(scope="session")
def tiny_retr_model(tiny_dataset, tiny_retr_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_retr")
    ckpts, history, model = retrieval.train(
        tiny_dataset, tiny_retr_cfg, out_dir=out
    )
    return {"model": model, "ckpt": ckpts[-1], "history": history, "out": out}


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
