"""Session-scoped fixtures: the toy corpus and one trained toy checkpoint
shared by the model, search, oracle-user, and acceptance tests."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vibrotex import corpus, model

TOY_CORPUS_SEED = 11
TOY_SPLIT_SEED = 5
TOY_MODEL_SEED = 7


def build_toy_dataset() -> corpus.LabeledDataset:
    waves, labels, names = corpus.synth_corpus(
        corpus.toy_class_specs(), per_class=2, duration_s=5.0, seed=TOY_CORPUS_SEED
    )
    return corpus.build_dataset(waves, labels, names, corpus.toy_pipeline_config())


def train_toy_model(dataset: corpus.LabeledDataset):
    """The frozen toy benchmark run (deterministic end to end)."""
    train_idx, val_idx = corpus.stratified_split(
        dataset.labels, 0.1, seed=TOY_SPLIT_SEED
    )
    m = model.build_model(
        model.toy_model_config(dataset.n_classes),
        dataset.norm_stats,
        dataset.pipeline,
        seed=TOY_MODEL_SEED,
    )
    history = model.train(m, corpus.subset(dataset, train_idx), model.toy_train_config())
    return m, history, train_idx, val_idx


@pytest.fixture(scope="session")
def toy_dataset():
    return build_toy_dataset()


@pytest.fixture(scope="session")
def toy_run(toy_dataset):
    m, history, train_idx, val_idx = train_toy_model(toy_dataset)
    return {
        "model": m,
        "history": history,
        "train_idx": train_idx,
        "val_idx": val_idx,
        "params_hash": m.params_hash(),
        "dataset": toy_dataset,
    }


@pytest.fixture(scope="session")
def toy_model(toy_run):
    return toy_run["model"]


def mean_spectral_distance(recon: np.ndarray, target: np.ndarray) -> float:
    dists = []
    for a, b in zip(recon, target):
        num = np.linalg.norm(a - b)
        den = np.linalg.norm(a) + np.linalg.norm(b)
        dists.append(num / max(den, 1e-12))
    return float(np.mean(dists))
