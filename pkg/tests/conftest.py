"""Shared fixtures: cached synthetic datasets and small trained models."""

from __future__ import annotations

import numpy as np
import pytest

from fairdelta.data_ingest import load_dataset
from fairdelta.mlp_core import TrainConfig, train_biased
from fairdelta.synthetic import synthetic_manifest, write_synthetic_csv


@pytest.fixture(scope="session")
def synth_splits(tmp_path_factory):
    """Standard 6000-row generated census, split 50/50. Expensive parts cached."""
    root = tmp_path_factory.mktemp("synth_data")
    csv = write_synthetic_csv(root / "census.csv", n=6000, seed=0)
    manifest = synthetic_manifest(csv, name="synth")
    return load_dataset(manifest)


@pytest.fixture(scope="session")
def small_splits(tmp_path_factory):
    """A 1200-row generated dataset for tests that train models repeatedly."""
    root = tmp_path_factory.mktemp("small_data")
    csv = write_synthetic_csv(root / "census.csv", n=1200, seed=7)
    manifest = synthetic_manifest(csv, name="small", n=1200, gen_seed=7)
    return load_dataset(manifest)


@pytest.fixture(scope="session")
def small_model(small_splits):
    train, _ = small_splits
    return train_biased(train, TrainConfig(hidden_sizes=(16,), epochs=8, seed=3))


def random_scores(rng: np.random.Generator, n: int) -> np.ndarray:
    """Scores strictly inside (0, 1)."""
    return rng.uniform(0.01, 0.99, size=n)
