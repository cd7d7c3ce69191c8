"""Deterministic synthetic census-style generator for offline runs and tests.

The generator produces a tabular dataset whose labels encode a strong direct
dependence on the sensitive attribute plus several redundant proxies, so a
classifier trained on it is measurably unfair (low p%-rule) and mitigation
has room to work.  Everything is driven by one integer seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from .data_ingest import BinarizeRule, DatasetManifest

ROLE_LEVELS = ("head", "partner", "single")
SECTOR_LEVELS = ("agriculture", "construction", "education", "finance", "services")
REGION_LEVELS = ("north", "east", "south", "west")


def make_biased_census(n: int = 6000, seed: int = 0) -> pd.DataFrame:
    """Return a DataFrame with sensitive column ``sex``, label ``income``.

    ``sex``: 'male' (privileged) / 'female'.  ``income``: 'high' / 'low'.
    The latent score mixes education, hours, age and capital with a direct
    sex effect and with ``household_role``/``sector`` acting as proxies.
    """
    rng = np.random.default_rng(seed)
    s = rng.random(n) < 0.5  # True = privileged

    role_p = np.where(s[:, None],
                      np.array([[0.70, 0.10, 0.20]]),
                      np.array([[0.15, 0.55, 0.30]]))
    role = _sample_levels(rng, role_p, ROLE_LEVELS)

    sector_p = np.where(s[:, None],
                        np.array([[0.10, 0.25, 0.10, 0.25, 0.30]]),
                        np.array([[0.05, 0.02, 0.33, 0.15, 0.45]]))
    sector = _sample_levels(rng, sector_p, SECTOR_LEVELS)

    region = _sample_levels(rng, np.full((n, 4), 0.25), REGION_LEVELS)

    years_edu = np.clip(rng.normal(11.0 + 0.8 * s, 2.6), 4, 20).round(1)
    hours = np.clip(rng.normal(38.0 + 3.0 * s, 7.0), 10, 80).round(1)
    age = np.clip(rng.normal(41.0, 11.0, n), 18, 90).round(0)
    capital = np.where(rng.random(n) < 0.25, rng.gamma(2.0, 1800.0, n), 0.0).round(0)

    z = (
        0.55 * (years_edu - 11.0)
        + 0.22 * (hours - 38.0)
        + 0.045 * (age - 41.0)
        + 0.00035 * capital
        + 0.95 * s
        + 0.85 * (role == "head")
        + 0.55 * np.isin(sector, ("finance", "construction"))
        + rng.normal(0.0, 1.1, n)
    )
    income = np.where(z > np.quantile(z, 0.70), "high", "low")

    return pd.DataFrame({
        "age": age,
        "years_edu": years_edu,
        "hours": hours,
        "capital": capital,
        "household_role": role,
        "sector": sector,
        "region": region,
        "sex": np.where(s, "male", "female"),
        "income": income,
    })


def _sample_levels(rng, probs, levels):
    cum = np.cumsum(probs, axis=1)
    draws = rng.random(len(probs))[:, None]
    idx = (draws >= cum).sum(axis=1)
    return np.asarray(levels)[idx]


def write_synthetic_csv(path, n: int = 6000, seed: int = 0) -> Path:
    """Materialize the generated table as CSV (the normal ingest path reads files)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    make_biased_census(n=n, seed=seed).to_csv(path, index=False)
    return path


def synthetic_manifest(csv_path, name: str = "synth",
                       split_seed: int = 0, n: int = 6000, gen_seed: int = 0) -> DatasetManifest:
    """Manifest wired to the generator's columns."""
    return DatasetManifest(
        source_path=str(csv_path),
        feature_columns=(
            ("age", "numeric"),
            ("years_edu", "numeric"),
            ("hours", "numeric"),
            ("capital", "numeric"),
            ("household_role", "categorical"),
            ("sector", "categorical"),
            ("region", "categorical"),
        ),
        sensitive_column="sex",
        privileged_rule=BinarizeRule(equals="male"),
        label_column="income",
        favorable_rule=BinarizeRule(equals="high"),
        split_seed=split_seed,
        name=name,
        synthetic={"n": n, "seed": gen_seed},
    )


def ensure_dataset(manifest: DatasetManifest) -> DatasetManifest:
    """Generate the CSV for a manifest that carries a ``synthetic`` block, if absent."""
    path = Path(manifest.source_path)
    if manifest.synthetic is not None and not path.exists():
        write_synthetic_csv(path, n=int(manifest.synthetic.get("n", 6000)),
                            seed=int(manifest.synthetic.get("seed", 0)))
    return manifest
