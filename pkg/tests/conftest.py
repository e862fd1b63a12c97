"""Shared fixtures and dataset builders."""

from __future__ import annotations

import numpy as np
import pytest

from scoutcv.dataset import DatasetManifest, PlayerRecord, QualityClass

PAPER_RAW_COUNTS = (607, 352, 327, 237, 146)
PAPER_BALANCED_COUNTS = (300, 300, 300, 230, 140)


def make_manifest(class_counts, year: int = 2000, prefix: str = "p") -> DatasetManifest:
    """Synthetic manifest with the given per-class record counts."""
    records = []
    i = 0
    for code, count in enumerate(class_counts):
        for _ in range(count):
            records.append(
                PlayerRecord(
                    id=f"{prefix}{i:05d}",
                    name=f"player {i}",
                    draft_year=year,
                    label=QualityClass(code),
                    feature_ref=f"feat-{i}",
                )
            )
            i += 1
    return DatasetManifest(records=tuple(records))


def centroid_dataset(
    per_class: int = 200,
    dim: int = 32,
    sigma: float = 1.0,
    separation: float = 6.0,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Well-separated 5-class Gaussian blobs for learning tests."""
    if dim < 5:
        raise ValueError("need dim >= 5 for 5 class centroids")
    rng = np.random.default_rng(seed)
    feats = []
    labels = []
    for c in range(5):
        centroid = np.zeros(dim)
        centroid[c] = separation
        feats.append(centroid + sigma * rng.standard_normal((per_class, dim)))
        labels.append(np.full(per_class, c))
    return np.concatenate(feats), np.concatenate(labels)


@pytest.fixture
def paper_shaped_manifest() -> DatasetManifest:
    return make_manifest(PAPER_RAW_COUNTS)
