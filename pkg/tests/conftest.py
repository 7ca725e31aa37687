"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from facegallery.core import Gallery, IdentityLabel
from facegallery.encoder import CacheRecord, EmbeddingCache


def unit_rows(rng: np.random.Generator, c: int, d: int) -> np.ndarray:
    m = rng.standard_normal((c, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def make_gallery(
    c: int = 3, d: int = 8, seed: int = 0, logit_scale: float = 100.0
) -> Gallery:
    rng = np.random.default_rng(seed)
    labels = [IdentityLabel(f"id_{i}", i) for i in range(c)]
    prompts = [f"prompt {i}" for i in range(c)]
    return Gallery(unit_rows(rng, c, d), labels, prompts, logit_scale)


def make_cache(
    vectors: np.ndarray, label_ids: list[int], fingerprint: str = "fp", dim: int | None = None
) -> EmbeddingCache:
    vectors = np.asarray(vectors, dtype=np.float64)
    records = tuple(
        CacheRecord(f"img_{i:03d}.png", lid, v)
        for i, (v, lid) in enumerate(zip(vectors, label_ids))
    )
    return EmbeddingCache(dim or vectors.shape[1], "test-backend", fingerprint, records)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
