import numpy as np
import pytest

from promi.prototypes import SupportBatch


def random_unit_rows(rng: np.random.Generator, m: int, d: int) -> np.ndarray:
    v = rng.normal(size=(m, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_batch(rng: np.random.Generator, max_depth: int = 4,
                 max_vectors: int = 64) -> SupportBatch:
    """Random unit vectors with random two-class labels."""
    d = int(rng.integers(2, max_depth + 1))
    m = int(rng.integers(4, max_vectors + 1))
    vectors = random_unit_rows(rng, m, d).astype(np.float32)
    labels = rng.integers(0, 2, size=m).astype(np.uint8)
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    return SupportBatch(vectors=vectors, labels=labels)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
