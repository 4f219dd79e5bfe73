import numpy as np
import pytest
from PIL import Image


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def write_dataset(root, classes, images_per_class=2, size=(70, 56), rng=None):
    """Tiny dataset in the extractor's input layout; returns root."""
    rng = rng or np.random.default_rng(0)
    w, h = size
    for cls in classes:
        d = root / cls
        d.mkdir(parents=True)
        for i in range(images_per_class):
            arr = rng.integers(0, 255, size=(h, w, 3), dtype=np.uint8)
            Image.fromarray(arr, mode="RGB").save(d / f"img{i}.png")
            mask = np.zeros((h, w), dtype=np.uint8)
            y0 = int(rng.integers(0, h // 2))
            x0 = int(rng.integers(0, w // 2))
            mask[y0:y0 + h // 3, x0:x0 + w // 3] = 255
            Image.fromarray(mask, mode="L").save(
                d / f"img{i}.mask.png")
    return root
