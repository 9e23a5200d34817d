import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


def random_blob_mask(rng, height=48, width=48, min_area=100):
    """Single-component blob grown by seeded random dilation (test oracle input)."""
    from scipy import ndimage

    while True:
        mask = np.zeros((height, width), dtype=bool)
        cy = int(rng.integers(height // 4, 3 * height // 4))
        cx = int(rng.integers(width // 4, 3 * width // 4))
        mask[cy, cx] = True
        steps = int(rng.integers(8, 20))
        for _ in range(steps):
            grown = ndimage.binary_dilation(mask, iterations=1)
            border = grown & ~mask
            ys, xs = np.nonzero(border)
            if len(ys) == 0:
                break
            keep = rng.random(len(ys)) < 0.8
            mask[ys[keep], xs[keep]] = True
        mask[0, :] = mask[-1, :] = False
        mask[:, 0] = mask[:, -1] = False
        labeled, count = ndimage.label(mask, structure=np.ones((3, 3), int))
        if count == 0:
            continue
        sizes = ndimage.sum_labels(mask, labeled, index=np.arange(1, count + 1))
        mask = labeled == (1 + int(np.argmax(sizes)))
        if mask.sum() >= min_area:
            return mask


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
