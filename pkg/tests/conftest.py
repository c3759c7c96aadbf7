import numpy as np
import pytest

from refeval.core import BBox, ImageRef, ImageStore, SubjectInstance


@pytest.fixture
def store(tmp_path):
    return ImageStore(tmp_path / "images")


def random_image(rng, h=32, w=32):
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def make_subject(store: ImageStore, rng, entity="dog", h=32, w=32, bbox=None):
    ref = store.put(random_image(rng, h, w))
    bbox = bbox or BBox(2, 2, 8, 8)
    return SubjectInstance(frame=ref, entity=entity, bbox=bbox)


def rect_mask(h, w, y0, y1, x0, x1):
    mask = np.zeros((h, w), dtype=bool)
    mask[y0:y1, x0:x1] = True
    return mask
