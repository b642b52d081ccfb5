import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0x7EA)


def write_ppm(path, img):
    """Raw binary P6 writer (no engine code)."""
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(np.asarray(img, dtype=np.uint8).tobytes())
