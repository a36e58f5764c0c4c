import os
import tempfile

import imageio.v3 as iio
import numpy as np
import pytest

from cpgd.functions.codec import CodecConfig, FramePlane


@pytest.fixture
def temp_dir():
    with tempfile.TemporaryDirectory() as td:
        yield td


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def textured_plane():
    """Smooth 64×64 luma texture with no flat regions."""
    yy, xx = np.mgrid[0:64, 0:64]
    samples = 128 + 60 * np.sin(yy / 5.0) * np.cos(xx / 7.0) + 30 * np.sin((xx + 2 * yy) / 9.0)
    return FramePlane(np.clip(np.round(samples), 0, 255))


@pytest.fixture
def static_clip(textured_plane):
    return [FramePlane(textured_plane.samples.copy()) for _ in range(3)]


@pytest.fixture
def small_cfg():
    return CodecConfig(block_size=16, search_radius=4, quant=1, rle=True)


def write_rgb_frames(directory, frames):
    """Write H×W×3 uint8 arrays as frame_%06d.png."""
    os.makedirs(directory, exist_ok=True)
    for index, frame in enumerate(frames):
        iio.imwrite(os.path.join(directory, f"frame_{index:06d}.png"), frame)
    return directory


def random_rgb_clip(rng, count=3, height=64, width=64):
    return [rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8) for _ in range(count)]
