import os

import numpy as np
import pytest

from cpgd.functions.codec import FramePlane
from cpgd.functions.frames_io import (
    from_unit_rgb,
    list_frame_files,
    read_frame_dir,
    read_yuv420,
    rgb_to_luma,
    to_unit_rgb,
    write_frame_dir,
    write_yuv420,
)
from cpgd.utils.errors import DataError
from tests.conftest import random_rgb_clip, write_rgb_frames


def test_rgb_to_luma_weights():
    rgb = np.zeros((1, 3, 3), np.uint8)
    rgb[0, 0] = (255, 0, 0)
    rgb[0, 1] = (0, 255, 0)
    rgb[0, 2] = (10, 20, 30)
    luma = rgb_to_luma(rgb)
    # 76.245, 149.685, 18.15
    np.testing.assert_array_equal(luma.samples, [[76, 150, 18]])


def test_frame_dir_round_trip(temp_dir, rng):
    frames = random_rgb_clip(rng, count=3, height=16, width=24)
    write_frame_dir(frames, temp_dir)
    assert [os.path.basename(p) for p in list_frame_files(temp_dir)] == [
        "frame_000000.png",
        "frame_000001.png",
        "frame_000002.png",
    ]
    for original, loaded in zip(frames, read_frame_dir(temp_dir)):
        np.testing.assert_array_equal(original, loaded)


def test_list_frame_files_orders_by_index_and_ignores_others(temp_dir, rng):
    frames = random_rgb_clip(rng, count=2, height=8, width=8)
    write_rgb_frames(temp_dir, frames)
    os.rename(
        os.path.join(temp_dir, "frame_000001.png"), os.path.join(temp_dir, "frame_000010.png")
    )
    open(os.path.join(temp_dir, "notes.txt"), "w").close()
    names = [os.path.basename(p) for p in list_frame_files(temp_dir)]
    assert names == ["frame_000000.png", "frame_000010.png"]


def test_missing_or_empty_frame_dir(temp_dir):
    with pytest.raises(DataError, match="not found"):
        list_frame_files(os.path.join(temp_dir, "absent"))
    with pytest.raises(DataError, match="no frame"):
        list_frame_files(temp_dir)


def test_inconsistent_frame_sizes(temp_dir, rng):
    write_rgb_frames(
        temp_dir,
        [
            rng.integers(0, 256, (8, 8, 3), dtype=np.uint8),
            rng.integers(0, 256, (8, 16, 3), dtype=np.uint8),
        ],
    )
    with pytest.raises(DataError, match="expected 8×8"):
        read_frame_dir(temp_dir)


def test_yuv420_round_trip(temp_dir, rng):
    path = os.path.join(temp_dir, "clip.yuv")
    frames = [FramePlane(rng.integers(0, 256, (6, 8))) for _ in range(4)]
    write_yuv420(path, frames)
    assert os.path.getsize(path) == 4 * (48 + 2 * 12)
    assert read_yuv420(path, 8, 6) == frames
    assert len(read_yuv420(path, 8, 6, max_frames=2)) == 2


def test_yuv420_partial_frame(temp_dir):
    path = os.path.join(temp_dir, "broken.yuv")
    with open(path, "wb") as f:
        f.write(bytes(100))
    with pytest.raises(DataError, match="whole number"):
        read_yuv420(path, 8, 6)


def test_unit_rgb_conversion_is_exact_for_8_bit(rng):
    frame = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
    tensor = to_unit_rgb(frame)
    assert tensor.shape == (3, 5, 7)
    assert tensor.dtype == np.float32
    np.testing.assert_array_equal(from_unit_rgb(tensor), frame)
