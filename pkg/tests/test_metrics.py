import json
import math

import numpy as np
import pytest

from cpgd.functions.codec import CodecConfig, FramePlane
from cpgd.functions.metrics import (
    PSNR_CAP,
    bench_alignment_cost,
    evaluate_sequences,
    psnr,
    search_sad_ops,
    ssim,
)
from cpgd.utils.errors import ShapeError


def ssim_loop(a, b):
    """Per-window weighted statistics with an explicit Gaussian, averaged over valid positions."""
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    size, sigma = 11, 1.5
    weights = np.array(
        [[math.exp(-((i - 5) ** 2 + (j - 5) ** 2) / (2 * sigma**2)) for j in range(size)] for i in range(size)]
    )
    weights /= weights.sum()
    c1 = (0.01 * 255) ** 2
    c2 = (0.03 * 255) ** 2
    values = []
    for y in range(a.shape[0] - size + 1):
        for x in range(a.shape[1] - size + 1):
            pa = a[y : y + size, x : x + size]
            pb = b[y : y + size, x : x + size]
            mu_a = (weights * pa).sum()
            mu_b = (weights * pb).sum()
            var_a = (weights * (pa - mu_a) ** 2).sum()
            var_b = (weights * (pb - mu_b) ** 2).sum()
            cov = (weights * (pa - mu_a) * (pb - mu_b)).sum()
            values.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
            )
    return float(np.mean(values))


def test_psnr_identical_is_capped():
    frame = np.full((8, 8), 37, np.uint8)
    assert psnr(frame, frame) == PSNR_CAP == 100.0


def test_psnr_known_values():
    a = np.zeros((4, 4), np.uint8)
    assert psnr(a, a + 1) == pytest.approx(20 * math.log10(255), abs=1e-9)
    assert psnr(a, a + 1) == pytest.approx(48.1308, abs=1e-4)
    assert psnr(a, np.full((4, 4), 255, np.uint8)) == pytest.approx(0.0, abs=1e-12)


def test_psnr_is_symmetric(rng):
    a = rng.integers(0, 256, (16, 16, 3))
    b = rng.integers(0, 256, (16, 16, 3))
    assert psnr(a, b) == psnr(b, a)


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


def test_ssim_identical_is_one(rng):
    frame = rng.integers(0, 256, (24, 24))
    assert ssim(frame, frame) == pytest.approx(1.0, abs=1e-9)


def test_ssim_matches_window_loop(rng):
    a = rng.integers(0, 256, (16, 18))
    b = np.clip(a + rng.integers(-30, 31, a.shape), 0, 255)
    assert ssim(a, b) == pytest.approx(ssim_loop(a, b), abs=1e-4)
    assert ssim(a, 255 - a) == pytest.approx(ssim_loop(a, 255 - a), abs=1e-4)


def test_ssim_constant_frames_closed_form():
    a_value, b_value = 100.0, 140.0
    c1 = (0.01 * 255) ** 2
    expected = (2 * a_value * b_value + c1) / (a_value**2 + b_value**2 + c1)
    a = np.full((12, 12), a_value)
    b = np.full((12, 12), b_value)
    assert ssim(a, b) == pytest.approx(expected, abs=1e-6)


def test_ssim_rgb_uses_luma(rng):
    a = rng.integers(0, 256, (12, 12, 3))
    gray = a @ np.array([0.299, 0.587, 0.114])
    assert ssim(a, a) == pytest.approx(ssim(gray, gray), abs=1e-9)


def test_ssim_rejects_small_frames():
    with pytest.raises(ShapeError, match="at least 11"):
        ssim(np.zeros((10, 32)), np.zeros((10, 32)))


def test_evaluate_sequences_report(rng):
    a = [rng.integers(0, 256, (16, 16, 3)) for _ in range(3)]
    b = [a[0], np.clip(a[1] + 1, 0, 255), a[2]]
    report = evaluate_sequences(a, b, workers=2)
    assert list(report.frames["frame"]) == [0, 1, 2]
    assert report.frames["psnr_db"][0] == 100.0
    assert report.frames["psnr_db"][1] < 100.0
    assert report.psnr_db == pytest.approx(report.frames["psnr_db"].mean())
    as_dict = report.to_dict()
    assert set(as_dict) == {"psnr_db", "ssim", "frames"}
    assert len(as_dict["frames"]) == 3
    json.dumps(as_dict)
    table = report.to_table()
    assert "mean" in table
    assert "psnr_db" in table


def test_evaluate_sequences_length_mismatch(rng):
    a = [rng.integers(0, 256, (16, 16)) for _ in range(2)]
    with pytest.raises(ShapeError, match="2 vs 1"):
        evaluate_sequences(a, a[:1])


def test_search_sad_ops_count():
    # 16 blocks × 33² candidates × 256 pixels
    assert search_sad_ops(64, 64, CodecConfig(16, 16)) == 4_460_544
    assert search_sad_ops(64, 64, CodecConfig(16, 16), pairs=3) == 3 * 4_460_544
    # partial edge blocks count as whole blocks
    assert search_sad_ops(40, 24, CodecConfig(16, 1)) == 3 * 2 * 9 * 256


def test_bench_alignment_cost(static_clip, small_cfg):
    report = bench_alignment_cost(static_clip, small_cfg)
    assert report.sad_ops_reused == 0
    assert report.pairs == 2
    assert report.sad_ops_search == search_sad_ops(64, 64, small_cfg, pairs=2)
    assert report.grids_identical
    assert set(report.to_dict()) == {
        "sad_ops_reused",
        "sad_ops_search",
        "time_reused_s",
        "time_search_s",
        "pairs",
        "grids_identical",
    }
    assert "full search" in report.to_table()


def test_bench_single_frame_clip(textured_plane, small_cfg):
    report = bench_alignment_cost([FramePlane(textured_plane.samples)], small_cfg)
    assert report.sad_ops_reused == 0
    assert report.sad_ops_search == 0
    assert report.pairs == 0
    assert report.grids_identical


def test_bench_rejects_empty_clip(small_cfg):
    with pytest.raises(ShapeError, match="empty"):
        bench_alignment_cost([], small_cfg)
