"""
Full-reference quality metrics and the motion-vector reuse benchmark.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.signal import convolve2d

from cpgd.functions.codec import block_match_full, decode_sequence, encode_sequence, grid_extent
from cpgd.functions.frames_io import LUMA_WEIGHTS
from cpgd.utils.errors import ShapeError

logger = logging.getLogger("cpgd")

PSNR_CAP = 100.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"cannot compare frames of shape {a.shape} and {b.shape}")
    return a, b


def psnr(a, b, peak=255.0):
    """
    Peak signal-to-noise ratio, capped at 100 dB for identical inputs.

    :param a: Frame (any shape, 8-bit range)
    :param b: Frame of the same shape
    :param peak: Peak signal value
    :type peak: float
    :return: PSNR in dB
    :rtype: float
    """
    a, b = _check_pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak**2 / mse))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    coords = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(coords**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _luma(x):
    if x.ndim == 3:
        return x[..., :3] @ LUMA_WEIGHTS
    return x


def ssim(a, b):
    """
    Mean SSIM over valid window positions (11×11 Gaussian, σ = 1.5, K1 = 0.01,
    K2 = 0.03, L = 255). RGB inputs are compared on luma.

    :param a: Frame H×W or H×W×3
    :param b: Frame of the same shape
    :return: SSIM in [-1, 1]
    :rtype: float
    """
    a, b = _check_pair(a, b)
    a, b = _luma(a), _luma(b)
    if min(a.shape) < SSIM_WINDOW:
        raise ShapeError(f"SSIM needs frames of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {a.shape}")

    window = gaussian_window()
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2

    def filt(x):
        return convolve2d(x, window, mode="valid")

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(np.clip(ssim_map.mean(), -1.0, 1.0))


@dataclass
class MetricReport:
    """Per-frame PSNR/SSIM (``frames`` DataFrame) and their sequence means."""

    frames: pd.DataFrame

    @property
    def psnr_db(self):
        return float(self.frames["psnr_db"].mean())

    @property
    def ssim(self):
        return float(self.frames["ssim"].mean())

    def to_dict(self):
        return {
            "psnr_db": self.psnr_db,
            "ssim": self.ssim,
            "frames": self.frames.to_dict(orient="records"),
        }

    def to_table(self):
        table = self.frames.copy()
        mean = pd.DataFrame(
            [{"frame": "mean", "psnr_db": self.psnr_db, "ssim": self.ssim}]
        )
        table = pd.concat([table.astype({"frame": object}), mean], ignore_index=True)
        return table.to_string(index=False, float_format=lambda v: f"{v:.4f}")


def evaluate_sequences(a_frames, b_frames, workers=1):
    """
    PSNR and SSIM for every frame pair.

    :param a_frames: Frames under test
    :type a_frames: list
    :param b_frames: Reference frames
    :type b_frames: list
    :param workers: Threads evaluating frames
    :type workers: int
    :rtype: MetricReport
    """
    if len(a_frames) != len(b_frames):
        raise ShapeError(f"sequences differ in length: {len(a_frames)} vs {len(b_frames)}")

    def score(pair):
        a, b = pair
        return psnr(a, b), ssim(a, b)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        scores = list(pool.map(score, zip(a_frames, b_frames)))
    frames = pd.DataFrame(
        {
            "frame": np.arange(len(scores)),
            "psnr_db": [s[0] for s in scores],
            "ssim": [s[1] for s in scores],
        }
    )
    return MetricReport(frames)


@dataclass
class CostReport:
    sad_ops_reused: int
    sad_ops_search: int
    time_reused_s: float
    time_search_s: float
    pairs: int
    grids_identical: bool

    def to_dict(self):
        return {
            "sad_ops_reused": self.sad_ops_reused,
            "sad_ops_search": self.sad_ops_search,
            "time_reused_s": self.time_reused_s,
            "time_search_s": self.time_search_s,
            "pairs": self.pairs,
            "grids_identical": self.grids_identical,
        }

    def to_table(self):
        table = pd.DataFrame(
            [
                {"path": "reuse decoded MVs", "sad_ops": self.sad_ops_reused, "seconds": self.time_reused_s},
                {"path": "full search", "sad_ops": self.sad_ops_search, "seconds": self.time_search_s},
            ]
        )
        return table.to_string(index=False, float_format=lambda v: f"{v:.4f}")


def search_sad_ops(width, height, cfg, pairs=1):
    """
    Pixel-level SAD operations of a full search: blocks × (2r+1)² × block_size² per pair.

    :rtype: int
    """
    blocks = grid_extent(width, cfg.block_size) * grid_extent(height, cfg.block_size)
    return pairs * blocks * (2 * cfg.search_radius + 1) ** 2 * cfg.block_size**2


def bench_alignment_cost(frames, cfg, workers=1):
    """
    Compare reading motion vectors out of a stream with recomputing them.

    :param frames: Luma planes of the clip; a single frame has no pairs to align
    :type frames: list
    :param cfg: Codec configuration
    :type cfg: CodecConfig
    :param workers: Threads used by the search path
    :type workers: int
    :rtype: CostReport
    """
    stream = encode_sequence(frames, cfg, workers)
    if len(frames) == 1:
        return CostReport(0, 0, 0.0, 0.0, pairs=0, grids_identical=True)

    start = time.perf_counter()
    decoded = decode_sequence(stream)
    reused = decoded.motion[1:]
    time_reused = time.perf_counter() - start

    start = time.perf_counter()
    searched = [
        block_match_full(decoded.frames[i - 1], frames[i], cfg, workers)
        for i in range(1, len(frames))
    ]
    time_search = time.perf_counter() - start

    report = CostReport(
        sad_ops_reused=0,
        sad_ops_search=search_sad_ops(frames[0].width, frames[0].height, cfg, len(searched)),
        time_reused_s=time_reused,
        time_search_s=time_search,
        pairs=len(searched),
        grids_identical=all(a == b for a, b in zip(reused, searched)),
    )
    logger.info(
        f"MV reuse: {report.sad_ops_reused} SAD ops in {time_reused:.4f}s; "
        f"search: {report.sad_ops_search} SAD ops in {time_search:.4f}s"
    )
    return report
