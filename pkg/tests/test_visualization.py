import os

import numpy as np
import pandas as pd

from cpgd.functions.codec import MvGrid
from cpgd.functions.metrics import MetricReport
from cpgd.functions.prior_extract import BACKWARD, augment_dataset
from cpgd.visualization.prior_analysis import (
    plot_metric_report,
    plot_motion_field,
    plot_priors,
    plot_residual_map,
)


def test_plot_motion_field(temp_dir, rng, textured_plane):
    mv = MvGrid(rng.integers(-4, 5, (4, 4, 2)), 16)
    path = os.path.join(temp_dir, "mv.png")
    assert plot_motion_field(mv, path, textured_plane.samples) == path
    assert os.path.getsize(path) > 0


def test_plot_residual_map(temp_dir, rng):
    path = os.path.join(temp_dir, "cr.png")
    assert plot_residual_map(rng.random((1, 24, 40)).astype(np.float32), path) == path
    assert os.path.getsize(path) > 0


def test_plot_metric_report(temp_dir):
    report = MetricReport(
        pd.DataFrame({"frame": [0, 1, 2], "psnr_db": [30.0, 31.5, 29.0], "ssim": [0.9, 0.92, 0.88]})
    )
    path = os.path.join(temp_dir, "metrics.png")
    plot_metric_report(report, path)
    assert os.path.getsize(path) > 0


def test_plot_priors_backward(temp_dir, static_clip, small_cfg):
    priors = os.path.join(temp_dir, "priors")
    augment_dataset(static_clip, small_cfg, priors)
    out = os.path.join(temp_dir, "plots")
    paths = plot_priors(priors, 0, out, direction=BACKWARD)
    assert [os.path.basename(p) for p in paths] == [
        "frame_000000_backward_mv.png",
        "frame_000000_backward_cr.png",
    ]
    assert all(os.path.isfile(p) for p in paths)
