import logging
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import seaborn as sns  # noqa: E402

from cpgd.functions.prior_extract import read_sidecars  # noqa: E402

# Set the style for all visualizations
plt.style.use("ggplot")
sns.set_palette("colorblind")

logger = logging.getLogger("cpgd.visualization")


def plot_motion_field(mv, output_path, frame=None):
    """
    Quiver plot of block motion vectors, drawn over the luma frame when given.

    :param mv: Block motion vectors
    :type mv: MvGrid
    :param output_path: PNG path
    :type output_path: str
    :param frame: Optional H×W or H×W×3 uint8 background
    :type frame: numpy.ndarray
    :return: output_path
    :rtype: str
    """
    logger.info("Generating motion vector plot")
    bs = mv.block_size
    ys, xs = np.mgrid[0 : mv.blocks_y, 0 : mv.blocks_x]
    centers_y = ys * bs + bs / 2
    centers_x = xs * bs + bs / 2
    # vectors point from the block to where its match sits in the reference
    dy = mv.vectors[..., 0].astype(float)
    dx = mv.vectors[..., 1].astype(float)

    fig, ax = plt.subplots(figsize=(10, 10 * mv.blocks_y / max(mv.blocks_x, 1)))
    if frame is not None:
        ax.imshow(frame, cmap="gray" if np.ndim(frame) == 2 else None)
    ax.quiver(
        centers_x, centers_y, dx, dy, angles="xy", scale_units="xy", scale=1, color="C1"
    )
    ax.set_xlim(0, mv.blocks_x * bs)
    ax.set_ylim(mv.blocks_y * bs, 0)
    ax.set_title("Motion vectors", fontsize=16)
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(output_path)
    plt.close(fig)
    logger.info(f"Saved motion vector plot to {output_path}")
    return output_path


def plot_residual_map(res, output_path):
    """
    Heatmap of a normalized residual map.

    :param res: Residual map 1×H×W in [0, 1]
    :type res: numpy.ndarray
    :param output_path: PNG path
    :type output_path: str
    :return: output_path
    :rtype: str
    """
    logger.info("Generating coding residual heatmap")
    plane = np.asarray(res)[0]
    fig, ax = plt.subplots(figsize=(10, 10 * plane.shape[0] / plane.shape[1]))
    sns.heatmap(
        plane, vmin=0.0, vmax=1.0, cmap="magma", xticklabels=False, yticklabels=False, ax=ax
    )
    ax.set_title("Coding residual magnitude", fontsize=16)
    fig.tight_layout()
    fig.savefig(output_path)
    plt.close(fig)
    logger.info(f"Saved coding residual heatmap to {output_path}")
    return output_path


def plot_metric_report(report, output_path):
    """
    Per-frame PSNR and SSIM lines.

    :param report: Metric report
    :type report: MetricReport
    :param output_path: PNG path
    :type output_path: str
    :return: output_path
    :rtype: str
    """
    logger.info("Generating per-frame metric plot")
    df = report.frames
    fig, (ax_psnr, ax_ssim) = plt.subplots(2, 1, figsize=(12, 8), sharex=True)
    sns.lineplot(data=df, x="frame", y="psnr_db", marker="o", ax=ax_psnr)
    ax_psnr.set_ylabel("PSNR (dB)", fontsize=14)
    sns.lineplot(data=df, x="frame", y="ssim", marker="o", color="C2", ax=ax_ssim)
    ax_ssim.set_ylabel("SSIM", fontsize=14)
    ax_ssim.set_xlabel("Frame", fontsize=14)
    fig.suptitle("Per-frame quality", fontsize=16)
    fig.tight_layout()
    fig.savefig(output_path)
    plt.close(fig)
    logger.info(f"Saved per-frame metric plot to {output_path}")
    return output_path


def plot_priors(priors_dir, frame_index, output_dir, frame=None, direction="forward"):
    """
    Render the motion field and residual map of one frame's sidecars.

    :return: Paths of the written figures
    :rtype: list
    """
    os.makedirs(output_dir, exist_ok=True)
    mv, res = read_sidecars(priors_dir, frame_index, direction)
    stem = os.path.join(output_dir, f"frame_{frame_index:06d}_{direction}")
    paths = [
        plot_motion_field(mv, f"{stem}_mv.png", frame),
        plot_residual_map(res, f"{stem}_cr.png"),
    ]
    logger.info(f"All prior plots for frame {frame_index} saved to {output_dir}")
    return paths
