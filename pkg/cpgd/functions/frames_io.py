"""
Frame ingestion: ``frame_%06d`` image directories and raw planar YUV420 files.
"""

import logging
import os
import re

import imageio.v3 as iio
import numpy as np

from cpgd.functions.codec import FramePlane
from cpgd.utils.errors import DataError, ShapeError

logger = logging.getLogger("cpgd")

FRAME_PATTERN = re.compile(r"^frame_(\d{6})\.(png|bmp|tif|tiff|jpg|jpeg)$", re.IGNORECASE)
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def frame_name(index, ext="png"):
    return f"frame_{index:06d}.{ext}"


def rgb_to_luma(rgb):
    """
    Reduce an RGB image to an 8-bit luma plane: round(0.299R + 0.587G + 0.114B).

    :param rgb: height×width×3 uint8 array (a 2-D array is taken as luma already)
    :type rgb: numpy.ndarray
    :return: Luma plane
    :rtype: FramePlane
    """
    rgb = np.asarray(rgb)
    if rgb.ndim == 2:
        return FramePlane(rgb)
    if rgb.ndim != 3 or rgb.shape[2] < 3:
        raise ShapeError(f"expected height×width×3 RGB, got shape {rgb.shape}")
    luma = rgb[..., :3].astype(np.float64) @ LUMA_WEIGHTS
    return FramePlane(np.clip(np.floor(luma + 0.5), 0, 255))


def list_frame_files(frames_dir):
    """
    Frame files in index order.

    :param frames_dir: Directory holding frame_%06d.<ext> images
    :type frames_dir: str
    :return: List of paths
    :rtype: list
    """
    if not os.path.isdir(frames_dir):
        raise DataError(f"frame directory not found: {frames_dir}")
    indexed = []
    for name in os.listdir(frames_dir):
        match = FRAME_PATTERN.match(name)
        if match:
            indexed.append((int(match.group(1)), name))
    if not indexed:
        raise DataError(f"no frame_%06d images in {frames_dir}")
    indexed.sort()
    return [os.path.join(frames_dir, name) for _, name in indexed]


def read_frame_dir(frames_dir):
    """
    Read every frame of a directory as RGB.

    :param frames_dir: Directory holding frame_%06d.<ext> images
    :type frames_dir: str
    :return: List of height×width×3 uint8 arrays
    :rtype: list
    """
    frames = []
    for path in list_frame_files(frames_dir):
        try:
            image = np.asarray(iio.imread(path))
        except (OSError, ValueError) as e:
            raise DataError(f"cannot read frame {path}: {e}") from e
        if image.dtype != np.uint8:
            raise DataError(f"{path}: expected 8-bit samples, got {image.dtype}")
        if image.ndim == 2:
            image = np.repeat(image[..., None], 3, axis=2)
        frames.append(image[..., :3])
        if frames[-1].shape != frames[0].shape:
            raise DataError(
                f"{path} is {image.shape[1]}×{image.shape[0]}, "
                f"expected {frames[0].shape[1]}×{frames[0].shape[0]}"
            )
    logger.info(f"Read {len(frames)} frame(s) from {frames_dir}")
    return frames


def write_frame_dir(frames, out_dir, ext="png"):
    """
    Write frames as frame_%06d.<ext>.

    :param frames: uint8 arrays (RGB or luma) or FramePlanes
    :type frames: list
    :param out_dir: Output directory (created if needed)
    :type out_dir: str
    :return: Written paths
    :rtype: list
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for index, frame in enumerate(frames):
        if isinstance(frame, FramePlane):
            frame = frame.samples
        path = os.path.join(out_dir, frame_name(index, ext))
        iio.imwrite(path, np.asarray(frame, dtype=np.uint8))
        paths.append(path)
    logger.info(f"Wrote {len(paths)} frame(s) to {out_dir}")
    return paths


def read_yuv420(path, width, height, max_frames=None):
    """
    Read the Y planes of a raw planar YUV420 file; U and V are skipped.

    :param path: Raw .yuv file
    :type path: str
    :param width: Frame width in pixels
    :type width: int
    :param height: Frame height in pixels
    :type height: int
    :param max_frames: Optional cap on frames read
    :type max_frames: int
    :return: Luma planes
    :rtype: list
    """
    if width % 2 or height % 2:
        logger.warning(f"YUV420 dimensions {width}×{height} are odd; chroma size rounds down")
    luma_size = width * height
    frame_size = luma_size + 2 * (width // 2) * (height // 2)
    if not os.path.isfile(path):
        raise DataError(f"YUV file not found: {path}")
    data = np.fromfile(path, dtype=np.uint8)
    count, extra = divmod(data.size, frame_size)
    if extra:
        raise DataError(
            f"{path}: {data.size} bytes is not a whole number of "
            f"{width}×{height} YUV420 frames ({frame_size} bytes each)"
        )
    if max_frames is not None:
        count = min(count, max_frames)
    frames = [
        FramePlane(data[i * frame_size : i * frame_size + luma_size].reshape(height, width))
        for i in range(count)
    ]
    logger.info(f"Read {count} YUV420 frame(s) of {width}×{height} from {path}")
    return frames


def write_yuv420(path, frames):
    """
    Write luma planes as YUV420 with neutral (128) chroma.

    :param path: Output .yuv file
    :param frames: FramePlanes of identical size
    """
    with open(path, "wb") as f:
        for frame in frames:
            f.write(frame.samples.tobytes())
            chroma = np.full((frame.height // 2) * (frame.width // 2), 128, np.uint8)
            f.write(chroma.tobytes())
            f.write(chroma.tobytes())


def to_unit_rgb(frame):
    """
    uint8 H×W×3 frame to a float32 3×H×W tensor in [0, 1].

    :rtype: numpy.ndarray
    """
    frame = np.asarray(frame)
    if frame.ndim == 2:
        frame = np.repeat(frame[..., None], 3, axis=2)
    return (frame[..., :3].transpose(2, 0, 1).astype(np.float32) / np.float32(255))


def from_unit_rgb(tensor):
    """
    float 3×H×W tensor in [0, 1] back to a uint8 H×W×3 frame.

    :rtype: numpy.ndarray
    """
    tensor = np.clip(np.asarray(tensor, dtype=np.float64), 0.0, 1.0)
    return np.floor(tensor * 255 + 0.5).astype(np.uint8).transpose(1, 2, 0)
