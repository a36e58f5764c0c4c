"""
Coding priors as network tensors and as dataset sidecar files.

Sidecars live next to each other in one directory::

    frame_000003_forward.mvf    "MVF1" u16 blocks_x u16 blocks_y u8 block_size u8 direction (i8 dy, i8 dx)...
    frame_000003_forward.crf    "CRF1" u16 width u16 height u8 direction f32 values...
    manifest.json

Forward priors of frame t describe t-1 -> t, backward priors describe t+1 -> t.
The first frame's forward priors and the last frame's backward priors are zero.
"""

import json
import logging
import os
import struct
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from cpgd.functions.codec import (
    MvGrid,
    block_match_full,
    compute_residual,
    decode_sequence,
    encode_frames,
    motion_compensate,
    stream_config,
)
from cpgd.utils.errors import DataError, FormatError, MissingPriorError, ShapeError

logger = logging.getLogger("cpgd")

FORWARD = "forward"
BACKWARD = "backward"
DIRECTIONS = {FORWARD: 0, BACKWARD: 1}

MVF_MAGIC = b"MVF1"
CRF_MAGIC = b"CRF1"
MVF_HEADER = struct.Struct("<4sHHBB")
CRF_HEADER = struct.Struct("<4sHHB")
MANIFEST = "manifest.json"


def densify_mv(mv, width, height):
    """
    Replicate block vectors to every pixel of their block.

    :param mv: Block motion vectors
    :type mv: MvGrid
    :param width: Frame width
    :type width: int
    :param height: Frame height
    :type height: int
    :return: float32 tensor 2×height×width (dy, dx)
    :rtype: numpy.ndarray
    """
    bs = mv.block_size
    if mv.blocks_x * bs < width or mv.blocks_y * bs < height:
        raise ShapeError(
            f"{mv.blocks_x}×{mv.blocks_y} blocks of {bs} do not cover {width}×{height}"
        )
    dense = np.repeat(np.repeat(mv.vectors, bs, axis=0), bs, axis=1)[:height, :width]
    return np.ascontiguousarray(dense.transpose(2, 0, 1), dtype=np.float32)


def normalize_residual(res):
    """
    Map the decoder-visible residual magnitude to [0, 1]: min(|r|, 255) / 255.

    :param res: Quantized residual plane
    :type res: ResidualPlane
    :return: float32 tensor 1×height×width
    :rtype: numpy.ndarray
    """
    magnitude = np.minimum(np.abs(res.reconstructed().astype(np.int64)), 255)
    return (magnitude.astype(np.float32) / np.float32(255))[None]


def sidecar_paths(directory, frame_index, direction=FORWARD):
    stem = os.path.join(directory, f"frame_{frame_index:06d}_{direction}")
    return stem + ".mvf", stem + ".crf"


def _direction_code(direction):
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    return DIRECTIONS[direction]


def write_sidecars(directory, frame_index, mv, res, direction=FORWARD):
    """
    Persist one frame's priors as .mvf / .crf files.

    :param directory: Sidecar directory (created if needed)
    :type directory: str
    :param frame_index: Frame number
    :type frame_index: int
    :param mv: Block motion vectors
    :type mv: MvGrid
    :param res: Residual map 1×H×W in [0, 1]
    :type res: numpy.ndarray
    :param direction: "forward" or "backward"
    :type direction: str
    :return: (mvf path, crf path)
    :rtype: tuple
    """
    code = _direction_code(direction)
    res = np.asarray(res, dtype=np.float32)
    if res.ndim != 3 or res.shape[0] != 1:
        raise ShapeError(f"residual map must be 1×H×W, got shape {res.shape}")
    os.makedirs(directory, exist_ok=True)
    mvf_path, crf_path = sidecar_paths(directory, frame_index, direction)

    with open(mvf_path, "wb") as f:
        f.write(MVF_HEADER.pack(MVF_MAGIC, mv.blocks_x, mv.blocks_y, mv.block_size, code))
        f.write(mv.vectors.astype(np.int8).tobytes())

    _, height, width = res.shape
    with open(crf_path, "wb") as f:
        f.write(CRF_HEADER.pack(CRF_MAGIC, width, height, code))
        f.write(res.astype("<f4").tobytes())
    return mvf_path, crf_path


def _read_file(path):
    if not os.path.isfile(path):
        raise MissingPriorError(path)
    with open(path, "rb") as f:
        return f.read()


def _check_payload(path, data, header_size, expected):
    actual = len(data) - header_size
    if actual != expected:
        raise FormatError(
            f"{path}: payload has {actual} byte(s), header declares {expected}",
            header_size,
        )


def read_sidecars(directory, frame_index, direction=FORWARD):
    """
    Load one frame's priors.

    :return: (MvGrid, residual map 1×H×W)
    :rtype: tuple
    """
    code = _direction_code(direction)
    mvf_path, crf_path = sidecar_paths(directory, frame_index, direction)

    data = _read_file(mvf_path)
    if len(data) < MVF_HEADER.size or data[:4] != MVF_MAGIC:
        raise FormatError(f"{mvf_path}: bad magic {data[:4]!r}", 0)
    _, blocks_x, blocks_y, block_size, stored = MVF_HEADER.unpack_from(data)
    if stored != code:
        raise FormatError(f"{mvf_path}: direction code {stored}, expected {code}", 8)
    _check_payload(mvf_path, data, MVF_HEADER.size, blocks_x * blocks_y * 2)
    vectors = np.frombuffer(data, np.int8, offset=MVF_HEADER.size)
    mv = MvGrid(vectors.reshape(blocks_y, blocks_x, 2), block_size)

    data = _read_file(crf_path)
    if len(data) < CRF_HEADER.size or data[:4] != CRF_MAGIC:
        raise FormatError(f"{crf_path}: bad magic {data[:4]!r}", 0)
    _, width, height, stored = CRF_HEADER.unpack_from(data)
    if stored != code:
        raise FormatError(f"{crf_path}: direction code {stored}, expected {code}", 8)
    _check_payload(crf_path, data, CRF_HEADER.size, width * height * 4)
    res = np.frombuffer(data, "<f4", offset=CRF_HEADER.size).astype(np.float32)
    return mv, res.reshape(1, height, width)


def write_manifest(directory, frame_count, width, height, cfg, directions):
    manifest = {
        "frame_count": frame_count,
        "width": width,
        "height": height,
        "block_size": cfg.block_size,
        "search_radius": cfg.search_radius,
        "quant": cfg.quant,
        "directions": list(directions),
        "boundary_convention": "first frame forward and last frame backward priors are zero",
    }
    path = os.path.join(directory, MANIFEST)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=4)
    return manifest


def read_manifest(directory):
    path = os.path.join(directory, MANIFEST)
    if not os.path.isfile(path):
        raise MissingPriorError(path)
    with open(path) as f:
        return json.load(f)


def _backward_pair(frames, index, cfg, workers):
    """Priors t+1 -> t, matched with frame t+1 as the reference."""
    mv = block_match_full(frames[index + 1], frames[index], cfg, workers)
    prediction = motion_compensate(frames[index + 1], mv)
    return mv, normalize_residual(compute_residual(frames[index], prediction, cfg.quant))


def augment_dataset(frames, cfg, out_dir, workers=1, directions=(FORWARD, BACKWARD)):
    """
    Compute and write forward and backward priors for a clip.

    Forward priors come from the closed-loop encoder, so they equal what a decoder
    extracts from the corresponding CPV1 stream.

    :param frames: Luma planes of the clip
    :type frames: list
    :param cfg: Codec configuration
    :type cfg: CodecConfig
    :param out_dir: Sidecar directory
    :type out_dir: str
    :param workers: Thread count for the backward pass
    :type workers: int
    :param directions: Which directions to emit
    :type directions: tuple
    :return: Manifest dictionary
    :rtype: dict
    """
    if not frames:
        raise DataError("cannot extract priors from an empty clip")
    width, height = frames[0].width, frames[0].height
    for index, frame in enumerate(frames):
        if (frame.width, frame.height) != (width, height):
            raise DataError(
                f"frame {index} is {frame.width}×{frame.height}, expected {width}×{height}"
            )
    zero_mv = MvGrid.zeros(width, height, cfg.block_size)
    zero_res = np.zeros((1, height, width), np.float32)
    last = len(frames) - 1

    if FORWARD in directions:
        coded = encode_frames(frames, cfg, workers)
        write_sidecars(out_dir, 0, zero_mv, zero_res, FORWARD)
        for index in range(1, len(frames)):
            res = normalize_residual(coded.residuals[index])
            write_sidecars(out_dir, index, coded.motion[index], res, FORWARD)

    if BACKWARD in directions:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            pairs = list(
                pool.map(lambda i: _backward_pair(frames, i, cfg, 1), range(last))
            )
        for index, (mv, res) in enumerate(pairs):
            write_sidecars(out_dir, index, mv, res, BACKWARD)
        write_sidecars(out_dir, last, zero_mv, zero_res, BACKWARD)

    manifest = write_manifest(out_dir, len(frames), width, height, cfg, directions)
    logger.info(f"Wrote {'/'.join(directions)} priors for {len(frames)} frame(s) to {out_dir}")
    return manifest


def priors_from_stream(stream, out_dir):
    """
    Extract forward priors from a CPV1 stream without re-running motion search.

    :param stream: CPV1 bytes
    :type stream: bytes
    :param out_dir: Sidecar directory
    :type out_dir: str
    :return: (manifest, decoded sequence)
    :rtype: tuple
    """
    cfg, header = stream_config(stream)
    decoded = decode_sequence(stream)
    write_sidecars(
        out_dir,
        0,
        MvGrid.zeros(header.width, header.height, cfg.block_size),
        np.zeros((1, header.height, header.width), np.float32),
        FORWARD,
    )
    for index in range(1, len(decoded.frames)):
        res = normalize_residual(decoded.residuals[index])
        write_sidecars(out_dir, index, decoded.motion[index], res, FORWARD)
    manifest = write_manifest(
        out_dir, len(decoded.frames), header.width, header.height, cfg, (FORWARD,)
    )
    logger.info(f"Extracted stream priors for {len(decoded.frames)} frame(s) to {out_dir}")
    return manifest, decoded


def load_prior_set(directory, direction, frame_count=None, use_residual=True):
    """
    Read a direction's sidecars back as dense tensors.

    :param directory: Sidecar directory
    :type directory: str
    :param direction: "forward" or "backward"
    :type direction: str
    :param frame_count: Frames to load (defaults to the manifest's count)
    :type frame_count: int
    :param use_residual: When False the residual maps are replaced by zeros
    :type use_residual: bool
    :return: List of (V 2×H×W, R 1×H×W) pairs
    :rtype: list
    """
    manifest = read_manifest(directory)
    if frame_count is None:
        frame_count = manifest["frame_count"]
    width, height = manifest["width"], manifest["height"]
    priors = []
    for index in range(frame_count):
        mv, res = read_sidecars(directory, index, direction)
        if res.shape != (1, height, width):
            raise FormatError(
                f"residual map of frame {index} is {res.shape[2]}×{res.shape[1]}, "
                f"manifest declares {width}×{height}"
            )
        if not use_residual:
            res = np.zeros_like(res)
        priors.append((densify_mv(mv, width, height), res))
    return priors
