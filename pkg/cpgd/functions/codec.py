"""
Block-based motion-compensated luma codec.

Frame 0 is stored intra, every later frame as a block motion-vector grid against
the reconstructed previous frame plus a quantized residual (IPPP, integer-pel).
The motion vectors and residuals are the coding priors consumed downstream.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from cpgd.functions.bitstream import StreamHeader, pack_stream, read_header, unpack_stream
from cpgd.utils.errors import ConfigError, ShapeError

logger = logging.getLogger("cpgd")


@dataclass(frozen=True)
class CodecConfig:
    block_size: int = 16
    search_radius: int = 16
    quant: int = 1
    rle: bool = True

    def __post_init__(self):
        if self.block_size not in (8, 16):
            raise ConfigError(f"block_size must be 8 or 16, got {self.block_size}")
        if not 1 <= self.search_radius <= 127:
            raise ConfigError(
                f"search_radius must be in [1, 127], got {self.search_radius}"
            )
        if not 1 <= self.quant <= 255:
            raise ConfigError(f"quant must be in [1, 255], got {self.quant}")


@dataclass
class FramePlane:
    """One 8-bit luma plane, ``samples`` is a height×width uint8 array."""

    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.uint8)
        if self.samples.ndim != 2:
            raise ShapeError(
                f"frame plane must be 2-D (height×width), got shape {self.samples.shape}"
            )

    @property
    def height(self):
        return self.samples.shape[0]

    @property
    def width(self):
        return self.samples.shape[1]

    def __eq__(self, other):
        return isinstance(other, FramePlane) and np.array_equal(
            self.samples, other.samples
        )


@dataclass
class MvGrid:
    """Per-block integer displacements; ``vectors`` is blocks_y×blocks_x×2 (dy, dx)."""

    vectors: np.ndarray
    block_size: int

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.int16)
        if self.vectors.ndim != 3 or self.vectors.shape[2] != 2:
            raise ShapeError(
                f"motion vectors must be blocks_y×blocks_x×2, got {self.vectors.shape}"
            )

    @property
    def blocks_y(self):
        return self.vectors.shape[0]

    @property
    def blocks_x(self):
        return self.vectors.shape[1]

    @classmethod
    def zeros(cls, width, height, block_size):
        return cls(
            np.zeros((grid_extent(height, block_size), grid_extent(width, block_size), 2)),
            block_size,
        )

    def max_abs(self):
        return int(np.abs(self.vectors).max()) if self.vectors.size else 0

    def __eq__(self, other):
        return (
            isinstance(other, MvGrid)
            and self.block_size == other.block_size
            and np.array_equal(self.vectors, other.vectors)
        )


@dataclass
class ResidualPlane:
    """Quantized residual; reconstructed residual is ``values * quant``."""

    values: np.ndarray
    quant: int = 1

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.int16)
        if self.values.ndim != 2:
            raise ShapeError(
                f"residual plane must be 2-D (height×width), got shape {self.values.shape}"
            )
        if self.quant < 1:
            raise ConfigError(f"quant must be positive, got {self.quant}")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def reconstructed(self):
        """
        :return: Decoder-visible residual as int32
        :rtype: numpy.ndarray
        """
        return self.values.astype(np.int32) * self.quant

    def __eq__(self, other):
        return (
            isinstance(other, ResidualPlane)
            and self.quant == other.quant
            and np.array_equal(self.values, other.values)
        )


@dataclass
class CodedSequence:
    """
    Everything an encoder or decoder run produces. ``motion[0]`` and
    ``residuals[0]`` are None because frame 0 is intra.
    """

    frames: list
    motion: list = field(default_factory=list)
    residuals: list = field(default_factory=list)


def grid_extent(pixels, block_size):
    return math.ceil(pixels / block_size)


def _check_same_size(reference, current):
    if reference.samples.shape != current.samples.shape:
        raise ShapeError(
            f"frame dimension mismatch: reference is {reference.width}×{reference.height}, "
            f"current is {current.width}×{current.height}"
        )


def _check_grid(mv, width, height):
    expected = (grid_extent(height, mv.block_size), grid_extent(width, mv.block_size))
    if (mv.blocks_y, mv.blocks_x) != expected:
        raise ShapeError(
            f"motion grid is {mv.blocks_x}×{mv.blocks_y} blocks, frame {width}×{height} "
            f"needs {expected[1]}×{expected[0]}"
        )


def candidate_order(radius):
    """
    All displacements within ``radius`` in tie-break order: smallest |dy|+|dx|,
    then smallest dy, then smallest dx.

    :param radius: Search radius
    :type radius: int
    :return: List of (dy, dx) tuples
    :rtype: list
    """
    span = range(-radius, radius + 1)
    return sorted(
        ((dy, dx) for dy in span for dx in span),
        key=lambda v: (abs(v[0]) + abs(v[1]), v[0], v[1]),
    )


def _block_sums(plane, block_size):
    """Sum a 2-D array over block_size tiles; partial edge tiles included."""
    rows = np.arange(0, plane.shape[0], block_size)
    cols = np.arange(0, plane.shape[1], block_size)
    return np.add.reduceat(np.add.reduceat(plane, rows, axis=0), cols, axis=1)


def _search_band(padded_ref, current, radius, block_size, row_start, row_end):
    """Full search for block rows [row_start, row_end)."""
    y_start = row_start * block_size
    y_end = min(row_end * block_size, current.shape[0])
    width = current.shape[1]
    cur = current[y_start:y_end].astype(np.int32)

    best_sad = None
    best = np.zeros((row_end - row_start, grid_extent(width, block_size), 2), np.int16)
    for dy, dx in candidate_order(radius):
        ys = radius + y_start + dy
        xs = radius + dx
        shifted = padded_ref[ys : ys + (y_end - y_start), xs : xs + width]
        sad = _block_sums(np.abs(cur - shifted), block_size)
        if best_sad is None:
            best_sad = sad
            best[...] = (dy, dx)
            continue
        better = sad < best_sad
        best_sad = np.where(better, sad, best_sad)
        best[better] = (dy, dx)
    return best


def block_match_full(reference, current, cfg, workers=1):
    """
    Exhaustive integer-pel block matching with edge-clamped reference reads.

    :param reference: Reference luma plane
    :type reference: FramePlane
    :param current: Current luma plane
    :type current: FramePlane
    :param cfg: Codec configuration (block size, search radius)
    :type cfg: CodecConfig
    :param workers: Number of threads searching bands of block rows
    :type workers: int
    :return: Minimum-SAD motion vectors, ties broken toward the zero vector
    :rtype: MvGrid
    """
    _check_same_size(reference, current)
    bs = cfg.block_size
    radius = cfg.search_radius
    if current.width < bs or current.height < bs:
        raise ShapeError(
            f"frame {current.width}×{current.height} is smaller than block size {bs}"
        )

    padded = np.pad(reference.samples.astype(np.int32), radius, mode="edge")
    blocks_y = grid_extent(current.height, bs)
    workers = max(1, min(workers or 1, blocks_y))
    bounds = np.linspace(0, blocks_y, workers + 1).round().astype(int)
    bands = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    if len(bands) == 1:
        rows = [_search_band(padded, current.samples, radius, bs, *bands[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(bands)) as pool:
            rows = list(
                pool.map(
                    lambda band: _search_band(padded, current.samples, radius, bs, *band),
                    bands,
                )
            )
    return MvGrid(np.concatenate(rows, axis=0), bs)


def _dense_indices(mv, width, height):
    bs = mv.block_size
    dense = np.repeat(np.repeat(mv.vectors, bs, axis=0), bs, axis=1)[:height, :width]
    yy, xx = np.mgrid[0:height, 0:width]
    ys = np.clip(yy + dense[..., 0], 0, height - 1)
    xs = np.clip(xx + dense[..., 1], 0, width - 1)
    return ys, xs


def block_sad(reference, current, mv):
    """
    Per-block SAD between ``current`` and the motion-compensated reference.

    :return: blocks_y×blocks_x int64 array
    :rtype: numpy.ndarray
    """
    _check_same_size(reference, current)
    prediction = motion_compensate(reference, mv)
    diff = np.abs(current.samples.astype(np.int64) - prediction.samples.astype(np.int64))
    return _block_sums(diff, mv.block_size)


def motion_compensate(reference, mv):
    """
    Copy displaced blocks out of the reference with edge-clamped reads.

    :param reference: Reference plane
    :type reference: FramePlane
    :param mv: Motion vectors matching the reference dimensions
    :type mv: MvGrid
    :return: Prediction plane
    :rtype: FramePlane
    """
    _check_grid(mv, reference.width, reference.height)
    ys, xs = _dense_indices(mv, reference.width, reference.height)
    return FramePlane(reference.samples[ys, xs])


def compute_residual(current, prediction, quant=1):
    """
    Quantize current − prediction with round-half-away-from-zero.

    :param current: Current plane
    :type current: FramePlane
    :param prediction: Motion-compensated prediction
    :type prediction: FramePlane
    :param quant: Quantizer step
    :type quant: int
    :return: Stored residual values
    :rtype: ResidualPlane
    """
    _check_same_size(prediction, current)
    diff = current.samples.astype(np.int32) - prediction.samples.astype(np.int32)
    if quant == 1:
        return ResidualPlane(diff, 1)
    mag = (np.abs(diff) * 2 + quant) // (2 * quant)
    return ResidualPlane(np.sign(diff) * mag, quant)


def reconstruct(prediction, residual):
    """
    :return: clamp(prediction + residual×quant, 0, 255)
    :rtype: FramePlane
    """
    if residual.values.shape != prediction.samples.shape:
        raise ShapeError(
            f"residual is {residual.width}×{residual.height}, "
            f"prediction is {prediction.width}×{prediction.height}"
        )
    out = prediction.samples.astype(np.int32) + residual.reconstructed()
    return FramePlane(np.clip(out, 0, 255))


def encode_frames(frames, cfg, workers=1):
    """
    Closed-loop encoder: each frame is predicted from the previous reconstruction.

    :param frames: Luma planes of one clip
    :type frames: list
    :param cfg: Codec configuration
    :type cfg: CodecConfig
    :param workers: Threads used per block search
    :type workers: int
    :return: Encoder-side reconstructions and the coding priors
    :rtype: CodedSequence
    """
    if not frames:
        raise ShapeError("cannot encode an empty frame sequence")
    first = frames[0]
    for index, frame in enumerate(frames):
        if frame.samples.shape != first.samples.shape:
            raise ShapeError(
                f"frame {index} is {frame.width}×{frame.height}, "
                f"expected {first.width}×{first.height}"
            )
    if first.width < cfg.block_size or first.height < cfg.block_size:
        raise ShapeError(
            f"frame {first.width}×{first.height} is smaller than block size {cfg.block_size}"
        )

    coded = CodedSequence(frames=[first], motion=[None], residuals=[None])
    for index in range(1, len(frames)):
        previous = coded.frames[-1]
        mv = block_match_full(previous, frames[index], cfg, workers)
        prediction = motion_compensate(previous, mv)
        residual = compute_residual(frames[index], prediction, cfg.quant)
        coded.frames.append(reconstruct(prediction, residual))
        coded.motion.append(mv)
        coded.residuals.append(residual)
        logger.debug(
            f"Encoded frame {index}: max |mv| {mv.max_abs()}, "
            f"nonzero residuals {int(np.count_nonzero(residual.values))}"
        )
    return coded


def encode_sequence(frames, cfg, workers=1):
    """
    Encode a clip into a CPV1 byte stream.

    :param frames: Luma planes of one clip
    :type frames: list
    :param cfg: Codec configuration
    :type cfg: CodecConfig
    :return: CPV1 container bytes
    :rtype: bytes
    """
    coded = encode_frames(frames, cfg, workers)
    first = coded.frames[0]
    header = StreamHeader(
        width=first.width,
        height=first.height,
        block_size=cfg.block_size,
        search_radius=cfg.search_radius,
        quant=cfg.quant,
        rle=cfg.rle,
        frame_count=len(coded.frames),
    )
    stream = pack_stream(
        header,
        frames[0].samples,
        [mv.vectors for mv in coded.motion[1:]],
        [res.values for res in coded.residuals[1:]],
    )
    logger.info(f"Encoded {len(frames)} frame(s) into {len(stream)} bytes")
    return stream


def decode_sequence(stream):
    """
    Parse a CPV1 stream and run the decoder loop.

    :param stream: CPV1 container bytes
    :type stream: bytes
    :return: Decoded frames with their motion grids and residual planes
    :rtype: CodedSequence
    """
    header, intra, vectors, values = unpack_stream(stream)
    decoded = CodedSequence(frames=[FramePlane(intra)], motion=[None], residuals=[None])
    for mv_array, residual_array in zip(vectors, values):
        mv = MvGrid(mv_array, header.block_size)
        residual = ResidualPlane(residual_array, header.quant)
        prediction = motion_compensate(decoded.frames[-1], mv)
        decoded.frames.append(reconstruct(prediction, residual))
        decoded.motion.append(mv)
        decoded.residuals.append(residual)
    logger.debug(f"Decoded {len(decoded.frames)} frame(s) from {len(stream)} bytes")
    return decoded


def stream_config(stream):
    """
    Codec configuration and geometry recorded in a CPV1 header.

    :return: (CodecConfig, StreamHeader)
    :rtype: tuple
    """
    header = read_header(stream)
    cfg = CodecConfig(header.block_size, header.search_radius, header.quant, header.rle)
    return cfg, header
