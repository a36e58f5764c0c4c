"""
Dense numeric kernels shared by the alignment and attention modules.

Tensors are plain ``numpy.ndarray`` objects laid out channel-first (C×H×W) or
token-first (N×D). Kernels return float32 unless they are handed float64 data,
in which case they stay in float64 (used by the finite-difference checks).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from cpgd.utils.errors import ShapeError


def as_float(x):
    """
    Convert to the working float type: float64 input stays float64, anything else
    becomes float32.

    :param x: Array-like input
    :return: Floating point array
    :rtype: numpy.ndarray
    """
    x = np.asarray(x)
    if x.dtype == np.float64:
        return x
    return x.astype(np.float32, copy=False)


def _check_ndim(name, x, ndim, layout):
    if x.ndim != ndim:
        raise ShapeError(f"{name} must be {layout}, got shape {x.shape}")


def conv2d(inp, weight, bias=None):
    """
    Stride-1 cross-correlation with zero padding of (k-1)/2.

    :param inp: Input tensor C×H×W
    :type inp: numpy.ndarray
    :param weight: Kernel O×C×k×k, k odd
    :type weight: numpy.ndarray
    :param bias: Optional bias vector of length O
    :type bias: numpy.ndarray
    :return: Output tensor O×H×W
    :rtype: numpy.ndarray
    """
    inp = as_float(inp)
    weight = as_float(weight)
    _check_ndim("conv2d input", inp, 3, "C×H×W")
    _check_ndim("conv2d weight", weight, 4, "O×C×k×k")
    out_ch, in_ch, kh, kw = weight.shape
    if in_ch != inp.shape[0]:
        raise ShapeError(
            f"conv2d channel axis mismatch: input has {inp.shape[0]}, weight expects {in_ch}"
        )
    if kh != kw:
        raise ShapeError(f"conv2d kernel must be square, got {kh}×{kw}")
    if kh % 2 == 0:
        raise ShapeError(f"conv2d kernel size must be odd, got {kh}")
    if bias is not None:
        bias = as_float(bias)
        if bias.shape != (out_ch,):
            raise ShapeError(
                f"conv2d bias axis mismatch: expected ({out_ch},), got {bias.shape}"
            )

    pad = (kh - 1) // 2
    padded = np.pad(inp, ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))
    out = np.einsum("chwij,ocij->ohw", windows, weight, optimize=True)
    if bias is not None:
        out = out + bias[:, None, None]
    return out.astype(inp.dtype, copy=False)


def _bilinear_taps(height, width, coords, padding):
    """
    Corner indices, weights and validity for bilinear reads.

    Returns (y0, x0, y1, x1, wy, wx, valid) where valid is a list of 4 masks
    (None when every read is legal).
    """
    y = coords[0]
    x = coords[1]
    if padding == "border":
        y = np.clip(y, 0, height - 1)
        x = np.clip(x, 0, width - 1)
    y0 = np.floor(y)
    x0 = np.floor(x)
    wy = y - y0
    wx = x - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    y1 = y0 + 1
    x1 = x0 + 1

    if padding == "border":
        # weight on the clipped neighbour is zero at the upper edge
        y1 = np.minimum(y1, height - 1)
        x1 = np.minimum(x1, width - 1)
        return y0, x0, y1, x1, wy, wx, None

    vy0 = (y0 >= 0) & (y0 < height)
    vy1 = (y1 >= 0) & (y1 < height)
    vx0 = (x0 >= 0) & (x0 < width)
    vx1 = (x1 >= 0) & (x1 < width)
    valid = [vy0 & vx0, vy0 & vx1, vy1 & vx0, vy1 & vx1]
    y0 = np.clip(y0, 0, height - 1)
    y1 = np.clip(y1, 0, height - 1)
    x0 = np.clip(x0, 0, width - 1)
    x1 = np.clip(x1, 0, width - 1)
    return y0, x0, y1, x1, wy, wx, valid


def _gather_corners(src, y0, x0, y1, x1, valid):
    corners = [src[:, y0, x0], src[:, y0, x1], src[:, y1, x0], src[:, y1, x1]]
    if valid is not None:
        corners = [np.where(v[None], c, 0) for c, v in zip(corners, valid)]
    return corners


def _prepare_sampling(src, coords):
    src = as_float(src)
    coords = np.asarray(coords, dtype=src.dtype)
    _check_ndim("bilinear source", src, 3, "C×H×W")
    if coords.ndim != 3 or coords.shape[0] != 2:
        raise ShapeError(f"bilinear coords must be 2×H'×W', got shape {coords.shape}")
    if not np.all(np.isfinite(coords)):
        raise ValueError("bilinear coords must be finite")
    return src, coords


def bilinear_sample(src, coords, padding="zeros"):
    """
    Bilinear interpolation of ``src`` at absolute (y, x) pixel positions.

    :param src: Source tensor C×H×W
    :type src: numpy.ndarray
    :param coords: Sample positions 2×H'×W' (channel 0 = y, channel 1 = x)
    :type coords: numpy.ndarray
    :param padding: "zeros" reads outside the plane as 0, "border" clamps
        the coordinates to the plane first
    :type padding: str
    :return: Sampled tensor C×H'×W'
    :rtype: numpy.ndarray
    """
    src, coords = _prepare_sampling(src, coords)
    if padding not in ("zeros", "border"):
        raise ValueError(f"unknown padding mode: {padding}")
    _, height, width = src.shape
    y0, x0, y1, x1, wy, wx, valid = _bilinear_taps(height, width, coords, padding)
    v00, v01, v10, v11 = _gather_corners(src, y0, x0, y1, x1, valid)
    out = (
        (1 - wy) * (1 - wx) * v00
        + (1 - wy) * wx * v01
        + wy * (1 - wx) * v10
        + wy * wx * v11
    )
    return out.astype(src.dtype, copy=False)


def bilinear_sample_grad_channels(src, coords, padding="zeros"):
    """
    Per-channel analytic derivative of ``bilinear_sample`` with respect to the
    sample coordinates.

    :return: Tensor C×2×H'×W' holding (d/dy, d/dx) for every channel
    :rtype: numpy.ndarray
    """
    src, coords = _prepare_sampling(src, coords)
    _, height, width = src.shape
    y0, x0, y1, x1, wy, wx, valid = _bilinear_taps(height, width, coords, padding)
    v00, v01, v10, v11 = _gather_corners(src, y0, x0, y1, x1, valid)
    d_dy = (1 - wx) * (v10 - v00) + wx * (v11 - v01)
    d_dx = (1 - wy) * (v01 - v00) + wy * (v11 - v10)
    return np.stack([d_dy, d_dx], axis=1).astype(src.dtype, copy=False)


def bilinear_sample_grad(src, coords, padding="zeros"):
    """
    Derivative of the sampled output with respect to (y, x), summed over channels.

    Undefined on lattice lines; callers keep coordinates away from integers.

    :param src: Source tensor C×H×W
    :param coords: Sample positions 2×H'×W'
    :return: Tensor 2×H'×W'
    :rtype: numpy.ndarray
    """
    return bilinear_sample_grad_channels(src, coords, padding).sum(axis=0)


def linear(tokens, weight, bias=None):
    """
    Affine map applied to every token: tokens @ weight + bias.

    :param tokens: Tensor N×D
    :param weight: Tensor D×E
    :param bias: Vector of length E
    :return: Tensor N×E
    :rtype: numpy.ndarray
    """
    tokens = as_float(tokens)
    weight = as_float(weight)
    _check_ndim("linear tokens", tokens, 2, "N×D")
    _check_ndim("linear weight", weight, 2, "D×E")
    if tokens.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"linear inner dimension mismatch: tokens have {tokens.shape[1]}, "
            f"weight expects {weight.shape[0]}"
        )
    out = tokens @ weight
    if bias is not None:
        bias = as_float(bias)
        if bias.shape != (weight.shape[1],):
            raise ShapeError(
                f"linear bias mismatch: expected ({weight.shape[1]},), got {bias.shape}"
            )
        out = out + bias
    return out.astype(tokens.dtype, copy=False)


def softmax_rows(m):
    """
    Row-wise softmax with max subtraction.

    :param m: Tensor N×M of finite scores
    :return: Tensor of the same shape whose rows sum to 1
    :rtype: numpy.ndarray
    """
    m = as_float(m)
    _check_ndim("softmax input", m, 2, "N×M")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=1, keepdims=True)).astype(m.dtype, copy=False)


def sigmoid(x):
    x = as_float(x)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def leaky_relu(x, slope=0.1):
    x = as_float(x)
    return np.where(x >= 0, x, x * x.dtype.type(slope))
