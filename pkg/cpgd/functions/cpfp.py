"""
Coding-prior feature propagation: motion-vector warping, residual-guided
deformable alignment and the recurrent cascade that yields stage-one frames.

Tensors are float32 channel-first arrays. ``V`` is a 2×H×W dense motion field
(dy, dx) and ``R`` a 1×H×W residual map in [0, 1].
"""

import logging
from dataclasses import dataclass

import numpy as np

from cpgd.functions.params import init_uniform, load_params, save_params
from cpgd.functions.tensor_core import (
    as_float,
    bilinear_sample,
    bilinear_sample_grad_channels,
    conv2d,
    leaky_relu,
)
from cpgd.utils.errors import ShapeError

logger = logging.getLogger("cpgd")

MAGIC = b"CPFP"
KERNEL = 3
TAPS = KERNEL * KERNEL
# regular 3×3 grid, tap k = ky * 3 + kx sits at (ky - 1, kx - 1)
TAP_OFFSETS = [(ky - 1, kx - 1) for ky in range(KERNEL) for kx in range(KERNEL)]
LEAKY_SLOPE = 0.1

FORWARD_MODE = "forward"
BIDIRECTIONAL_MODE = "bidirectional"

# layers whose weights start at zero unless random finals are requested
ZERO_INIT_LAYERS = ("offset2", "mask2", "head2")


@dataclass
class CpfaParams:
    """Weights of the encoder, offset/mask branches, deformable kernel, fusion and head."""

    layers: dict
    seed: int = 0

    @property
    def channels(self):
        return self.layers["dcn.weight"].shape[0]

    def weight(self, name):
        return self.layers[f"{name}.weight"]

    def bias(self, name):
        return self.layers.get(f"{name}.bias")

    def save(self, path):
        save_params(path, MAGIC, self.seed, self.layers)

    @classmethod
    def load(cls, path):
        seed, layers = load_params(path, MAGIC)
        params = cls(layers, seed)
        params.validate()
        return params

    def validate(self):
        c = self.channels
        expected = {
            "enc1.weight": (c, 3, KERNEL, KERNEL),
            "enc2.weight": (c, c, KERNEL, KERNEL),
            "offset1.weight": (c, 2 + 1 + c, KERNEL, KERNEL),
            "offset2.weight": (2 * TAPS, c, KERNEL, KERNEL),
            "mask1.weight": (c, 2 + 1 + c, KERNEL, KERNEL),
            "mask2.weight": (TAPS, c, KERNEL, KERNEL),
            "dcn.weight": (c, c, KERNEL, KERNEL),
            "fusion.weight": (c, 3 * c, KERNEL, KERNEL),
            "head1.weight": (c, c, KERNEL, KERNEL),
            "head2.weight": (3, c, KERNEL, KERNEL),
        }
        for name, shape in expected.items():
            if name not in self.layers:
                raise ShapeError(f"parameter set lacks layer {name}")
            if self.layers[name].shape != shape:
                raise ShapeError(
                    f"layer {name} has shape {self.layers[name].shape}, expected {shape}"
                )


@dataclass
class PropagationState:
    features: np.ndarray
    frame_index: int = -1

    @classmethod
    def initial(cls, channels, height, width):
        return cls(np.zeros((channels, height, width), np.float32), -1)


def init_cpfa_params(channels=16, seed=0, random_finals=False):
    """
    Seeded parameters; the offset/mask branch finals and the restoration head
    final start at zero so the skip connections pass V and R through unchanged.

    :param channels: Feature width C
    :type channels: int
    :param seed: Generator seed, recorded in the parameter file
    :type seed: int
    :param random_finals: Initialize the final layers randomly as well
    :type random_finals: bool
    :rtype: CpfaParams
    """
    rng = np.random.default_rng(seed)
    c = channels
    shapes = [
        ("enc1", c, 3),
        ("enc2", c, c),
        ("offset1", c, 2 + 1 + c),
        ("offset2", 2 * TAPS, c),
        ("mask1", c, 2 + 1 + c),
        ("mask2", TAPS, c),
        ("dcn", c, c),
        ("fusion", c, 3 * c),
        ("head1", c, c),
        ("head2", 3, c),
    ]
    layers = {}
    for name, out_ch, in_ch in shapes:
        fan_in = in_ch * KERNEL * KERNEL
        shape = (out_ch, in_ch, KERNEL, KERNEL)
        if name in ZERO_INIT_LAYERS and not random_finals:
            layers[f"{name}.weight"] = np.zeros(shape, np.float32)
            layers[f"{name}.bias"] = np.zeros(out_ch, np.float32)
            continue
        layers[f"{name}.weight"] = init_uniform(rng, shape, fan_in)
        if name != "dcn":
            layers[f"{name}.bias"] = init_uniform(rng, (out_ch,), fan_in)
    return CpfaParams(layers, seed)


def _check_spatial(name, tensor, height, width):
    if tensor.shape[1:] != (height, width):
        raise ShapeError(
            f"{name} is {tensor.shape[2]}×{tensor.shape[1]}, expected {width}×{height}"
        )


def _base_grid(height, width, dtype):
    yy, xx = np.mgrid[0:height, 0:width]
    return np.stack([yy, xx]).astype(dtype)


def encode_frame(frame, params):
    """
    Latent encoder: two 3×3 convolutions with leaky-ReLU.

    :param frame: RGB tensor 3×H×W in [0, 1]
    :type frame: numpy.ndarray
    :return: Features C×H×W
    :rtype: numpy.ndarray
    """
    x = leaky_relu(conv2d(frame, params.weight("enc1"), params.bias("enc1")), LEAKY_SLOPE)
    return leaky_relu(conv2d(x, params.weight("enc2"), params.bias("enc2")), LEAKY_SLOPE)


def warp_features(f_prev, v):
    """
    Backward-warp features along the motion field with edge-clamped bilinear reads.

    :param f_prev: Features C×H×W
    :type f_prev: numpy.ndarray
    :param v: Motion field 2×H×W (dy, dx)
    :type v: numpy.ndarray
    :return: Warped features C×H×W
    :rtype: numpy.ndarray
    """
    f_prev = as_float(f_prev)
    v = as_float(v)
    if v.ndim != 3 or v.shape[0] != 2:
        raise ShapeError(f"motion field must be 2×H×W, got shape {v.shape}")
    _check_spatial("motion field", v, *f_prev.shape[1:])
    coords = _base_grid(*f_prev.shape[1:], f_prev.dtype) + v
    return bilinear_sample(f_prev, coords, padding="border")


def _branch_input(v, f_warp, r):
    height, width = f_warp.shape[1:]
    _check_spatial("motion field", v, height, width)
    _check_spatial("residual map", r, height, width)
    if r.shape[0] != 1:
        raise ShapeError(f"residual map must have 1 channel, got {r.shape[0]}")
    return np.concatenate([as_float(v), as_float(f_warp), as_float(r)], axis=0)


def _branch(x, params, prefix):
    hidden = leaky_relu(
        conv2d(x, params.weight(f"{prefix}1"), params.bias(f"{prefix}1")), LEAKY_SLOPE
    )
    return conv2d(hidden, params.weight(f"{prefix}2"), params.bias(f"{prefix}2"))


def predict_offsets(v, f_warp, r, params):
    """
    Tap offsets: the motion field added to every tap's (dy, dx) plus a learned correction.

    :return: Offsets 2K×H×W, channels (2k, 2k+1) = (dy, dx) of tap k
    :rtype: numpy.ndarray
    """
    correction = _branch(_branch_input(v, f_warp, r), params, "offset")
    return np.tile(as_float(v), (TAPS, 1, 1)) + correction


def predict_mask(v, f_warp, r, params):
    """
    Modulation mask: the residual map on every tap plus a learned term, clamped to [0, 1].

    :return: Mask K×H×W
    :rtype: numpy.ndarray
    """
    correction = _branch(_branch_input(v, f_warp, r), params, "mask")
    return np.clip(np.tile(as_float(r), (TAPS, 1, 1)) + correction, 0.0, 1.0)


def _check_deform_inputs(f_prev, offsets, mask, weight):
    c, height, width = f_prev.shape
    if offsets.shape != (2 * TAPS, height, width):
        raise ShapeError(
            f"offsets must be {2 * TAPS}×{height}×{width}, got {offsets.shape}"
        )
    if mask.shape != (TAPS, height, width):
        raise ShapeError(f"mask must be {TAPS}×{height}×{width}, got {mask.shape}")
    if weight.ndim != 4 or weight.shape[1:] != (c, KERNEL, KERNEL):
        raise ShapeError(
            f"deformable weight must be O×{c}×{KERNEL}×{KERNEL}, got {weight.shape}"
        )
    if mask.size and (mask.min() < 0 or mask.max() > 1):
        raise ValueError("modulation mask must lie in [0, 1]")


def _tap_coords(base, offsets, k):
    ry, rx = TAP_OFFSETS[k]
    coords = base.copy()
    coords[0] += ry + offsets[2 * k]
    coords[1] += rx + offsets[2 * k + 1]
    return coords


def deform_conv(f_prev, offsets, mask, weight):
    """
    Modulated deformable 3×3 convolution with one offset group; taps falling
    outside the plane read zero.

    :param f_prev: Features C×H×W
    :type f_prev: numpy.ndarray
    :param offsets: Offsets 2K×H×W
    :type offsets: numpy.ndarray
    :param mask: Modulation K×H×W in [0, 1]
    :type mask: numpy.ndarray
    :param weight: Kernel O×C×3×3
    :type weight: numpy.ndarray
    :return: Aligned features O×H×W
    :rtype: numpy.ndarray
    """
    f_prev = as_float(f_prev)
    offsets = np.asarray(offsets, dtype=f_prev.dtype)
    mask = np.asarray(mask, dtype=f_prev.dtype)
    weight = np.asarray(weight, dtype=f_prev.dtype)
    _check_deform_inputs(f_prev, offsets, mask, weight)

    _, height, width = f_prev.shape
    base = _base_grid(height, width, f_prev.dtype)
    out = np.zeros((weight.shape[0], height, width), f_prev.dtype)
    for k in range(TAPS):
        sampled = bilinear_sample(f_prev, _tap_coords(base, offsets, k), padding="zeros")
        ky, kx = divmod(k, KERNEL)
        out += np.einsum("oc,chw->ohw", weight[:, :, ky, kx], sampled * mask[k])
    return out


def deform_conv_offset_grad(f_prev, offsets, mask, weight, out_channel, y, x):
    """
    Derivative of one output value of ``deform_conv`` with respect to the 2K
    offsets at the same pixel.

    :return: Vector of length 2K ordered like the offset channels
    :rtype: numpy.ndarray
    """
    f_prev = as_float(f_prev)
    offsets = np.asarray(offsets, dtype=f_prev.dtype)
    mask = np.asarray(mask, dtype=f_prev.dtype)
    weight = np.asarray(weight, dtype=f_prev.dtype)
    _check_deform_inputs(f_prev, offsets, mask, weight)

    grad = np.zeros(2 * TAPS, f_prev.dtype)
    for k, (ry, rx) in enumerate(TAP_OFFSETS):
        coords = np.array(
            [[[y + ry + offsets[2 * k, y, x]]], [[x + rx + offsets[2 * k + 1, y, x]]]],
            dtype=f_prev.dtype,
        )
        # C×2×1×1
        per_channel = bilinear_sample_grad_channels(f_prev, coords)[:, :, 0, 0]
        ky, kx = divmod(k, KERNEL)
        taps = weight[out_channel, :, ky, kx] * mask[k, y, x]
        grad[2 * k] = taps @ per_channel[:, 0]
        grad[2 * k + 1] = taps @ per_channel[:, 1]
    return grad


def align_features(f_prev_enc, v, r, params):
    """
    Warp, predict offsets and mask, and run the deformable convolution.

    :return: (aligned features, offsets, mask)
    :rtype: tuple
    """
    f_warp = warp_features(f_prev_enc, v)
    offsets = predict_offsets(v, f_warp, r, params)
    mask = predict_mask(v, f_warp, r, params)
    aligned = deform_conv(f_prev_enc, offsets, mask, params.weight("dcn"))
    return aligned, offsets, mask


def cpfa_step(f_t_enc, state, f_prev_enc, v, r, params):
    """
    One alignment block: align the previous features and fuse them with the current
    frame's features and the running hidden state.

    :param f_t_enc: Current frame features C×H×W
    :param state: Hidden state from the previous step
    :type state: PropagationState
    :param f_prev_enc: Previous frame features C×H×W
    :param v: Motion field 2×H×W
    :param r: Residual map 1×H×W
    :param params: Network weights
    :type params: CpfaParams
    :rtype: PropagationState
    """
    aligned, _, _ = align_features(f_prev_enc, v, r, params)
    fused = conv2d(
        np.concatenate([as_float(f_t_enc), aligned, state.features], axis=0),
        params.weight("fusion"),
        params.bias("fusion"),
    )
    return PropagationState(leaky_relu(fused, LEAKY_SLOPE), state.frame_index + 1)


def _cascade(inputs, priors, params, order):
    """Run cpfa_step over ``order``; the step's predecessor is the previous index visited."""
    channels, height, width = inputs[0].shape
    state = PropagationState.initial(channels, height, width)
    outputs = [None] * len(inputs)
    previous = None
    for index in order:
        v, r = priors[index]
        if previous is None:
            f_prev = inputs[index]
            v = np.zeros_like(v)
            r = np.zeros_like(r)
        else:
            f_prev = inputs[previous]
        state = cpfa_step(inputs[index], state, f_prev, v, r, params)
        state.frame_index = index
        outputs[index] = state.features
        previous = index
    return outputs


def propagate_sequence(frames, forward_priors, params, mode=FORWARD_MODE, backward_priors=None):
    """
    Encode every frame and propagate features through the alignment cascade.

    :param frames: RGB tensors 3×H×W in [0, 1]
    :type frames: list
    :param forward_priors: Per-frame (V, R) for t-1 -> t
    :type forward_priors: list
    :param params: Network weights
    :type params: CpfaParams
    :param mode: "forward" or "bidirectional"
    :type mode: str
    :param backward_priors: Per-frame (V, R) for t+1 -> t, required when bidirectional
    :type backward_priors: list
    :return: Per-frame hidden features C×H×W
    :rtype: list
    """
    if mode not in (FORWARD_MODE, BIDIRECTIONAL_MODE):
        raise ValueError(f"mode must be 'forward' or 'bidirectional', got {mode!r}")
    if not frames:
        raise ShapeError("cannot propagate an empty sequence")
    if forward_priors is None or len(forward_priors) < len(frames):
        raise ValueError("forward priors are missing for some frames")
    if mode == BIDIRECTIONAL_MODE and (
        backward_priors is None or len(backward_priors) < len(frames)
    ):
        raise ValueError("bidirectional propagation needs backward priors for every frame")

    encoded = [encode_frame(frame, params) for frame in frames]
    steps = range(len(frames))
    features = _cascade(encoded, forward_priors, params, steps)
    logger.debug(f"Forward propagation done over {len(frames)} frame(s)")
    if mode == BIDIRECTIONAL_MODE:
        features = _cascade(features, backward_priors, params, reversed(steps))
        logger.debug(f"Backward propagation done over {len(frames)} frame(s)")
    return features


def restore(frames, features, params):
    """
    Stage-one restoration: frame plus a predicted correction, clamped to [0, 1].

    :param frames: RGB tensors 3×H×W in [0, 1]
    :param features: Hidden features from propagate_sequence
    :param params: Network weights
    :return: Restored RGB tensors
    :rtype: list
    """
    restored = []
    for frame, feat in zip(frames, features):
        hidden = leaky_relu(
            conv2d(feat, params.weight("head1"), params.bias("head1")), LEAKY_SLOPE
        )
        correction = conv2d(hidden, params.weight("head2"), params.bias("head2"))
        restored.append(np.clip(as_float(frame) + correction, 0.0, 1.0))
    return restored
