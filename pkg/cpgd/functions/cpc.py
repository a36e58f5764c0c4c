"""
Coding-prior controlled attention and the spaced ancestral sampler.

The attention query is shifted by a projection of the features gated with a
per-token prior mask ``A = sigmoid(L_m(dy, dx, r))``. The noise predictor is an
injected callable ``predictor(y_t, t_embedding, control) -> eps`` working on
channel-first latents 3×h×w and token-major control features N×D.
"""

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from cpgd.functions.params import init_uniform, load_params, save_params
from cpgd.functions.tensor_core import as_float, leaky_relu, linear, sigmoid, softmax_rows
from cpgd.utils.errors import ConfigError, ShapeError

logger = logging.getLogger("cpgd")

MAGIC = b"CPCA"
HEADS_ENTRY = "attn.heads"
LATENT_CHANNELS = 3
BETA_START = 1e-4
BETA_END = 2e-2


@dataclass
class CpcAttnParams:
    """
    Layers: ``mask`` (3→1), ``q``, ``qm``, ``k``, ``v`` (D→D), the control input
    projection ``ctrl_in`` (3→D) and the toy predictor's ``pred_in`` (3→D),
    ``pred_attn_{q,qm,k,v}`` and ``pred_out`` (D→3). Weights are stored D_in×D_out.
    The ``qm`` projections carry no bias, so the query shift is A · ‖L_qm(F)‖.

    On disk the head count travels as the rank-1 entry ``attn.heads``.
    """

    layers: dict
    heads: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.dim % self.heads:
            raise ConfigError(f"attention width {self.dim} not divisible by {self.heads} heads")

    @property
    def dim(self):
        return self.layers["q.weight"].shape[0]

    def weight(self, name):
        return self.layers[f"{name}.weight"]

    def bias(self, name):
        return self.layers.get(f"{name}.bias")

    def save(self, path):
        layers = dict(self.layers)
        layers[HEADS_ENTRY] = np.array([self.heads], np.float32)
        save_params(path, MAGIC, self.seed, layers)

    @classmethod
    def load(cls, path):
        seed, layers = load_params(path, MAGIC)
        heads = int(layers.pop(HEADS_ENTRY, np.array([1]))[0])
        return cls(layers, heads, seed)


def init_cpc_params(dim=32, heads=1, seed=0, disable_modulation=False):
    """
    Seeded attention and toy-predictor weights.

    :param dim: Token width D
    :type dim: int
    :param heads: Attention heads h
    :type heads: int
    :param seed: Generator seed
    :type seed: int
    :param disable_modulation: Zero the modulated-query projections
    :type disable_modulation: bool
    :rtype: CpcAttnParams
    """
    rng = np.random.default_rng(seed)
    shapes = {
        "mask": (3, 1),
        "q": (dim, dim),
        "qm": (dim, dim),
        "k": (dim, dim),
        "v": (dim, dim),
        "ctrl_in": (LATENT_CHANNELS, dim),
        "pred_in": (LATENT_CHANNELS, dim),
        "pred_attn_q": (dim, dim),
        "pred_attn_qm": (dim, dim),
        "pred_attn_k": (dim, dim),
        "pred_attn_v": (dim, dim),
        "pred_out": (dim, LATENT_CHANNELS),
    }
    layers = {}
    for name, (fan_in, fan_out) in shapes.items():
        if disable_modulation and name == "qm":
            layers[f"{name}.weight"] = np.zeros((fan_in, fan_out), np.float32)
            continue
        layers[f"{name}.weight"] = init_uniform(rng, (fan_in, fan_out), fan_in)
        # bias-free query modulation
        if not name.endswith("qm"):
            layers[f"{name}.bias"] = init_uniform(rng, (fan_out,), fan_in)
    return CpcAttnParams(layers, heads, seed)


def to_tokens(tensor):
    """C×H×W -> (H·W)×C, row-major over pixels."""
    tensor = as_float(tensor)
    return tensor.reshape(tensor.shape[0], -1).T


def from_tokens(tokens, height, width):
    """(H·W)×C -> C×H×W."""
    return np.ascontiguousarray(tokens.T.reshape(-1, height, width))


def mean_pool(tensor, factor):
    """
    Mean over factor×factor tiles; partial edge tiles average their valid pixels.

    :param tensor: C×H×W
    :param factor: Tile size
    :return: C×ceil(H/factor)×ceil(W/factor)
    :rtype: numpy.ndarray
    """
    tensor = as_float(tensor)
    if factor == 1:
        return tensor
    _, height, width = tensor.shape
    rows = np.arange(0, height, factor)
    cols = np.arange(0, width, factor)
    sums = np.add.reduceat(np.add.reduceat(tensor.astype(np.float64), rows, axis=1), cols, axis=2)
    counts = np.outer(np.diff(np.append(rows, height)), np.diff(np.append(cols, width)))
    return (sums / counts).astype(tensor.dtype)


def downsample_priors(v, r, factor):
    """
    Bring pixel-resolution priors to the latent grid: tile means, with motion
    magnitudes divided by the factor.

    :param v: Motion field 2×H×W
    :param r: Residual map 1×H×W
    :param factor: Downsampling factor
    :type factor: int
    :return: (V_latent, R_latent)
    :rtype: tuple
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    v_latent = mean_pool(v, factor)
    if factor != 1:
        v_latent = v_latent / v_latent.dtype.type(factor)
    return v_latent, mean_pool(r, factor)


def prior_mask(v_latent, r_latent, params):
    """
    Per-token gate A = sigmoid(L_m(dy, dx, r)).

    :return: Tensor N×1 in (0, 1)
    :rtype: numpy.ndarray
    """
    if v_latent.shape[1:] != r_latent.shape[1:]:
        raise ShapeError(
            f"latent priors disagree: V is {v_latent.shape}, R is {r_latent.shape}"
        )
    tokens = to_tokens(np.concatenate([as_float(v_latent), as_float(r_latent)], axis=0))
    return sigmoid(linear(tokens, params.weight("mask"), params.bias("mask")))


def modulated_query(f, a, params, prefix=""):
    """
    Q' = L_q(F) + L_qm(F ⊙ A); the shift from L_q(F) scales with A because L_qm has no bias.

    :param f: Tokens N×D
    :param a: Mask N×1
    :return: Queries N×D
    :rtype: numpy.ndarray
    """
    f = as_float(f)
    a = np.asarray(a, dtype=f.dtype)
    q = linear(f, params.weight(f"{prefix}q"), params.bias(f"{prefix}q"))
    return q + linear(f * a, params.weight(f"{prefix}qm"))


def cp_attention(f, a, params, prefix=""):
    """
    Self-attention with a prior-modulated query:
    Q' = L_q(F) + L_qm(F ⊙ A) with a bias-free L_qm, K = L_k(F), Val = L_v(F),
    softmax(Q'Kᵀ/√d)·Val per head.

    :param f: Tokens N×D
    :param a: Mask N×1 broadcast over channels
    :param params: Attention weights
    :type params: CpcAttnParams
    :param prefix: Layer-name prefix selecting an attention block
    :type prefix: str
    :return: Tokens N×D
    :rtype: numpy.ndarray
    """
    f = as_float(f)
    a = np.asarray(a, dtype=f.dtype)
    dim = params.weight(f"{prefix}q").shape[0]
    if f.ndim != 2 or f.shape[1] != dim:
        raise ShapeError(f"attention expects N×{dim} tokens, got shape {f.shape}")
    if a.shape != (f.shape[0], 1):
        raise ShapeError(f"attention mask must be {f.shape[0]}×1, got shape {a.shape}")

    q = modulated_query(f, a, params, prefix)
    k = linear(f, params.weight(f"{prefix}k"), params.bias(f"{prefix}k"))
    val = linear(f, params.weight(f"{prefix}v"), params.bias(f"{prefix}v"))

    head_dim = dim // params.heads
    scale = f.dtype.type(1.0 / np.sqrt(head_dim))
    out = []
    for h in range(params.heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        weights = softmax_rows((q[:, cols] @ k[:, cols].T) * scale)
        out.append(weights @ val[:, cols])
    return np.concatenate(out, axis=1)


@dataclass
class SamplerSchedule:
    """Original linear-beta schedule and its respaced subset (float64)."""

    t_train: int
    betas: np.ndarray
    alphas_cumprod: np.ndarray
    indices: np.ndarray
    respaced_betas: np.ndarray
    respaced_alphas: np.ndarray
    respaced_alphas_cumprod: np.ndarray

    @property
    def steps(self):
        return len(self.indices)

    def alpha_bar_prev(self, k):
        return 1.0 if k == 0 else float(self.respaced_alphas_cumprod[k - 1])


def build_schedule(t_train=1000, steps=50, beta_start=BETA_START, beta_end=BETA_END):
    """
    Linear betas over ``t_train`` steps, respaced to ``steps`` evenly spread timesteps.

    :param t_train: Training diffusion steps
    :type t_train: int
    :param steps: Sampling steps S, 2 <= S <= t_train
    :type steps: int
    :rtype: SamplerSchedule
    """
    if steps < 2:
        raise ConfigError(f"sampling steps must be at least 2, got {steps}")
    if steps > t_train:
        raise ConfigError(f"sampling steps {steps} exceed training steps {t_train}")

    betas = np.linspace(beta_start, beta_end, t_train, dtype=np.float64)
    alphas_cumprod = np.cumprod(1.0 - betas)
    # round half up
    indices = np.unique(np.floor(np.linspace(0, t_train - 1, steps) + 0.5).astype(np.int64))

    selected = alphas_cumprod[indices]
    previous = np.concatenate([[1.0], selected[:-1]])
    respaced_betas = 1.0 - selected / previous
    respaced_alphas = 1.0 - respaced_betas
    return SamplerSchedule(
        t_train=t_train,
        betas=betas,
        alphas_cumprod=alphas_cumprod,
        indices=indices,
        respaced_betas=respaced_betas,
        respaced_alphas=respaced_alphas,
        respaced_alphas_cumprod=np.cumprod(respaced_alphas),
    )


def timestep_embedding(timestep, dim):
    """
    Sinusoidal embedding of one integer timestep.

    :rtype: numpy.ndarray
    """
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    angles = timestep * freqs
    emb = np.concatenate([np.sin(angles), np.cos(angles)])
    if dim % 2:
        emb = np.append(emb, 0.0)
    return emb.astype(np.float32)


def prompt_bias(prompt_tokens, dim, scale=0.1):
    """
    Hash an opaque prompt token sequence into a deterministic bias vector.

    :param prompt_tokens: Token ids
    :type prompt_tokens: list
    :param dim: Vector length
    :type dim: int
    :rtype: numpy.ndarray
    """
    if not prompt_tokens:
        return np.zeros(dim, np.float32)
    payload = ",".join(str(int(t)) for t in prompt_tokens).encode("utf-8")
    stream = b""
    counter = 0
    while len(stream) < dim:
        stream += hashlib.sha256(payload + counter.to_bytes(4, "little")).digest()
        counter += 1
    raw = np.frombuffer(stream[:dim], np.uint8).astype(np.float32)
    return (raw / 255.0 - 0.5) * np.float32(2 * scale)


@dataclass
class Conditioning:
    """
    Stage-one frame X (3×H×W), pixel-resolution priors V (2×H×W) and R (1×H×W),
    and prompt token ids P.
    """

    x: np.ndarray
    v: np.ndarray
    r: np.ndarray
    prompt: tuple = ()
    latent_factor: int = 4
    use_prior_attention: bool = True


def control_features(cond, params):
    """
    Control tokens: the pooled stage-one frame projected to D, shifted by the prompt
    bias and passed through the prior-modulated attention.

    :type cond: Conditioning
    :type params: CpcAttnParams
    :return: Tokens N×D on the latent grid
    :rtype: numpy.ndarray
    """
    x_latent = mean_pool(cond.x, cond.latent_factor)
    v_latent, r_latent = downsample_priors(cond.v, cond.r, cond.latent_factor)
    tokens = linear(to_tokens(x_latent), params.weight("ctrl_in"), params.bias("ctrl_in"))
    tokens = tokens + prompt_bias(cond.prompt, params.dim)
    if cond.use_prior_attention:
        a = prior_mask(v_latent, r_latent, params)
    else:
        a = np.zeros((tokens.shape[0], 1), tokens.dtype)
    return cp_attention(tokens, a, params)


def latent_shape(cond):
    _, height, width = cond.x.shape
    f = cond.latent_factor
    return (LATENT_CHANNELS, -(-height // f), -(-width // f))


class ZeroNoisePredictor:
    """Predicts zero noise; makes every update closed-form."""

    def __call__(self, y_t, t_embedding, control):
        return np.zeros_like(as_float(y_t))


class ToyNoisePredictor:
    """
    Two linear layers around one attention block:
    h = lrelu(L_in(y) + emb(t) + control); h = h + attn(h); eps = L_out(h).
    """

    def __init__(self, params):
        self.params = params

    def __call__(self, y_t, t_embedding, control):
        p = self.params
        _, height, width = y_t.shape
        hidden = linear(to_tokens(y_t), p.weight("pred_in"), p.bias("pred_in"))
        hidden = leaky_relu(hidden + t_embedding + control, 0.1)
        # no prior gate inside the predictor
        gate = np.zeros((hidden.shape[0], 1), hidden.dtype)
        hidden = hidden + cp_attention(hidden, gate, p, prefix="pred_attn_")
        eps = linear(hidden, p.weight("pred_out"), p.bias("pred_out"))
        return from_tokens(eps, height, width)


def initial_noise(shape, seed):
    """
    Seeded standard normal latent y_T.

    :rtype: numpy.ndarray
    """
    return np.random.default_rng(seed).standard_normal(shape).astype(np.float32)


def denoise_step(cond, y_t, k, schedule, predictor, params, rng=None, control=None):
    """
    One ancestral update at respaced position ``k``; position 0 adds no noise.

    :param cond: Stage-one frame, priors and prompt
    :type cond: Conditioning
    :param y_t: Current latent 3×h×w
    :param k: Schedule position in [0, S)
    :type k: int
    :param schedule: Respaced schedule
    :type schedule: SamplerSchedule
    :param predictor: Noise predictor callable
    :param params: Attention weights
    :type params: CpcAttnParams
    :param rng: Generator for the injected noise, required when k > 0
    :type rng: numpy.random.Generator
    :param control: Precomputed control features (computed from cond when None)
    :return: y_{t-1}
    :rtype: numpy.ndarray
    """
    if not 0 <= k < schedule.steps:
        raise IndexError(f"schedule position {k} outside [0, {schedule.steps})")
    y_t = as_float(y_t)
    if control is None:
        control = control_features(cond, params)

    emb = timestep_embedding(int(schedule.indices[k]), params.dim)
    eps = as_float(predictor(y_t, emb, control))
    if eps.shape != y_t.shape:
        raise ShapeError(f"predictor returned shape {eps.shape}, expected {y_t.shape}")

    alpha = schedule.respaced_alphas[k]
    beta = schedule.respaced_betas[k]
    alpha_bar = schedule.respaced_alphas_cumprod[k]
    mean = (y_t - (beta / np.sqrt(1.0 - alpha_bar)) * eps) / np.sqrt(alpha)
    if k == 0:
        return mean.astype(np.float32)

    if rng is None:
        raise ValueError(f"schedule position {k} injects noise and needs a seeded generator")
    variance = beta * (1.0 - schedule.alpha_bar_prev(k)) / (1.0 - alpha_bar)
    noise = rng.standard_normal(y_t.shape)
    return (mean + np.sqrt(variance) * noise).astype(np.float32)


def sample(y_T, cond, schedule, predictor, params, rng, start=None):
    """
    Fold denoise_step from position ``start`` (default S-1) down to 0.

    :param y_T: Initial latent
    :param cond: Conditioning
    :type cond: Conditioning
    :param schedule: Respaced schedule
    :type schedule: SamplerSchedule
    :param predictor: Noise predictor callable
    :param params: Attention weights
    :type params: CpcAttnParams
    :param rng: Generator for injected noise
    :type rng: numpy.random.Generator
    :param start: First schedule position to run
    :type start: int
    :return: y_0
    :rtype: numpy.ndarray
    """
    if start is None:
        start = schedule.steps - 1
    control = control_features(cond, params)
    y = as_float(y_T)
    for k in range(start, -1, -1):
        y = denoise_step(cond, y, k, schedule, predictor, params, rng, control)
        logger.debug(f"Sampling position {k} (timestep {int(schedule.indices[k])}) done")
    return y
