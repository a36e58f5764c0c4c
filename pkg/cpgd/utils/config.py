import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field

from cpgd.functions.codec import CodecConfig
from cpgd.utils.errors import ConfigError

logger = logging.getLogger("cpgd")

PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "../.."))
DEFAULT_CONFIG_PATH = os.path.join(PROJECT_ROOT, "config/run.json")
ECHO_NAME = "run_config.json"
THREADS_ENV = "CPGD_THREADS"


@dataclass
class RunConfig:
    """
    Settings shared by every subcommand. Unknown keys are rejected when loading.

    Codec: block_size, search_radius, quant, rle.
    Alignment: channels (feature width C), mode ("forward" | "bidirectional"),
    use_residual_prior (False zeroes the residual maps).
    Generation: t_train, steps, seed, latent_factor, attn_dim, heads, prompt_tokens,
    use_prior_attention (False disables the prior mask).
    Paths: input, output, priors, params, reference.
    """

    block_size: int = 16
    search_radius: int = 16
    quant: int = 1
    rle: bool = True
    channels: int = 16
    mode: str = "bidirectional"
    use_residual_prior: bool = True
    t_train: int = 1000
    steps: int = 50
    seed: int = 0
    latent_factor: int = 4
    attn_dim: int = 32
    heads: int = 1
    prompt_tokens: list = field(default_factory=list)
    use_prior_attention: bool = True
    input: str = None
    output: str = None
    priors: str = None
    params: str = None
    reference: str = None

    def _check_types(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is None and f.default is None:
                continue
            # bool is an int subclass
            wrong = not isinstance(value, f.type) or (f.type is int and isinstance(value, bool))
            if wrong:
                raise ConfigError(
                    f"{f.name} must be of type {f.type.__name__}, got {type(value).__name__} {value!r}"
                )
        for token in self.prompt_tokens:
            if isinstance(token, bool) or not isinstance(token, int):
                raise ConfigError(f"prompt_tokens must hold integer token ids, got {token!r}")

    def validate(self):
        self._check_types()
        self.codec_config()
        if self.mode not in ("forward", "bidirectional"):
            raise ConfigError(f"mode must be 'forward' or 'bidirectional', got {self.mode!r}")
        if self.channels < 1:
            raise ConfigError(f"channels must be positive, got {self.channels}")
        if self.steps < 1 or self.steps > self.t_train:
            raise ConfigError(f"steps must be in [1, {self.t_train}], got {self.steps}")
        if self.latent_factor < 1:
            raise ConfigError(f"latent_factor must be positive, got {self.latent_factor}")
        if self.heads < 1 or self.attn_dim % self.heads:
            raise ConfigError(
                f"attn_dim {self.attn_dim} must be divisible by heads {self.heads}"
            )
        return self

    def codec_config(self):
        return CodecConfig(self.block_size, self.search_radius, self.quant, self.rle)

    def to_dict(self):
        return dataclasses.asdict(self)


def load_run_config(path=None, **overrides):
    """
    Load a RunConfig from JSON and apply command-line overrides.

    :param path: JSON file; the packaged defaults are used when None
    :type path: str
    :param overrides: Field values that replace the file's (None values are ignored)
    :return: Validated configuration
    :rtype: RunConfig
    """
    values = {}
    if path is None and os.path.isfile(DEFAULT_CONFIG_PATH):
        path = DEFAULT_CONFIG_PATH
    if path is not None:
        try:
            with open(path) as f:
                values = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(values, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")

    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    return RunConfig(**values).validate()


def echo_config(cfg, out_dir):
    """
    Write the effective configuration into an output directory.

    :return: Path of the written file
    :rtype: str
    """
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, ECHO_NAME)
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=4)
    return path


def resolve_workers():
    """
    Worker cap from CPGD_THREADS, defaulting to the CPU count.

    :rtype: int
    """
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        workers = int(raw)
    except ValueError as e:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from e
    if workers < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return workers
