"""Flat key=value run configuration with ``tiny`` and ``paper`` presets."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .features import FeatureParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    # features
    sample_rate: int = 32000
    window: int = 1024
    hop: int = 320
    n_mels: int = 64
    f_min: float = 0.0
    floor_eps: float = 1e-10
    # keyword encoder
    channels: str = "64,128,256,512,1024,2048"
    pools: str = "2x2,2x2,2x2,2x2,2x2,2x2"
    head_dim: int = 512
    n_keywords: int = 300
    c1: int = 512
    top_k: int = 5
    # decoder (dim is C, hidden is H, attn_dim is M)
    dim: int = 512
    hidden: int = 512
    attn_dim: int = 512
    embed_dim: int = 512
    use_prev_words: bool = True
    use_keywords: bool = True
    share_semantic_attention: bool = True
    dropout_embed: float = 0.5
    dropout_classifier: float = 0.25
    # inference
    max_len: int = 30
    beam_size: int = 4
    length_penalty: float = 0.0
    # optimisation
    batch_size: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_encoder_frozen: float = 1e-3
    lr_encoder_finetune: float = 5e-4
    lr_ce: float = 3e-4
    lr_rl: float = 5e-5
    lr_decay: float = 0.98
    epochs_encoder_frozen: int = 80
    epochs_encoder_finetune: int = 25
    epochs_ce: int = 30
    epochs_rl: int = 55
    label_smoothing: float = 0.1
    teacher_forcing_prob: float = 1.0
    teacher_forcing_decay: float = 0.0
    grad_clip: float = 5.0
    mixup_alpha: float = 1.0
    mixup_prob: float = 1.0
    spec_augment_encoder: bool = True
    spec_augment_ce: bool = True
    time_masks: int = 2
    freq_masks: int = 2
    max_freq_w: int = 8
    freeze_encoder_rl: bool = True
    captions_per_clip: int = 5
    seed: int = 0
    precision: str = "double"

    def __post_init__(self):
        validate(self)

    # -- derived views --------------------------------------------------------
    def feature_params(self) -> FeatureParams:
        return FeatureParams(self.sample_rate, self.window, self.hop, self.n_mels, self.f_min, None, self.floor_eps)

    def channel_list(self) -> list:
        return [int(c) for c in self.channels.split(",")]

    def pool_list(self) -> list:
        out = []
        for item in self.pools.split(","):
            a, b = item.lower().split("x")
            out.append((int(a), int(b)))
        return out

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32

    def model_hash(self) -> str:
        blob = json.dumps({k: getattr(self, k) for k in ARCH_KEYS}, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, **kw) -> "Config":
        unknown = set(kw) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **{k: _coerce(k, v) for k, v in kw.items()})

    # -- file format ----------------------------------------------------------
    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}={str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


ARCH_KEYS = (
    "sample_rate", "window", "hop", "n_mels", "f_min", "floor_eps",
    "channels", "pools", "head_dim", "n_keywords", "c1", "top_k",
    "dim", "hidden", "attn_dim", "embed_dim",
    "use_prev_words", "use_keywords", "share_semantic_attention", "precision",
)

_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(key: str, value):
    kind = _TYPES[key]
    if not isinstance(value, str):
        return value
    v = value.strip()
    if kind == "bool":
        if v.lower() in ("1", "true", "yes", "on"):
            return True
        if v.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if kind == "int":
            return int(v)
        if kind == "float":
            return float(v)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    return v


def validate(cfg: Config) -> None:
    if not (cfg.dim == cfg.hidden == cfg.embed_dim):
        raise ConfigError(
            f"dim ({cfg.dim}), hidden ({cfg.hidden}) and embed_dim ({cfg.embed_dim}) must be equal: "
            "the attention gate halves [context, h] and the LSTM input sums four dim-vectors"
        )
    if cfg.precision not in ("double", "single"):
        raise ConfigError("precision must be 'double' or 'single'")
    chans, pools = cfg.channel_list(), cfg.pool_list()
    if len(chans) < 4:
        raise ConfigError("backbone needs at least 4 blocks (taps at blocks 3, 4 and last)")
    if len(chans) != len(pools):
        raise ConfigError("channels and pools must list one entry per block")
    for name in ("dropout_embed", "dropout_classifier"):
        if not 0.0 <= getattr(cfg, name) < 1.0:
            raise ConfigError(f"{name} must lie in [0, 1)")
    if not 0.0 <= cfg.label_smoothing < 1.0:
        raise ConfigError("label_smoothing must lie in [0, 1)")
    for name in ("lr_encoder_frozen", "lr_encoder_finetune", "lr_ce", "lr_rl", "lr_decay"):
        if getattr(cfg, name) <= 0:
            raise ConfigError(f"{name} must be positive")
    if cfg.top_k > cfg.n_keywords:
        raise ConfigError("top_k cannot exceed n_keywords")


PAPER = Config()

TINY = Config(
    sample_rate=16000, window=512, hop=256, n_mels=32,
    channels="8,8,16,16,32,32", pools="2x2,2x2,2x2,2x2,1x2,1x1",
    head_dim=32, n_keywords=20, c1=64, top_k=5,
    dim=64, hidden=64, attn_dim=64, embed_dim=64,
    dropout_embed=0.1, dropout_classifier=0.1,
    max_len=24, batch_size=25,
    lr_encoder_frozen=3e-3, lr_encoder_finetune=6e-3, lr_ce=1.5e-2, lr_rl=5e-5,
    epochs_encoder_frozen=20, epochs_encoder_finetune=150, epochs_ce=200, epochs_rl=5,
    mixup_prob=0.25, spec_augment_encoder=False, spec_augment_ce=False,
    max_freq_w=4, captions_per_clip=1,
)

PRESETS = {"paper": PAPER, "tiny": TINY}


def parse_config_text(text: str, base: Config = PAPER) -> Config:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        k, v = line.split("=", 1)
        values[k.strip()] = v.strip()
    return base.with_overrides(**values)


def load_config(path=None, preset: str = "paper", overrides: dict | None = None) -> Config:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    cfg = PRESETS[preset]
    if path is not None:
        cfg = parse_config_text(Path(path).read_text(encoding="utf-8"), cfg)
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    return cfg


def config_dict(cfg: Config) -> dict:
    return asdict(cfg)
