"""Configuration dataclasses and the flat ``key = value`` config file format.

A config file is UTF-8 text, one ``key = value`` assignment per line.
Blank lines are skipped and ``#`` starts a comment (full line or trailing).
Keys form a single flat namespace covering every field of NetConfig,
LossWeights and TrainConfig; unknown keys are an error.  Command-line
overrides are applied on top of file values.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any


@dataclass(frozen=True)
class NetConfig:
    """Shape parameters for the seven networks.

    The defaults are the desk profile: small enough that a full training
    run finishes in minutes on a single CPU.  ``NetConfig.paper()`` gives
    the full-scale profile (128px, 2048-dim features, 312-dim noise).
    """

    scale_profile: str = "desk"  # "desk" | "paper"
    resolution: int = 32
    feat_dim: int = 128          # domain-specific feature width (both encoders)
    attr_dim: int = 32           # attribute vector width
    noise_dim: int = 16
    n_seen_classes: int | None = None  # derived from the dataset when None
    base_channels: int = 32      # first conv width of content encoder / image critic
    content_blocks: int = 4      # residual blocks in content encoder and generator
    critic_downsamples: int = 3  # stride-2 convs in the image critic trunk
    mlp_hidden: int = 256        # hidden width of attribute encoder and feature critic
    vision_pretrained: bool = False  # paper profile only: start backbone from generic weights

    @staticmethod
    def paper(attr_dim: int = 1024, n_seen_classes: int | None = None,
              vision_pretrained: bool = False) -> "NetConfig":
        return NetConfig(
            scale_profile="paper",
            resolution=128,
            feat_dim=2048,
            attr_dim=attr_dim,
            noise_dim=312,
            n_seen_classes=n_seen_classes,
            base_channels=64,
            content_blocks=16,
            critic_downsamples=6,
            mlp_hidden=4096,
            vision_pretrained=vision_pretrained,
        )

    @staticmethod
    def desk(**overrides: Any) -> "NetConfig":
        return dataclasses.replace(NetConfig(), **overrides)

    def validate(self) -> None:
        if self.scale_profile not in ("desk", "paper"):
            raise ValueError(f"unknown scale_profile {self.scale_profile!r}")
        if self.resolution <= 0 or self.resolution % 4 != 0:
            raise ValueError(
                f"resolution must be a positive multiple of 4 (two stride-2 stages), got {self.resolution}")
        if self.resolution % (2 ** self.critic_downsamples) != 0:
            raise ValueError(
                f"resolution {self.resolution} not divisible by critic downsampling "
                f"factor {2 ** self.critic_downsamples}")
        if self.feat_dim % 4 != 0:
            raise ValueError(f"feat_dim must be divisible by 4, got {self.feat_dim}")
        if self.scale_profile == "paper" and self.feat_dim != 2048:
            raise ValueError(
                f"paper profile fixes feat_dim at 2048 (backbone trunk width), got {self.feat_dim}")
        for name in ("attr_dim", "noise_dim", "base_channels", "content_blocks",
                     "critic_downsamples", "mlp_hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_seen_classes is not None and self.n_seen_classes < 2:
            raise ValueError(f"need at least 2 seen classes, got {self.n_seen_classes}")


@dataclass(frozen=True)
class LossWeights:
    lambda_c: float = 1.0
    lambda_r: float = 1.0
    lambda_m: float = 50.0   # 50 for the bird preset, 200 for the flower preset
    lambda_gp: float = 10.0

    def validate(self) -> None:
        for name in ("lambda_c", "lambda_r", "lambda_m", "lambda_gp"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule and loop parameters.

    The run length is ``total_iters + decay_total_iters``: the learning
    rate stays at ``lr`` for the first ``total_iters`` iterations, then
    decays stepwise-linearly to zero over ``decay_total_iters`` in
    ``decay_every``-sized steps.  A run without decay sets
    ``decay_total_iters = 0``.
    """

    total_iters: int = 5000
    lr: float = 1e-4
    decay_every: int = 1000
    decay_total_iters: int = 0
    batch_size: int = 8
    n_critic: int = 5
    weights: LossWeights = field(default_factory=LossWeights)
    disable_cls: bool = False
    disable_gan_s: bool = False
    m_limit: int | None = None
    seed: int = 0
    checkpoint_every: int = 1000

    @property
    def run_length(self) -> int:
        return self.total_iters + self.decay_total_iters

    def validate(self) -> None:
        for name in ("total_iters", "decay_every", "batch_size", "n_critic",
                     "checkpoint_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.decay_total_iters < 0:
            raise ValueError("decay_total_iters must be nonnegative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.m_limit is not None and self.m_limit < 2:
            raise ValueError("m_limit must be at least 2")
        self.weights.validate()


# Flat-file key -> (owner, field name).  Owners: "net", "weights", "train".
_NET_KEYS = {f.name: f for f in dataclasses.fields(NetConfig)}
_WEIGHT_KEYS = {f.name: f for f in dataclasses.fields(LossWeights)}
_TRAIN_KEYS = {f.name: f for f in dataclasses.fields(TrainConfig) if f.name != "weights"}


def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines into a raw string dict."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not key or not val:
            raise ValueError(f"config line {lineno}: empty key or value in {raw!r}")
        if key in values:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        values[key] = val
    return values


def _coerce(key: str, raw: str, py_type: Any) -> Any:
    if py_type in ("int", int):
        return int(raw)
    if py_type in ("float", float):
        return float(raw)
    if py_type in ("bool", bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {key!r}: expected bool, got {raw!r}")
    if py_type in ("int | None", "Optional[int]"):
        if raw.lower() in ("none", ""):
            return None
        return int(raw)
    return raw  # strings


def resolve_configs(file_values: dict[str, str] | None = None,
                    overrides: dict[str, Any] | None = None,
                    ) -> tuple[NetConfig, TrainConfig]:
    """Build (NetConfig, TrainConfig) from file values plus overrides.

    ``overrides`` are already-typed values (from CLI flags) and win over
    the file.  Unknown keys raise ValueError.
    """
    net_kwargs: dict[str, Any] = {}
    weight_kwargs: dict[str, Any] = {}
    train_kwargs: dict[str, Any] = {}

    def assign(key: str, value: Any, typed: bool) -> None:
        if key in _NET_KEYS:
            f, dest = _NET_KEYS[key], net_kwargs
        elif key in _WEIGHT_KEYS:
            f, dest = _WEIGHT_KEYS[key], weight_kwargs
        elif key in _TRAIN_KEYS:
            f, dest = _TRAIN_KEYS[key], train_kwargs
        else:
            raise ValueError(f"unknown config key {key!r}")
        dest[key] = value if typed else _coerce(key, value, f.type)

    for key, raw in (file_values or {}).items():
        assign(key, raw, typed=False)
    for key, value in (overrides or {}).items():
        assign(key, value, typed=True)

    net = NetConfig(**net_kwargs)
    train = TrainConfig(weights=LossWeights(**weight_kwargs), **train_kwargs)
    net.validate()
    train.validate()
    return net, train


def config_to_flat_dict(net: NetConfig, train: TrainConfig) -> dict[str, Any]:
    """Flatten both configs back to the single config-file namespace."""
    out: dict[str, Any] = {}
    out.update(dataclasses.asdict(net))
    out.update({k: v for k, v in dataclasses.asdict(train).items() if k != "weights"})
    out.update(dataclasses.asdict(train.weights))
    return out


def format_config_text(net: NetConfig, train: TrainConfig) -> str:
    flat = config_to_flat_dict(net, train)
    lines = [f"{k} = {'none' if v is None else v}" for k, v in flat.items()]
    return "\n".join(lines) + "\n"


def net_config_hash(net: NetConfig) -> str:
    """Stable short hash of a network configuration, for provenance records."""
    payload = json.dumps(dataclasses.asdict(net), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:12]
