"""Engine configuration: one JSON document binding every stage together.

Hyperparameters appear under their conventional symbol names (d, n_h, d_p,
omega, beta, tau, lambda, ...). Unknown keys are rejected, defaults follow
the reference settings, and the canonical serialization is hashed into run
provenance and checkpoints.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from .errors import ConfigError
from .intent import IntentConfig
from .irl import IrlConfig

VERSION = "0.1.0"


@dataclass
class EngineConfig:
    # item representation
    d: int = 256
    n_h: int = 8
    d_p: int = 64
    omega: float = 50_000.0
    beta: float = 0.5
    price_norm_max: float = 100.0
    zero_text: bool = False
    zero_image: bool = False
    zero_price: bool = False
    zero_fusion: bool = False
    linear_routing: bool = False
    # intent encoder
    n_layers: int = 2
    n_heads: int = 2
    max_seq_len: int = 50
    dropout: float = 0.1
    pre_norm: bool = False
    # training
    learning_rate: float = 1e-3
    batch_size: int = 2048
    n_epochs: int = 30
    tau: float = 0.07
    lambda_: float = 1e-3
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    final_position_only: bool = False
    sample_routing: bool = True
    # adaptation
    mode: str = "relearn"
    variant: str = "base"
    # optional data paths (command-line flags win over these)
    data_dir: str | None = None
    task: str | None = None
    pretrained: str | None = None
    out: str | None = None

    _JSON_KEYS = {"lambda_": "lambda"}

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            out[self._JSON_KEYS.get(f.name, f.name)] = getattr(self, f.name)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        json_to_field = {cls._JSON_KEYS.get(f.name, f.name): f.name
                         for f in dataclasses.fields(cls)}
        defaults = {f.name: f.default for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in json_to_field:
                raise ConfigError(f"unknown config key {key!r}")
            name = json_to_field[key]
            if (type(defaults[name]) is float and isinstance(value, int)
                    and not isinstance(value, bool)):
                value = float(value)
            kwargs[name] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "EngineConfig":
        try:
            with open(path) as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(data)

    def validate(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name in ("data_dir", "task", "pretrained", "out"):
                if value is not None and not isinstance(value, str):
                    raise ConfigError(f"{f.name} must be a string path")
                continue
            expected = {int: int, float: (int, float), bool: bool, str: str}[type(f.default)]
            if isinstance(value, bool) and type(f.default) is not bool:
                raise ConfigError(f"{f.name}: boolean not allowed here")
            if not isinstance(value, expected):
                raise ConfigError(f"{f.name}: expected {type(f.default).__name__}, "
                                  f"got {type(value).__name__}")
        self.irl_config().validate()
        self.intent_config().validate()
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must lie in (0, 1]")
        if self.lambda_ < 0:
            raise ConfigError("lambda must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.n_epochs < 0:
            raise ConfigError("n_epochs must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.mode not in ("relearn", "finetune", "scratch"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.variant not in ("base", "with_interaction_emb"):
            raise ConfigError(f"unknown variant {self.variant!r}")

    def irl_config(self) -> IrlConfig:
        return IrlConfig(
            d=self.d, n_h=self.n_h, d_p=self.d_p, omega=self.omega, beta=self.beta,
            price_norm_max=self.price_norm_max, zero_text=self.zero_text,
            zero_image=self.zero_image, zero_price=self.zero_price,
            zero_fusion=self.zero_fusion, linear_routing=self.linear_routing,
        )

    def intent_config(self) -> IntentConfig:
        return IntentConfig(
            d=self.d, n_layers=self.n_layers, n_heads=self.n_heads,
            max_seq_len=self.max_seq_len, dropout=self.dropout,
            pre_norm=self.pre_norm,
        )

    def digest(self) -> bytes:
        return digest_configs(self)


def digest_configs(*cfgs) -> bytes:
    """Order-stable sha256 over dataclass configs; 32 raw bytes."""
    payload = []
    for cfg in cfgs:
        d = dataclasses.asdict(cfg) if dataclasses.is_dataclass(cfg) else dict(cfg)
        payload.append({k: v for k, v in sorted(d.items())})
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).digest()
