"""Flat ``key = value`` run configuration shared by every CLI command.

Values are layered: built-in defaults, then the config file, then
``ADVRE_<KEY>`` environment variables, then explicit command-line flags.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .adversarial import AdvConfig
from .corpus import SyntheticConfig
from .encoders import EncoderConfig
from .errors import ConfigError
from .trainer import TrainConfig

ENV_PREFIX = "ADVRE_"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0

    # synthetic data
    n_relations: int = 8
    n_entity_pairs: int = 2000
    min_sentences: int = 1
    max_sentences: int = 4
    templates_per_relation: int = 4
    noise_rate: float = 0.3
    vocab_size: int = 3000
    na_fraction: float = 0.3
    test_fraction: float = 0.2
    template_len: int = 2
    n_entities: int = 600
    max_filler: int = 4

    # encoder
    arch: str = "PCNN"
    k_w: int = 50
    k_p: Optional[int] = None
    k_h: Optional[int] = None
    m: int = 3
    dropout_p: float = 0.5
    max_len: int = 120

    # adversarial game
    alpha: float = 1.0
    lam: float = 1.0
    batch_conf: int = 64
    batch_unconf: int = 64

    # training
    alpha_d: float = 0.1
    alpha_s: float = 0.01
    epochs: int = 100
    pretrain_epochs: int = 50
    pretrain_lr: float = 0.1
    pretrain_batch: int = 64
    promotion_period: int = 10
    tau_d: float = 0.5
    promote_quantile: float = 0.5
    q: float = 0.3
    clip_norm: Optional[float] = None

    # evaluation
    aggregate: str = "max"
    p_at_n: str = "20,50,100"
    few_modes: str = "ONE,TWO,ALL"
    inspect_relation: int = 1
    inspect_k: int = 5

    def __post_init__(self):
        # build every sub-config once so bad values fail at load time
        self.synthetic()
        self.encoder()
        self.adversarial()
        self.training()
        if self.aggregate not in ("max", "mean"):
            raise ConfigError(f"aggregate must be max or mean, got {self.aggregate!r}")
        if not self.ns or any(n < 1 for n in self.ns):
            raise ConfigError(f"p_at_n must list positive integers, got {self.p_at_n!r}")
        if self.inspect_k < 0:
            raise ConfigError("inspect_k must be >= 0")

    @property
    def ns(self):
        try:
            return tuple(int(v) for v in self.p_at_n.split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"p_at_n must be comma-separated integers, got {self.p_at_n!r}") from None

    @property
    def modes(self):
        return tuple(v.strip().upper() for v in self.few_modes.split(",") if v.strip())

    def _pick(self, cls, **extra):
        names = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in dataclasses.asdict(self).items() if k in names}
        kwargs.update(extra)
        return cls(**kwargs)

    def synthetic(self) -> SyntheticConfig:
        return self._pick(SyntheticConfig)

    def encoder(self) -> EncoderConfig:
        return self._pick(EncoderConfig)

    def adversarial(self) -> AdvConfig:
        return self._pick(AdvConfig)

    def training(self) -> TrainConfig:
        return self._pick(TrainConfig)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = ["# effective run configuration"]
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'none' if v is None else v}")
        return "\n".join(lines) + "\n"


def _convert(name, raw: str, default):
    kind = type(default)
    text = raw.strip()
    if default is None or name in ("k_p", "k_h", "clip_norm"):
        if text.lower() in ("", "none", "null"):
            return None
        kind = float if name == "clip_norm" else int
    try:
        if kind is bool:
            return text.lower() in ("1", "true", "yes", "on")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from None
    return text


def parse_text(text: str, source: str = "config") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    defaults = {f.name: f.default for f in fields(RunConfig)}
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = _convert(key, value, defaults[key])
    return out


def from_env(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    defaults = {f.name: f.default for f in fields(RunConfig)}
    out = {}
    for key, default in defaults.items():
        raw = environ.get(ENV_PREFIX + key.upper())
        if raw is not None:
            out[key] = _convert(key, raw, default)
    return out


def load_config(path=None, environ=None, **overrides) -> RunConfig:
    values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        values.update(parse_text(p.read_text(encoding="utf-8"), str(p)))
    values.update(from_env(environ))
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
