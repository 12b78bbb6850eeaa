"""Run configuration: dataclasses, `key = value` file parsing, config hashing.

Config files are UTF-8 lines of `key = value` with `#` comments; unknown
keys are rejected so typos fail loudly.  The model-shape subset hashes
into checkpoints to catch evaluate-time mismatches.
"""

import dataclasses
import hashlib
from dataclasses import dataclass

import numpy as np

from .scm import DiscreteSCM

BACKBONE_CHANNELS = (8, 16, 32)

K_MIN = 4
K_MAX = 512


class ConfigError(ValueError):
    """Malformed config file or out-of-range field value."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture-determining fields; hashed into every checkpoint."""

    k: int = 128
    size: int = 64
    channels: tuple = BACKBONE_CHANNELS
    use_gsm: bool = True
    use_cibm: bool = True

    def canonical(self) -> str:
        ch = ",".join(str(c) for c in self.channels)
        return (f"k={self.k};size={self.size};channels={ch};"
                f"gsm={int(self.use_gsm)};cibm={int(self.use_cibm)}")

    def config_hash(self) -> bytes:
        return hashlib.sha256(self.canonical().encode()).digest()


@dataclass
class TrainConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.01
    batch: int = 8
    epochs: int = 100
    k: int = 128
    band_width: int = 2
    seed: int = 0
    split_fraction: float = 0.7
    schedule: str = "cosine"
    size: int = 64
    data: str = "synthetic"
    n_samples: int = 256
    augment: bool = True
    use_gsm: bool = True
    use_cibm: bool = True
    detach_uncertainty: bool = False
    stochastic_eval: bool = False

    def validate(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch < 1 or self.epochs < 1:
            raise ConfigError("batch and epochs must be >= 1")
        if not K_MIN <= self.k <= K_MAX:
            raise ConfigError(f"k must be in [{K_MIN}, {K_MAX}], got {self.k}")
        if self.band_width < 1:
            raise ConfigError(f"band_width must be >= 1, got {self.band_width}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError(f"split_fraction must be in (0, 1), got {self.split_fraction}")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"schedule must be cosine or constant, got {self.schedule!r}")
        if self.size % 8 or self.size < 8:
            raise ConfigError(f"size must be a positive multiple of 8, got {self.size}")
        if self.n_samples < 2:
            raise ConfigError(f"n_samples must be >= 2, got {self.n_samples}")
        return self

    def model_config(self) -> ModelConfig:
        return ModelConfig(k=self.k, size=self.size, use_gsm=self.use_gsm,
                           use_cibm=self.use_cibm)


def _coerce_field(name: str, kind, raw: str):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def parse_config_lines(lines) -> dict:
    """`key = value` pairs with `#` comments; duplicate keys keep the last."""
    pairs = {}
    for lineno, line in enumerate(lines, start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {line.rstrip()!r}")
        key, _, value = stripped.partition("=")
        pairs[key.strip()] = value.strip()
    return pairs


def load_train_config(path, overrides=None) -> TrainConfig:
    fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    types = {"lr": float, "momentum": float, "weight_decay": float, "batch": int,
             "epochs": int, "k": int, "band_width": int, "seed": int,
             "split_fraction": float, "schedule": str, "size": int, "data": str,
             "n_samples": int, "augment": bool, "use_gsm": bool, "use_cibm": bool,
             "detach_uncertainty": bool, "stochastic_eval": bool}
    values = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            pairs = parse_config_lines(fh)
        unknown = sorted(set(pairs) - set(fields))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values = {k: _coerce_field(k, types[k], v) for k, v in pairs.items()}
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values).validate()


def load_scm_config(path) -> DiscreteSCM:
    """Discrete causal model from `key = value` rows of probabilities.

    Keys: `c` for P(C); `x_given_c<j>` rows; `y_given_x<i>_c<j>` rows.
    """
    with open(path, encoding="utf-8") as fh:
        pairs = parse_config_lines(fh)

    def row(key):
        try:
            return [float(tok) for tok in pairs[key].split()]
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None

    if "c" not in pairs:
        raise ConfigError("scm config needs a `c` row for P(C)")
    p_c = row("c")
    n_c = len(p_c)
    x_rows = [k for k in pairs if k.startswith("x_given_c")]
    y_rows = [k for k in pairs if k.startswith("y_given_x")]
    unknown = sorted(set(pairs) - {"c"} - set(x_rows) - set(y_rows))
    if unknown:
        raise ConfigError(f"unknown scm config keys: {', '.join(unknown)}")
    if len(x_rows) != n_c:
        raise ConfigError(f"need one x_given_c<j> row per C value (0..{n_c - 1})")
    p_x = [row(f"x_given_c{j}") for j in range(n_c)]
    n_x = len(p_x[0])
    p_y = [[row(f"y_given_x{i}_c{j}") for j in range(n_c)] for i in range(n_x)]
    if len(y_rows) != n_x * n_c:
        raise ConfigError("need one y_given_x<i>_c<j> row per (x, c) pair")
    return DiscreteSCM(np.array(p_c), np.array(p_x), np.array(p_y))
