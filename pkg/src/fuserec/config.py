"""Flat key=value run configuration.

Precedence: built-in defaults < config file (--config) < command-line
flags. Every command materializes the full configuration and echoes it to
<out>/config.txt, which is itself a loadable config file, so any run can be
reproduced from its echo.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .synth import SyntheticSpec
from .training import TrainConfig


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    threads: int = 1
    interactions: str = ""
    embeddings: str = ""
    checkpoint: str = ""
    split: str = "test"
    target_domain: str = "X"
    holdout_fraction: float = 0.2
    min_count: int = 10
    min_per_domain: int = 3
    id_dim: int = 256
    alpha: float = 0.7
    lambda1: float = 0.1
    lambda2: float = 0.4
    temperature: float = 1.0
    dropout: float = 0.3
    max_len: int = 50
    learn_scale: bool = False
    batch_size: int = 256
    lr: float = 1e-3
    l2: float = 1e-4
    epochs: int = 100
    clip_norm: float = 5.0
    log_timing: bool = False
    synth_users: int = 100
    synth_items: int = 50
    synth_clusters: int = 8
    synth_signal: float = 0.5
    synth_len_min: int = 8
    synth_len_max: int = 16
    synth_dim: int = 32
    synth_noise: float = 0.1
    synth_markov: str = "sparse"
    synth_text: bool = False

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(
            id_dim=self.id_dim, img_dim=self.synth_dim, alpha=self.alpha,
            lambda1=self.lambda1, lambda2=self.lambda2, batch_size=self.batch_size,
            dropout=self.dropout, l2=self.l2, lr=self.lr, epochs=self.epochs,
            max_len=self.max_len, seed=self.seed, temperature=self.temperature,
            clip_norm=self.clip_norm, learn_scale=self.learn_scale,
            target_domain=self.target_domain, log_timing=self.log_timing)

    def to_synth_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            num_users=self.synth_users, items_per_domain=self.synth_items,
            clusters=self.synth_clusters, signal=self.synth_signal,
            len_min=self.synth_len_min, len_max=self.synth_len_max,
            seed=self.seed, img_dim=self.synth_dim, noise=self.synth_noise,
            markov=self.synth_markov)

    def echo(self, path: str | Path) -> None:
        lines = [f"{f.name}={_format(getattr(self, f.name))}"
                 for f in sorted(fields(self), key=lambda f: f.name)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def _parse_value(name: str, text: str, target_type: type):
    try:
        if target_type is bool:
            low = text.strip().lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(text)
        return target_type(text.strip())
    except ValueError:
        raise ConfigError(f"bad value {text!r} for config key {name!r}") from None


def load_config_file(path: str | Path) -> dict[str, object]:
    """Parse a key=value config file into typed overrides."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    types = {f.name: f.type for f in fields(RunConfig)}
    concrete = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)}
    out: dict[str, object] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in types:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = _parse_value(key, value, concrete[key])
    return out


def resolve(config_path: str | None, flag_overrides: dict[str, object]) -> RunConfig:
    """Apply file values then flag overrides on top of the defaults.

    The returned config records which keys were explicitly set (file or
    flag) in ``explicit_keys``, so commands can tell an override apart from
    a default (e.g. eval only replaces checkpoint fusion weights when
    asked).
    """
    values: dict[str, object] = {}
    if config_path:
        values.update(load_config_file(config_path))
    values.update({k: v for k, v in flag_overrides.items() if v is not None})
    try:
        cfg = RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    cfg.explicit_keys = frozenset(values)
    return cfg
