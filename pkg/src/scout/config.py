"""Run configuration: INI-style ``key = value`` text grouped under section headers.

Every key belongs to exactly one section; unknown sections or keys are
rejected, and values are coerced to the field's type.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .data import SyntheticTaskSpec
from .decoder import FUSION_MODES, STREAMS
from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


def _field(section: str, default: Any, **kw):
    return dataclasses.field(default=default, metadata={"section": section, **kw})


@dataclass(frozen=True)
class RunConfig:
    seed: int = _field("run", 0)
    # data
    num_cases: int = _field("data", 100)
    train_frac: float = _field("data", 0.8)
    val_frac: float = _field("data", 0.1)
    num_diagnoses: int = _field("data", 8)
    d_p: int = _field("data", 32)
    d_s: int = _field("data", 16)
    d_c: int = _field("data", 16)
    num_patches: int = _field("data", 16)
    num_concepts: int = _field("data", 4)
    noise_sigma: float = _field("data", 0.1)
    concept_informativeness: bool = _field("data", True)
    world_seed: int = _field("data", 0)
    # model
    d_model: int = _field("model", 32)
    heads: int = _field("model", 4)
    d_ff: int = _field("model", 64)
    enc_depth: int = _field("model", 2)
    dec_depth: int = _field("model", 2)
    dropout: float = _field("model", 0.1)
    fusion_mode: str = _field("model", "film_gated")
    film_alpha: float = _field("model", 0.1)
    pam_window: int = _field("model", 3)
    tau_init: float = _field("model", 1.0)
    tau_min: float = _field("model", 0.1)
    force_gate: str = _field("model", "none")
    # train
    epochs: int = _field("train", 200)
    batch_size: int = _field("train", 8)
    lr_max: float = _field("train", 3e-3)
    lr_min: float = _field("train", 1e-5)
    t0: float = _field("train", 50.0)
    t_mult: float = _field("train", 2.0)
    weight_decay: float = _field("train", 0.01)
    lambda_g: float = _field("train", 0.01)
    grad_clip: float = _field("train", 1.0)
    # eval
    beam_size: int = _field("eval", 3)
    max_len: int = _field("eval", 32)
    length_alpha: float = _field("eval", 0.7)
    split: str = _field("eval", "test")
    # ablation
    ablate_seeds: str = _field("ablate", "0 1 2")
    ablate_modes: str = _field("ablate", " ".join(FUSION_MODES))
    # paths
    corpus: str = _field("paths", "corpus")

    def __post_init__(self):
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {', '.join(FUSION_MODES)}")
        if self.force_gate not in ("none",) + STREAMS:
            raise ConfigError(f"force_gate must be none or one of {', '.join(STREAMS)}")
        if self.num_cases < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("num_cases and batch_size must be positive, epochs >= 0")
        if not (0 <= self.train_frac and 0 <= self.val_frac and self.train_frac + self.val_frac <= 1):
            raise ConfigError("train_frac + val_frac must lie in [0, 1]")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.beam_size < 1 or self.max_len < 2:
            raise ConfigError("beam_size must be >= 1 and max_len >= 2")
        if self.split not in ("train", "val", "test"):
            raise ConfigError("split must be train, val or test")
        for mode in self.modes:
            if mode not in FUSION_MODES:
                raise ConfigError(f"unknown ablation mode {mode!r}")
        try:
            self.seeds
            self.task_spec
            self.train_config
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def seeds(self) -> list[int]:
        return [int(s) for s in self.ablate_seeds.replace(",", " ").split()]

    @property
    def modes(self) -> list[str]:
        return self.ablate_modes.replace(",", " ").split()

    @property
    def fractions(self) -> tuple[float, float, float]:
        return self.train_frac, self.val_frac, 1.0 - self.train_frac - self.val_frac

    @property
    def task_spec(self) -> SyntheticTaskSpec:
        return SyntheticTaskSpec(self.num_diagnoses, self.d_p, self.d_s, self.d_c,
                                 self.num_patches, self.num_concepts, self.noise_sigma,
                                 self.concept_informativeness, self.world_seed)

    def model_config(self, vocab_size: int, **overrides) -> ModelConfig:
        kw = dict(vocab_size=vocab_size, d_p=self.d_p, d_s=self.d_s, d_c=self.d_c,
                  d_model=self.d_model, heads=self.heads, d_ff=self.d_ff,
                  enc_depth=self.enc_depth, dec_depth=self.dec_depth, dropout=self.dropout,
                  fusion_mode=self.fusion_mode, film_alpha=self.film_alpha,
                  pam_window=self.pam_window, tau_init=self.tau_init, tau_min=self.tau_min,
                  force_gate=None if self.force_gate == "none" else self.force_gate)
        kw.update(overrides)
        return ModelConfig(**kw)

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.lr_max, self.lr_min, self.t0,
                           self.t_mult, self.weight_decay, self.lambda_g,
                           self.grad_clip if self.grad_clip > 0 else None, self.seed)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        sections: dict[str, list[str]] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = str(value).lower()
            elif isinstance(value, float):
                value = repr(value)
            sections.setdefault(f.metadata["section"], []).append(f"{f.name} = {value}")
        return "\n".join(f"[{name}]\n" + "\n".join(lines) + "\n" for name, lines in sections.items())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


_TYPES = {f.name: f for f in fields(RunConfig)}
SECTIONS = sorted({f.metadata["section"] for f in fields(RunConfig)})


def _coerce(name: str, raw: str):
    kind = _TYPES[name].type
    try:
        if kind == "bool":
            lowered = raw.strip().lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}") from exc


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _TYPES:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            if _TYPES[key].metadata["section"] != section:
                raise ConfigError(f"key {key!r} belongs in [{_TYPES[key].metadata['section']}]")
            values[key] = _coerce(key, raw)
    return RunConfig(**values)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
