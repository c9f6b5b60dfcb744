"""Experiment configuration and its flat key/value file format.

Config files are INI documents with ``[experiment]``, ``[gen]`` and
``[train]`` sections. Every key mirrors a dataclass field; tuples are
comma-separated. Missing keys keep their defaults.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..nn.train import TrainConfig
from ..synthgen import GenConfig

REGIMES = ("with_eeg", "random_eeg", "no_eeg")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    n_shuffles: int = 20
    test_fraction: float = 0.2
    regimes: tuple = REGIMES
    amplitude_mode: str = "peak"
    classifier_epochs: int = 30
    n_jobs: int = 1
    output_dir: Optional[str] = None

    def __post_init__(self):
        self.regimes = tuple(self.regimes)
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in (0, 1)")
        if self.n_shuffles < 1:
            raise ConfigError("n_shuffles must be at least 1")
        unknown = set(self.regimes) - set(REGIMES)
        if unknown or not self.regimes:
            raise ConfigError(f"regimes must be a nonempty subset of {REGIMES}, got {self.regimes}")
        if self.amplitude_mode not in ("peak", "mean"):
            raise ConfigError("amplitude_mode must be 'peak' or 'mean'")


def _parse(raw: str, default, name: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if default and isinstance(default[0], float):
                return tuple(float(x) for x in items)
            return tuple(items)
        if default is None:
            return None if raw.lower() in ("", "none") else raw
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name!r}: {raw!r}") from exc


def _fill(cls, section: Optional[configparser.SectionProxy], prefix: str, **extra):
    kwargs = dict(extra)
    defaults = {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)
                if f.name not in extra}
    if section is not None:
        for key, raw in section.items():
            if key not in defaults:
                raise ConfigError(f"unknown key {prefix}.{key}")
            kwargs[key] = _parse(raw, defaults[key], f"{prefix}.{key}")
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{prefix}] {exc}") from exc


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    extra = set(cp.sections()) - {"experiment", "gen", "train"}
    if extra:
        raise ConfigError(f"unknown section(s): {sorted(extra)}")
    gen = _fill(GenConfig, cp["gen"] if cp.has_section("gen") else None, "gen")
    train = _fill(TrainConfig, cp["train"] if cp.has_section("train") else None, "train")
    exp = cp["experiment"] if cp.has_section("experiment") else None
    return _fill(ExperimentConfig, exp, "experiment", gen=gen, train=train)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return "none" if value is None else str(value)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = ["[experiment]"]
    for f in dataclasses.fields(cfg):
        if f.name not in ("gen", "train"):
            lines.append(f"{f.name} = {_fmt(getattr(cfg, f.name))}")
    for name in ("gen", "train"):
        lines.append(f"\n[{name}]")
        sub = getattr(cfg, name)
        lines.extend(f"{f.name} = {_fmt(getattr(sub, f.name))}" for f in dataclasses.fields(sub))
    return "\n".join(lines) + "\n"


def config_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)
