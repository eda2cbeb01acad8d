"""Experiment configuration from INI files with dotted section names.

Example::

    [phantom]
    noise_sigma = 1.4
    seed = 7

    [train]
    max_epochs = 20

    [baseline.stnlm]
    h_factor = 1.0

    [experiment]
    methods = conventional, ap, stnlm, ha2ha
    dc_sweep = 0.8, 0.4, 0.2, 0.1

Unknown sections or keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

from .baselines import StNlmConfig
from .denoiser import TrainConfig, UNetConfig
from .phantom import DC_SWEEP_ANGLES, PhantomSpec, derive_seed
from .pipeline import SvdFilterConfig

METHODS = ("conventional", "ap", "stnlm", "ha2ha")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    """DC sweep acquisition: its own angle set and noise level so the lowest
    duty cycle still gives a defined CNR."""

    duty_cycles: tuple = (0.8, 0.4, 0.2, 0.1)
    angles: tuple = DC_SWEEP_ANGLES
    noise_sigma: float = 1.5
    seed: int = 11

    def __post_init__(self):
        if not self.duty_cycles:
            raise ValueError("DC sweep list is empty")
        if any(not 0 < d <= 1 for d in self.duty_cycles):
            raise ValueError("DC values must lie in (0, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    phantom: PhantomSpec = field(default_factory=lambda: PhantomSpec(seed=7))
    svd: SvdFilterConfig = field(default_factory=lambda: SvdFilterConfig(k_low=1))
    interp: int = 1
    unet: UNetConfig = field(default_factory=UNetConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(lr=1e-3, batch_size=8, max_epochs=25, plateau_patience=5))
    stnlm: StNlmConfig = field(default_factory=StNlmConfig.default_windows)
    sweep: Optional[SweepConfig] = field(default_factory=SweepConfig)
    methods: tuple = METHODS
    train_seeds: tuple = (101, 102)
    frame_subsample: int = 4
    dynamic_range_db: float = 40.0
    output_dir: str = "ha2ha_out"
    seed: int = 0

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValueError(f"unknown or empty methods {bad}; choose from {METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("duplicate methods")
        if self.interp < 1:
            raise ValueError("interp must be >= 1")
        if "ha2ha" in self.methods and not self.train_seeds:
            raise ValueError("ha2ha needs at least one training phantom seed")
        if self.frame_subsample < 1:
            raise ValueError("frame_subsample must be >= 1")
        if self.dynamic_range_db <= 0:
            raise ValueError("dynamic range must be positive")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Re-key every stochastic component from one seed; each stream gets
        its own derived seed so nearby master seeds never share phantoms."""
        return replace(
            self,
            seed=seed,
            phantom=replace(self.phantom, seed=derive_seed(seed, 0)),
            train=replace(self.train, seed=seed),
            train_seeds=tuple(derive_seed(seed, 100 + i) for i in range(len(self.train_seeds))),
            sweep=None if self.sweep is None else replace(self.sweep, seed=derive_seed(seed, 1)),
        )


# section name -> (attribute on ExperimentConfig, dataclass) ; "" is the top level
_SECTIONS = {
    "phantom": "phantom",
    "svd": "svd",
    "unet": "unet",
    "train": "train",
    "baseline.stnlm": "stnlm",
    "experiment.sweep": "sweep",
    "experiment": "",
}


def _parse_value(text: str, default: Any, name: str):
    text = text.strip()
    if text.lower() in ("none", "") and (default is None or name in _OPTIONAL):
        return None
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int) and not isinstance(default, bool):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [s.strip() for s in text.split(",") if s.strip()]
            if default and all(isinstance(v, str) for v in default):
                return tuple(items)
            if default and all(isinstance(v, int) for v in default):
                return tuple(int(s) for s in items)
            return tuple(float(s) for s in items)
        if isinstance(default, str):
            return text
        if default is None:
            return _guess(text)
    except ValueError:
        raise ConfigError(f"bad value for {name!r}: {text!r}") from None
    raise ConfigError(f"option {name!r} cannot be set from a config file")


# options whose default is not None but accept "none"
_OPTIONAL = {"k_high", "h", "stride", "pitch"}


def _guess(text: str):
    if "," in text:
        return tuple(float(s) for s in text.split(",") if s.strip())
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def _update(obj, items: dict, section: str):
    known = {f.name: f for f in dataclasses.fields(obj)}
    changes = {}
    for key, text in items.items():
        if key not in known:
            raise ConfigError(f"unknown option {key!r} in section [{section}]")
        if key == "vessels":
            raise ConfigError("vessel geometry is not configurable from INI files")
        changes[key] = _parse_value(text, getattr(obj, key), key)
    try:
        return replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def parse_config(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    cfg = base or ExperimentConfig()
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
    top = {}
    for section, attr in _SECTIONS.items():
        if not cp.has_section(section):
            continue
        items = dict(cp.items(section))
        if attr == "":
            top = items
            continue
        sub = getattr(cfg, attr)
        if sub is None and attr == "sweep":
            sub = SweepConfig()
        cfg = replace(cfg, **{attr: _update(sub, items, section)})
    if top:
        if "sweep" in top:
            raise ConfigError("configure the sweep in [experiment.sweep]")
        if "dc_sweep" in top:
            text = top.pop("dc_sweep").strip()
            if text.lower() in ("none", "off", ""):
                cfg = replace(cfg, sweep=None)
            else:
                base_sweep = cfg.sweep or SweepConfig()
                cfg = replace(cfg, sweep=_update(base_sweep, {"duty_cycles": text}, "experiment"))
        cfg = _update(cfg, top, "experiment")
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    """INI text that ``parse_config`` maps back to ``cfg``."""
    out = []
    for section, attr in _SECTIONS.items():
        obj = cfg if attr == "" else getattr(cfg, attr)
        if obj is None:
            continue
        out.append(f"[{section}]")
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if attr == "" and f.name in _SECTIONS.values():
                continue
            if f.name == "vessels":
                continue
            if attr == "" and f.name == "sweep":
                continue
            out.append(f"{f.name} = {_format_value(v)}")
        out.append("")
    if cfg.sweep is None:
        out.insert(out.index("[experiment]") + 1, "dc_sweep = none")
    return "\n".join(out)
