"""Flat run configuration read from and written to "key = value" files.

Keys live in sections named after the module they configure::

    [data-pipeline]
    windows_total = 31899
    [search-engine]
    epochs = 200

Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .data import PAPER_RATIOS
from .search import SearchConfig
from .space import StructureConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # cli
    seed: int = 0
    out: str = "runs"
    # data-pipeline
    windows_total: int = 31899
    window_length: int = 1000
    window_step: int = 50
    noise_sigma: float = 0.1
    train_ratio: float = PAPER_RATIOS[0]
    val_ratio: float = PAPER_RATIOS[1]
    test_ratio: float = PAPER_RATIOS[2]
    stratified: bool = True
    group_by_recording: bool = False
    # search-space
    num_blocks: int = 4
    layers_per_block: int = 2
    base_channels: int = 8
    num_classes: int = 6
    # controller
    controller_lr: float = 0.01
    controller_momentum: float = 0.9
    controller_hidden: int = 64
    grad_clip: float = 5.0
    baseline_decay: float = 0.95
    # search-engine
    epochs: int = 200
    controller_steps: int = 5
    archs_per_step: int = 20
    final_samples: int = 100
    batch_size: int = 128
    child_lr: float = 1e-3
    child_l2: float = 1e-4
    reward_batch_size: int = 128
    reward_full_val: bool = False
    fig6_sample_count: int = 50
    scratch_epochs: int = 50
    eval_batch_size: int = 256

    def __post_init__(self):
        self.validate()

    @property
    def ratios(self) -> tuple[float, float, float]:
        return (self.train_ratio, self.val_ratio, self.test_ratio)

    def validate(self) -> None:
        positive = ("windows_total", "window_length", "window_step", "num_blocks",
                    "layers_per_block", "base_channels", "num_classes", "controller_hidden",
                    "controller_steps", "archs_per_step", "final_samples", "batch_size",
                    "reward_batch_size", "fig6_sample_count", "eval_batch_size")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("epochs", "scratch_epochs", "noise_sigma", "child_lr", "child_l2",
                     "controller_lr", "grad_clip"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 <= self.controller_momentum < 1 or not 0 <= self.baseline_decay < 1:
            raise ConfigError("controller_momentum and baseline_decay must lie in [0, 1)")
        if any(r < 0 for r in self.ratios) or abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must be non-negative and sum to 1, got {self.ratios}")

    def structure(self) -> StructureConfig:
        return StructureConfig(num_blocks=self.num_blocks, layers_per_block=self.layers_per_block,
                               base_channels=self.base_channels, num_classes=self.num_classes,
                               input_length=self.window_length)

    def search(self) -> SearchConfig:
        names = {f.name for f in fields(SearchConfig)}
        return SearchConfig(**{k: v for k, v in asdict(self).items() if k in names})


SECTIONS = {
    "cli": ("seed", "out"),
    "data-pipeline": ("windows_total", "window_length", "window_step", "noise_sigma",
                      "train_ratio", "val_ratio", "test_ratio", "stratified",
                      "group_by_recording"),
    "search-space": ("num_blocks", "layers_per_block", "base_channels", "num_classes"),
    "controller": ("controller_lr", "controller_momentum", "controller_hidden", "grad_clip",
                   "baseline_decay"),
    "search-engine": ("epochs", "controller_steps", "archs_per_step", "final_samples",
                      "batch_size", "child_lr", "child_l2", "reward_batch_size",
                      "reward_full_val", "fig6_sample_count", "scratch_epochs",
                      "eval_batch_size"),
}
_TYPES = {f.name: f.type for f in fields(RunConfig)}
_SECTION_OF = {k: s for s, keys in SECTIONS.items() for k in keys}
assert set(_SECTION_OF) == set(_TYPES), "every RunConfig field needs a section"


def _convert(key: str, text: str):
    kind = _TYPES[key]
    try:
        if kind == "bool":
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text.strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"),
                                       interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    values = asdict(base or RunConfig())
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _TYPES:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            if _SECTION_OF[key] != section:
                raise ConfigError(f"key {key!r} belongs in [{_SECTION_OF[key]}], not [{section}]")
            values[key] = _convert(key, raw)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def format_config(config: RunConfig) -> str:
    values = asdict(config)
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {_format(values[k])}" for k in keys)
        lines.append("")
    return "\n".join(lines)


def write_config(path, config: RunConfig) -> None:
    Path(path).write_text(format_config(config))
