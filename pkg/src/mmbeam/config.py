"""Run settings as a flat ``dotted.key = value`` text format.

Every field of the nested settings dataclasses is addressable by its dotted
path, e.g. ``scenario.kind = V2V`` or ``model.visual.head_channels = 64``.
Values are parsed against the type of the current default:

    bool            true / false
    int, float      Python literals
    str             raw text
    tuple           comma-separated items, e.g. ``1,5,9,13``
    tuple of tuple  semicolon-separated groups, e.g. ``-40,12; 40,12``

Lines starting with ``#`` and blank lines are ignored.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

from .channel import ArrayConfig
from .dataio import PreprocessConfig
from .errors import ConfigError
from .evalkit import DEFAULT_TOPM
from .models import BeamModelConfig, TrainConfig
from .scenario import ScenarioSpec


@dataclass(frozen=True)
class EvalSettings:
    topm: tuple[int, ...] = tuple(DEFAULT_TOPM)
    split: str = "test"


@dataclass(frozen=True)
class RunSettings:
    """Everything a run depends on. ``seed`` feeds every random substream."""

    seed: int = 0
    n_beams: int = 64
    scenario: ScenarioSpec = field(default_factory=lambda: ScenarioSpec(n_samples=2000))
    array: ArrayConfig = field(default_factory=ArrayConfig)
    # desk scale: 224 px and 15k points would cost hours per epoch in numpy
    preprocess: PreprocessConfig = field(
        default_factory=lambda: PreprocessConfig(image_size=32, n_points=128, cloud_scale=0.05))
    model: BeamModelConfig = field(default_factory=BeamModelConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=10))
    eval: EvalSettings = field(default_factory=EvalSettings)

    def scenario_spec(self) -> ScenarioSpec:
        return replace(self.scenario, seed=self.seed)

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)

    def model_config(self) -> BeamModelConfig:
        return replace(self.model, n_beams=self.n_beams)


# filled from the top-level ``seed`` / ``n_beams`` so there is one source of truth
DERIVED_KEYS = frozenset({"scenario.seed", "train.seed", "model.n_beams"})


# --- flattening ------------------------------------------------------------

def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join(",".join(_format_value(x) for x in g) for g in v)
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def flatten(obj, prefix: str = "") -> dict[str, str]:
    """Dotted key -> formatted value for every leaf field, in declaration order."""
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(v):
            out.update(flatten(v, key + "."))
        elif key not in DERIVED_KEYS:
            out[key] = _format_value(v)
    return out


def _parse_scalar(text: str, like, key: str):
    text = text.strip()
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError(text)
            return low == "true"
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(like).__name__}") from None
    return text


def _parse_value(text: str, like, key: str):
    if not isinstance(like, tuple):
        return _parse_scalar(text, like, key)
    text = text.strip()
    if not text:
        return ()
    if like and isinstance(like[0], tuple):
        inner = like[0][0] if like[0] else 0.0
        return tuple(tuple(_parse_scalar(x, inner, key) for x in g.split(",")) for g in text.split(";"))
    item = like[0] if like else 0.0
    return tuple(_parse_scalar(x, item, key) for x in text.split(","))


def _set(obj, path: list[str], text: str, key: str):
    names = {f.name for f in dataclasses.fields(obj)}
    head = path[0]
    if head not in names:
        raise ConfigError(f"unknown config key {key!r}")
    current = getattr(obj, head)
    if len(path) == 1:
        if dataclasses.is_dataclass(current):
            raise ConfigError(f"{key!r} is a section, not a value")
        value = _parse_value(text, current, key)
    else:
        if not dataclasses.is_dataclass(current):
            raise ConfigError(f"unknown config key {key!r}")
        value = _set(current, path[1:], text, key)
    try:
        return replace(obj, **{head: value})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key} = {text.strip()}: {exc}") from exc


def apply_overrides(settings: RunSettings, pairs) -> RunSettings:
    """Apply ``(key, value_text)`` pairs in order."""
    for key, text in pairs:
        if key.strip() in DERIVED_KEYS:
            raise ConfigError(f"{key.strip()} follows the top-level {key.strip().rsplit('.', 1)[1]}; set that instead")
        settings = _set(settings, key.strip().split("."), text, key.strip())
    return settings


def parse_assignment(line: str) -> tuple[str, str]:
    if "=" not in line:
        raise ConfigError(f"expected key=value, got {line!r}")
    key, _, value = line.partition("=")
    if not key.strip():
        raise ConfigError(f"empty key in {line!r}")
    return key.strip(), value.strip()


def parse_config_text(text: str) -> list[tuple[str, str]]:
    pairs = []
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            pairs.append(parse_assignment(line))
        except ConfigError as exc:
            raise ConfigError(f"line {n}: {exc}") from None
    return pairs


def load_settings(path=None, overrides=()) -> RunSettings:
    settings = RunSettings()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        settings = apply_overrides(settings, parse_config_text(text))
    return apply_overrides(settings, [parse_assignment(o) for o in overrides])


def format_config(settings: RunSettings) -> str:
    return "".join(f"{k} = {v}\n" for k, v in flatten(settings).items())


def settings_from_flat(flat: dict[str, str]) -> RunSettings:
    return apply_overrides(RunSettings(), flat.items())
