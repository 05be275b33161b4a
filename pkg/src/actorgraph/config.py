"""INI run configuration.

One file, one section per stage::

    [scenario]   ScenarioSpec fields (ranges as "lo, hi"; vocabulary via pose/manipulation/interaction)
    [embedder]   EmbedderConfig fields
    [train]      TrainConfig fields
    [eval]       min_gt, iou_thresh
    [ablation]   variants (comma list)

Command-line ``--set section.key=value`` pairs override file values.
"""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path

SECTIONS = ("scenario", "embedder", "train", "eval", "ablation")


class ConfigError(ValueError):
    pass


def load_ini(path: str | Path | None, overrides: list[str] | None = None) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}".replace("\n", " ")) from exc
    out = {s: dict(cp[s]) if s in cp else {} for s in SECTIONS}
    unknown = [s for s in cp.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
    for item in overrides or []:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or section not in SECTIONS or not name:
            raise ConfigError(f"bad override {item!r}; expected section.key=value")
        out[section][name] = value.strip()
    return out


def _coerce(kind, text: str):
    if kind is bool:
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if kind is int:
        value = float(text)
        if value != int(value):
            raise ConfigError(f"not an integer: {text!r}")
        return int(value)
    return kind(text)


def dataclass_from_mapping(cls, raw: dict[str, str]):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(fields)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, text in raw.items():
        try:
            kwargs[key] = _coerce(type(fields[key].default), text)
        except ValueError as exc:
            raise ConfigError(f"{cls.__name__}.{key}: {exc}") from exc
    return cls(**kwargs)
