"""Flat ``key = value`` config files for :class:`~gcae.train.TrainConfig`.

Blank lines and ``#`` comments are ignored. ``widths`` takes a comma-separated
list. Every problem in the file is collected before :class:`ConfigError` is
raised, so one run reports all unknown keys and bad values together.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

from .train import TrainConfig

_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("config errors:\n  " + "\n  ".join(problems))


def schema() -> dict[str, str]:
    """Key -> type name, in declaration order."""
    out = {}
    for f in dataclasses.fields(TrainConfig):
        default = f.default
        if isinstance(default, bool):
            out[f.name] = "bool"
        elif isinstance(default, int):
            out[f.name] = "int"
        elif isinstance(default, float):
            out[f.name] = "float"
        else:
            out[f.name] = "int-list"
    return out


def _convert(kind: str, raw: str):
    if kind == "bool":
        if raw.lower() not in _BOOL:
            raise ValueError(f"expected true/false, got {raw!r}")
        return _BOOL[raw.lower()]
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return tuple(int(part) for part in raw.split(",") if part.strip())


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    types = schema()
    values, problems = {}, []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected key = value, got {line!r}")
            continue
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in values:
            problems.append(f"line {lineno}: duplicate key {key!r}")
            continue
        try:
            values[key] = _convert(types[key], raw)
        except ValueError as exc:
            problems.append(f"line {lineno}: bad value for {key} ({types[key]}): {exc}")
    if problems:
        raise ConfigError(problems)
    try:
        return dataclasses.replace(base or TrainConfig(), **values)
    except ValueError as exc:
        raise ConfigError([str(exc)]) from exc


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), base)


def dump_config(config: TrainConfig) -> str:
    lines = []
    for key, value in config.to_json().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
