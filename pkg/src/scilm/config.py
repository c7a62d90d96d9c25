"""``key = value`` run-configuration files."""

from __future__ import annotations

import os
from dataclasses import fields
from pathlib import Path

from .data import SyntheticSpec
from .errors import ConfigurationError
from .model import ModelConfig

# keys accepted next to the ModelConfig fields
PATH_KEYS = ("data", "out")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(raw: str, kind, where: str):
    if kind is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigurationError(f"{where}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigurationError(f"{where}: expected {kind.__name__}, got {raw!r}") from None


def parse_kv(text: str, types: dict[str, type], source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigurationError(f"{where}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigurationError(f"{where}: unknown key {key!r}")
        out[key] = _convert(raw, types[key], where)
    return out


def _field_types(cls) -> dict[str, type]:
    defaults = cls()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(cls)}


def load_run_config(path: str | os.PathLike) -> tuple[ModelConfig, dict[str, str]]:
    """Read a run config; returns the model config and any path entries."""
    types = {**_field_types(ModelConfig), **{k: str for k in PATH_KEYS}}
    values = parse_kv(Path(path).read_text(), types, str(path))
    paths = {k: values.pop(k) for k in PATH_KEYS if k in values}
    config = ModelConfig(**values)
    if config.q and config.p:
        try:
            config.validate()
        except ConfigurationError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
    return config, paths


def load_synthetic_spec(path: str | os.PathLike) -> SyntheticSpec:
    values = parse_kv(Path(path).read_text(), _field_types(SyntheticSpec), str(path))
    spec = SyntheticSpec(**values)
    spec.validate()
    return spec
