"""``key = value`` config files mapped onto dataclasses."""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any, Type, TypeVar, Union, get_type_hints

T = TypeVar("T")


class ConfigError(ValueError):
    pass


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _convert(value: str, typ: Any, key: str) -> Any:
    try:
        if typ is bool:
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)
        if typ is str:
            return value
        if typ in (tuple, list) or getattr(typ, "__origin__", None) in (tuple, list):
            items = [v for v in value.replace(",", " ").split() if v]
            return tuple(float(v) if "." in v or "e" in v.lower() else int(v) for v in items)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value


def load_into(cls: Type[T], values: dict[str, str], source: str = "<config>", **overrides) -> T:
    """Build ``cls`` from string values; unknown keys are rejected."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    hints = get_type_hints(cls)
    kwargs = {}
    for key, value in values.items():
        if key not in fields:
            raise ConfigError(f"{source}: unknown key {key!r} (known: {', '.join(sorted(fields))})")
        kwargs[key] = _convert(value, hints.get(key, str), key)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def read_config(path: Union[str, Path]) -> dict[str, str]:
    path = Path(path)
    return parse_kv(path.read_text(), str(path))
