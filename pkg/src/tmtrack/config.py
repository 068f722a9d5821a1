"""key=value config files and typed coercion onto dataclasses."""
from __future__ import annotations

import dataclasses
import os
import typing
from typing import Any, Dict, Mapping

ENV_PREFIX = "TM_"


class ConfigError(ValueError):
    pass


def parse_kv_text(text: str, source: str = "<config>") -> Dict[str, str]:
    items = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        items[key] = value
    return items


def read_kv_file(path: str) -> Dict[str, str]:
    with open(path) as fh:
        return parse_kv_text(fh.read(), path)


def env_overrides(environ: Mapping[str, str] = os.environ) -> Dict[str, str]:
    """``TM_FOO_BAR=1`` becomes ``foo_bar=1``."""
    return {k[len(ENV_PREFIX):].lower(): v for k, v in environ.items() if k.startswith(ENV_PREFIX)}


def _coerce(value: Any, annotation, key: str):
    if not isinstance(value, str):
        return value
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin is typing.Union:
        inner = [a for a in args if a is not type(None)]
        if value.lower() in ("", "none"):
            return None
        return _coerce(value, inner[0], key)
    try:
        if annotation is bool:
            lowered = value.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if annotation is int:
            return int(value)
        if annotation is float:
            return float(value)
        if annotation is str:
            return value
        if origin is dict:
            key_type, value_type = args
            pairs = [p.split(":", 1) for p in value.split(",") if p.strip()]
            if any(len(p) != 2 for p in pairs):
                raise ValueError(value)
            return {_coerce(k.strip(), key_type, key): _coerce(v.strip(), value_type, key) for k, v in pairs}
        if origin in (tuple, list):
            parts = [p for p in value.replace(";", ",").split(",") if p.strip()]
            item = args[0] if args else str
            if item is Ellipsis or (len(args) == 2 and args[1] is Ellipsis):
                item = args[0]
            if typing.get_origin(item) is tuple:
                return tuple(tuple(int(x) for x in p.split(":")) for p in parts)
            return tuple(_coerce(p.strip(), item, key) for p in parts)
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {value!r}") from None
    raise ConfigError(f"cannot parse {key} of type {annotation}")


def build(cls, values: Mapping[str, Any], strict: bool = True):
    """Instantiate dataclass ``cls`` from string or typed values."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(values) - names)
    if strict and unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    kwargs = {k: _coerce(v, hints[k], k) for k, v in values.items() if k in names}
    return cls(**kwargs)


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(":".join(str(x) for x in v) if isinstance(v, (tuple, list)) else format_value(v)
                        for v in value)
    if isinstance(value, dict):
        return ",".join(f"{k}:{format_value(v)}" for k, v in value.items())
    if value is None:
        return "none"
    return str(value)


def dump(obj) -> str:
    return "".join(f"{f.name}={format_value(getattr(obj, f.name))}\n"
                   for f in dataclasses.fields(obj) if f.init)
