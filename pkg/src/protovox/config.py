"""Flat `key = value` config files, coerced onto dataclass fields.

One assignment per line, `#` starts a comment, blank lines ignored. Values
are coerced to the target dataclass field's annotated type; any violation
is reported with the offending key so a user can fix the file directly.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path

from .errors import ConfigurationError, ParseError


def parse_config_text(text: str, source: str = "<string>") -> dict[str, str]:
    """Parse flat key = value lines into a raw string mapping."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ParseError(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise ParseError(f"{source}:{lineno}: empty key")
        if key in raw:
            raise ParseError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


def load_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), source=str(path))


def _coerce_value(key: str, value: str, target: type):
    origin = typing.get_origin(target)
    if origin is not None and origin is not tuple:
        # X | None style annotations: coerce against the non-None member.
        members = [a for a in typing.get_args(target) if a is not type(None)]
        if len(members) == 1:
            return _coerce_value(key, value, members[0])
        raise ConfigurationError(f"{key}: unsupported field type {target!r}")
    if origin is tuple:
        args = typing.get_args(target)
        parts = [p for p in value.replace(",", " ").split() if p]
        if len(args) == 2 and args[1] is Ellipsis:
            elems = [args[0]] * len(parts)
        else:
            if len(parts) != len(args):
                raise ConfigurationError(
                    f"{key}: expected {len(args)} values, got {len(parts)}"
                )
            elems = list(args)
        return tuple(
            _coerce_value(key, part, elem) for part, elem in zip(parts, elems)
        )
    if target is bool:
        lowered = value.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ConfigurationError(f"{key}: expected a boolean, got {value!r}")
    if target is int:
        try:
            return int(value)
        except ValueError:
            raise ConfigurationError(f"{key}: expected an integer, got {value!r}") from None
    if target is float:
        try:
            return float(value)
        except ValueError:
            raise ConfigurationError(f"{key}: expected a number, got {value!r}") from None
    if target is str:
        return value
    raise ConfigurationError(f"{key}: unsupported field type {target!r}")


def apply_config(raw: dict[str, str], cls: type, base=None):
    """Build a dataclass instance from raw strings, starting from `base`.

    Unknown keys and uncoercible values raise a configuration error naming
    the field. Keys absent from `raw` keep the base (or default) value.
    """
    if not dataclasses.is_dataclass(cls):
        raise ConfigurationError(f"{cls!r} is not a dataclass")
    hints = typing.get_type_hints(cls)
    field_types = {f.name: hints[f.name] for f in dataclasses.fields(cls)}
    updates = {}
    for key, value in raw.items():
        if key not in field_types:
            known = ", ".join(sorted(field_types))
            raise ConfigurationError(f"unknown config key {key!r} (known: {known})")
        updates[key] = _coerce_value(key, value, field_types[key])
    if base is None:
        try:
            return cls(**updates)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None
    return dataclasses.replace(base, **updates)


def format_config(obj) -> str:
    """Render a dataclass back to sorted `key = value` lines."""
    if not dataclasses.is_dataclass(obj):
        raise ConfigurationError(f"{obj!r} is not a dataclass")
    lines = []
    for f in sorted(dataclasses.fields(obj), key=lambda f: f.name):
        lines.append(f"{f.name} = {getattr(obj, f.name)}")
    return "\n".join(lines) + "\n"
