"""Plain ``key = value`` experiment configs.  Command-line flags override file values."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from gesturelift.errors import ParseError


def parse_value(text: str):
    """JSON scalars and lists where possible, bare strings otherwise."""
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ParseError(f"line {n}: expected 'key = value', got {raw!r}")
        out[key.replace("-", "_")] = parse_value(value)
    return out


def load_config(path) -> dict:
    return parse_config(Path(path).read_text())


def parse_overrides(items) -> dict:
    """``["train_steps=200", ...]`` to a dict of hyperparameter overrides."""
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ParseError(f"override must look like key=value, got {item!r}")
        out[key.strip()] = parse_value(value)
    return out


def merge(file_values: dict, flags: dict) -> dict:
    """Flags that were given (not ``None``) win over file values."""
    merged = dict(file_values)
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
