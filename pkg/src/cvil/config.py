"""Config-file helpers: unit-suffix normalization and config hashing.

Internally everything is SI. JSON configs may use `_kmh` / `_kph` and `_deg`
key suffixes; those fields are converted and renamed on load, so
`{"target_speed_kmh": 4.5}` becomes `{"target_speed": 1.25}`.
"""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path


def _convert_key(key: str, value):
    if key.endswith("_kmh") or key.endswith("_kph"):
        return key[:-4], value / 3.6
    if key.endswith("_deg"):
        return key[:-4], math.radians(value)
    return key, value


def normalize_units(obj):
    """Recursively convert unit-suffixed keys to SI."""
    if isinstance(obj, dict):
        out = {}
        for key, value in obj.items():
            value = normalize_units(value)
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                key, value = _convert_key(key, value)
            out[key] = value
        return out
    if isinstance(obj, list):
        return [normalize_units(v) for v in obj]
    return obj


def load_config(path: str | Path) -> dict:
    return normalize_units(json.loads(Path(path).read_text()))


def _strip_seeds(obj):
    if isinstance(obj, dict):
        return {k: _strip_seeds(v) for k, v in obj.items() if k != "seed"}
    if isinstance(obj, list):
        return [_strip_seeds(v) for v in obj]
    return obj


def config_hash(config: dict) -> str:
    """Short stable digest identifying a configuration (seed fields excluded,
    so repetitions of one trial plan share a hash)."""
    canonical = json.dumps(_strip_seeds(config), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def build_dataclass(cls, data: dict | None, **overrides):
    """Construct a dataclass from a config dict, ignoring unknown keys."""
    import dataclasses

    data = dict(data or {})
    data.update(overrides)
    names = {f.name for f in dataclasses.fields(cls)}
    return cls(**{k: v for k, v in data.items() if k in names})
