"""Flat ``key = value`` configuration text.

One key per line, ``#`` comments and blank lines ignored.  Unknown keys are
errors rather than warnings: a silently ignored typo in a hyperparameter
name would invalidate an experiment.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError

__all__ = ["parse_kv_text", "load_kv_file", "format_kv"]


def parse_kv_text(text: str, allowed_keys: tuple[str, ...] | None = None
                  ) -> dict[str, str]:
    """Parse config text into a string map, validating key names."""
    out: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {line_no}: empty key")
        if key in out:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        if allowed_keys is not None and key not in allowed_keys:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def load_kv_file(path: str | Path, allowed_keys: tuple[str, ...] | None = None
                 ) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_kv_text(path.read_text(), allowed_keys)


def format_kv(pairs: dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs.items())
