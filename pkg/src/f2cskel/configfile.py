"""Flat key-value config files.

Format: one ``key = value`` pair per line, ``#`` starts a comment, blank
lines ignored. Every file carries a ``schema`` key naming its kind and a
``schema_version`` integer so incompatible layouts fail loudly instead of
half-parsing.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

from .errors import ConfigError


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source} line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source} line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source} line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def load_config(path: str | Path, schema: str, version: int = 1) -> dict[str, str]:
    """Load and validate a config file against the expected schema name/version."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = parse_config_text(text, source=str(path))
    got_schema = cfg.get("schema")
    if got_schema != schema:
        raise ConfigError(f"{path}: schema {got_schema!r}, expected {schema!r}")
    got_version = cfg.get("schema_version")
    if got_version != str(version):
        raise ConfigError(f"{path}: schema_version {got_version!r}, expected {version}")
    return cfg


def get_int(cfg: dict[str, str], key: str, source: str = "<config>") -> int:
    try:
        return int(cfg[key])
    except KeyError:
        raise ConfigError(f"{source}: missing key {key!r}") from None
    except ValueError:
        raise ConfigError(f"{source}: key {key!r} is not an integer: {cfg[key]!r}") from None


def get_float(cfg: dict[str, str], key: str, source: str = "<config>") -> float:
    try:
        return float(cfg[key])
    except KeyError:
        raise ConfigError(f"{source}: missing key {key!r}") from None
    except ValueError:
        raise ConfigError(f"{source}: key {key!r} is not a number: {cfg[key]!r}") from None


def get_int_list(cfg: dict[str, str], key: str, source: str = "<config>") -> list[int]:
    try:
        raw = cfg[key]
    except KeyError:
        raise ConfigError(f"{source}: missing key {key!r}") from None
    try:
        return [int(tok) for tok in raw.split(",") if tok.strip() != ""]
    except ValueError:
        raise ConfigError(f"{source}: key {key!r} is not a comma-separated int list: {raw!r}") from None


def canonical_text(cfg: dict[str, str]) -> str:
    """Sorted, normalized rendering used for digests and for writing files."""
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def config_digest(cfg: dict[str, str]) -> str:
    return hashlib.sha256(canonical_text(cfg).encode("utf-8")).hexdigest()


def write_config(path: str | Path, cfg: dict[str, str]) -> None:
    Path(path).write_text(canonical_text(cfg), encoding="utf-8")
