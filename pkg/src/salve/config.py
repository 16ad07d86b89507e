"""Plain-text ``key = value`` configuration files shared by the CLI inputs."""

from __future__ import annotations

from pathlib import Path

from .errors import SalveError


class ConfigError(SalveError, ValueError):
    pass


def parse_kv(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, keys are case-folded.

    Repeated keys keep every value in order (``dict[str, list[str]]``).
    """
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        out.setdefault(key.strip().lower().replace("_", "-"), []).append(value.strip())
    return out


def load_kv(path) -> dict:
    return parse_kv(Path(path).read_text())


def one(cfg: dict, key: str, default=None):
    values = cfg.get(key)
    if not values:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    return values[-1]


def as_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def as_list(value: str) -> list:
    return [v.strip() for v in value.split(",") if v.strip()]
