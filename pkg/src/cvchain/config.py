"""YAML config loading with field-path/line diagnostics."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Callable, Mapping, Optional

import yaml

_REQUIRED = object()


class ConfigError(Exception):
    def __init__(self, message: str, source: str = "<config>", line: Optional[int] = None, field: str = ""):
        self.message = message
        self.source = source
        self.line = line
        self.field = field
        where = source if line is None else f"{source}:{line}"
        super().__init__(f"{where}: {field + ': ' if field else ''}{message}")


def _line_map(node, path=(), out=None) -> dict[tuple, int]:
    if out is None:
        out = {}
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key = key_node.value
            out[path + (key,)] = key_node.start_mark.line + 1
            _line_map(value_node, path + (key,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _line_map(item, path + (i,), out)
    return out


def _fmt_path(path: tuple) -> str:
    s = ""
    for p in path:
        s += f"[{p}]" if isinstance(p, int) else (f".{p}" if s else str(p))
    return s


class Section:
    """A mapping inside a config document that knows where it came from."""

    def __init__(self, data: Mapping, source: str = "<config>", path: tuple = (), lines: Optional[dict] = None):
        self.data = data
        self.source = source
        self.path = path
        self.lines = lines or {}

    def __contains__(self, key) -> bool:
        return key in self.data

    def line_of(self, path: tuple) -> Optional[int]:
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path[:-1]
        return self.lines.get(())

    def error(self, key, message: str) -> ConfigError:
        path = self.path + ((key,) if key is not None else ())
        return ConfigError(message, self.source, self.line_of(path), _fmt_path(path))

    def check_keys(self, allowed) -> None:
        for key in self.data:
            if key not in allowed:
                raise self.error(key, f"unknown key (allowed: {', '.join(sorted(allowed))})")

    def get(self, key: str, convert: Callable[[Any], Any] = lambda v: v, default=_REQUIRED):
        if key not in self.data or self.data[key] is None:
            if default is _REQUIRED:
                raise self.error(key, "missing required field")
            return default
        try:
            return convert(self.data[key])
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise self.error(key, str(exc) or f"invalid value {self.data[key]!r}") from None

    def section(self, key: str, required: bool = False) -> "Section":
        value = self.data.get(key)
        if value is None:
            if required:
                raise self.error(key, "missing required section")
            value = {}
        if not isinstance(value, Mapping):
            raise self.error(key, "expected a mapping")
        return Section(value, self.source, self.path + (key,), self.lines)

    def sections(self, key: str) -> list["Section"]:
        value = self.data.get(key) or []
        if not isinstance(value, list):
            raise self.error(key, "expected a list")
        out = []
        for i, item in enumerate(value):
            if not isinstance(item, Mapping):
                raise ConfigError("expected a mapping", self.source,
                                  self.line_of(self.path + (key, i)), _fmt_path(self.path + (key, i)))
            out.append(Section(item, self.source, self.path + (key, i), self.lines))
        return out


def load_yaml(path: str | Path) -> Section:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError("no such file", str(path)) from None
    except OSError as exc:
        raise ConfigError(exc.strerror or str(exc), str(path)) from None
    return parse_yaml(text, str(path))


def parse_yaml(text: str, source: str = "<config>") -> Section:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", source,
                          mark.line + 1 if mark else None) from None
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigError("top level must be a mapping", source, 1)
    return Section(data, source, (), _line_map(node) if node is not None else {})


def as_section(cfg, source: str = "<mapping>") -> Section:
    if isinstance(cfg, Section):
        return cfg
    if isinstance(cfg, (str, Path)):
        return load_yaml(cfg)
    if isinstance(cfg, Mapping):
        return Section(cfg, source)
    raise TypeError(f"cannot read config from {type(cfg).__name__}")


# converters ---------------------------------------------------------------

def non_negative_int(v) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < 0:
        raise ValueError(f"expected an integer >= 0, got {v!r}")
    return v


def positive_int(v) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ValueError(f"expected an integer >= 1, got {v!r}")
    return v


def real(v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"expected a number, got {v!r}")
    return float(v)


def non_negative_real(v) -> float:
    v = real(v)
    if not v >= 0:
        raise ValueError(f"expected a number >= 0, got {v!r}")
    return v


def positive_real(v) -> float:
    v = real(v)
    if not v > 0:
        raise ValueError(f"expected a number > 0, got {v!r}")
    return v


def boolean(v) -> bool:
    if not isinstance(v, bool):
        raise ValueError(f"expected true/false, got {v!r}")
    return v


def string(v) -> str:
    if not isinstance(v, str) or not v:
        raise ValueError(f"expected a non-empty string, got {v!r}")
    return v


def lonlat(v) -> tuple[float, float]:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ValueError(f"expected [longitude, latitude], got {v!r}")
    lon, lat = real(v[0]), real(v[1])
    if not (-180 <= lon <= 180 and -90 <= lat <= 90):
        raise ValueError(f"coordinates out of range: {v!r}")
    return lon, lat
