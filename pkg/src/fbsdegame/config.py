"""Line-oriented configuration text.

::

    [model]
    b = "u + v"
    phi = "x"
    [levy]
    atoms = -1, 1
    intensities = 0.5, 0.5

Comments start with ``#`` or ``;`` at the beginning of a line, or with
``#`` after a value outside quotes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

SECTIONS = ("model", "levy", "controls", "grid", "monotonicity", "solver", "verify")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.message = message
        self.line = line
        self.column = column
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class Entry:
    key: str
    value: str
    line: int
    column: int  # 1-based column of the value's first character (inside quotes if quoted)
    quoted: bool


@dataclass
class ConfigText:
    sections: dict[str, dict[str, Entry]] = field(default_factory=dict)
    source: str = ""

    def section(self, name: str) -> dict[str, Entry]:
        return self.sections.get(name, {})

    def get(self, section: str, key: str, default=None):
        entry = self.section(section).get(key)
        return default if entry is None else entry.value

    def entry(self, section: str, key: str) -> Entry | None:
        return self.section(section).get(key)

    def float(self, section: str, key: str, default: float) -> float:
        entry = self.entry(section, key)
        if entry is None:
            return float(default)
        try:
            return float(entry.value)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: expected a number, got {entry.value!r}", entry.line) from None

    def int(self, section: str, key: str, default: int) -> int:
        entry = self.entry(section, key)
        if entry is None:
            return int(default)
        try:
            return int(entry.value)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: expected an integer, got {entry.value!r}", entry.line) from None

    def floats(self, section: str, key: str, default=()) -> list[float]:
        entry = self.entry(section, key)
        if entry is None:
            return list(default)
        if not entry.value.strip():
            return []
        try:
            return [float(p) for p in entry.value.split(",")]
        except ValueError:
            raise ConfigError(f"[{section}] {key}: expected comma-separated numbers", entry.line) from None

    def digest(self) -> str:
        """SHA-256 over a canonical rendering (sorted, whitespace-normalised)."""
        lines = []
        for name in sorted(self.sections):
            lines.append(f"[{name}]")
            for key in sorted(self.sections[name]):
                e = self.sections[name][key]
                val = " ".join(e.value.split())
                lines.append(f'{key}="{val}"' if e.quoted else f"{key}={val}")
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()

    def with_overrides(self, section: str, **values) -> "ConfigText":
        sections = {k: dict(v) for k, v in self.sections.items()}
        target = sections.setdefault(section, {})
        for key, val in values.items():
            target[key] = Entry(key, str(val), 0, 1, False)
        return ConfigText(sections, self.source)


def _strip_comment(raw: str) -> str:
    in_quote = False
    for i, ch in enumerate(raw):
        if ch == '"':
            in_quote = not in_quote
        elif ch == "#" and not in_quote:
            return raw[:i]
    return raw


def parse_config(text: str) -> ConfigText:
    cfg = ConfigText(source=text)
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped[0] in "#;":
            continue
        body = _strip_comment(raw).rstrip()
        stripped = body.strip()
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError("unterminated section header", lineno, raw.index("[") + 1)
            name = stripped[1:-1].strip()
            if name not in SECTIONS:
                raise ConfigError(f"unknown section [{name}]", lineno, raw.index("[") + 1)
            current = cfg.sections.setdefault(name, {})
            continue
        if "=" not in body:
            raise ConfigError("expected 'key = value'", lineno, len(raw) - len(raw.lstrip()) + 1)
        if current is None:
            raise ConfigError("entry outside of any section", lineno, 1)
        eq = body.index("=")
        key = body[:eq].strip()
        if not key.isidentifier():
            raise ConfigError(f"invalid key {key!r}", lineno, len(raw) - len(raw.lstrip()) + 1)
        rest = body[eq + 1:]
        lead = len(rest) - len(rest.lstrip())
        value = rest.strip()
        col = eq + 2 + lead
        quoted = False
        if value.startswith('"'):
            if len(value) < 2 or not value.endswith('"') or value.count('"') != 2:
                raise ConfigError("unterminated or malformed quoted value", lineno, col)
            value = value[1:-1]
            col += 1
            quoted = True
        if key in current:
            raise ConfigError(f"duplicate key {key!r}", lineno, 1)
        current[key] = Entry(key, value, lineno, col, quoted)
    return cfg


def read_config(path: str | Path) -> ConfigText:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)
