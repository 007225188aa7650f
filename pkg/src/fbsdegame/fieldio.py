"""CSV export and import of value fields.

Layout: ``#``-prefixed metadata lines (``# key: value``), then the column
header ``# slice,node,t,x,W[,Z,K0,...][,gap]``, then one row per slice and
node. Floats are written with 17 significant digits, which round-trips
IEEE doubles exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["FieldTable", "export_field", "format_field", "parse_field", "read_field", "table_to_text"]

BASE_COLUMNS = ("slice", "node", "t", "x", "W")


def _g(v: float) -> str:
    return format(float(v), ".17g")


@dataclass(frozen=True)
class FieldTable:
    """Parsed CSV: metadata in file order and one array per column."""

    meta: tuple[tuple[str, str], ...]
    columns: tuple[str, ...]
    data: dict

    @property
    def values(self) -> np.ndarray:
        """``W`` reshaped to ``[slice, node]``."""
        return self._grid("W")

    def _grid(self, name: str) -> np.ndarray:
        s = self.data["slice"].astype(np.int64)
        n = self.data["node"].astype(np.int64)
        out = np.full((s.max() + 1, n.max() + 1), np.nan)
        out[s, n] = self.data[name]
        return out

    def column(self, name: str) -> np.ndarray:
        return self._grid(name)


def format_field(field, *, meta=None, components: bool = False, gap: np.ndarray | None = None) -> str:
    """CSV text for ``field`` (anything with ``values``, ``times`` and ``space``)."""
    W = np.asarray(field.values, dtype=float)
    N1, n = W.shape
    x = field.space.x
    t = np.asarray(field.times, dtype=float)
    cols = list(BASE_COLUMNS)
    extra: list[np.ndarray] = []
    if components and getattr(field, "Z", None) is not None:
        cols.append("Z")
        extra.append(np.asarray(field.Z, dtype=float))
        K = getattr(field, "K", None)
        if K is not None:
            for i in range(K.shape[2]):
                cols.append(f"K{i}")
                extra.append(np.asarray(K[:, :, i], dtype=float))
    if gap is not None:
        gap = np.asarray(gap, dtype=float)
        if gap.shape != W.shape:
            raise ValueError(f"gap field shape {gap.shape} differs from values {W.shape}")
        cols.append("gap")
        extra.append(gap)
    lines = [f"# {k}: {v}" for k, v in (meta.items() if isinstance(meta, dict) else (meta or ()))]
    lines.append("# " + ",".join(cols))
    for k in range(N1):
        tk = _g(t[k])
        for j in range(n):
            row = [str(k), str(j), tk, _g(x[j]), _g(W[k, j])]
            row.extend(_g(a[k, j]) for a in extra)
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def export_field(field, path, **kwargs) -> Path:
    """Write :func:`format_field` output to ``path``."""
    path = Path(path)
    path.write_text(format_field(field, **kwargs), encoding="utf-8")
    return path


def parse_field(text: str) -> FieldTable:
    meta: list[tuple[str, str]] = []
    columns: tuple[str, ...] | None = None
    rows: list[list[str]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        if raw.startswith("#"):
            body = raw[1:].strip()
            if columns is None and body.startswith("slice,"):
                columns = tuple(body.split(","))
            elif columns is None:
                key, sep, val = body.partition(": ")
                if not sep:
                    raise ValueError(f"line {lineno}: metadata must read '# key: value'")
                meta.append((key, val))
            continue
        if not raw.strip():
            continue
        if columns is None:
            raise ValueError(f"line {lineno}: data before the column header")
        parts = raw.split(",")
        if len(parts) != len(columns):
            raise ValueError(f"line {lineno}: expected {len(columns)} fields, got {len(parts)}")
        rows.append(parts)
    if columns is None:
        raise ValueError("no column header found")
    data = {}
    for i, name in enumerate(columns):
        col = [r[i] for r in rows]
        data[name] = np.array(col, dtype=np.int64 if name in ("slice", "node") else float)
    return FieldTable(tuple(meta), columns, data)


def read_field(path) -> FieldTable:
    return parse_field(Path(path).read_text(encoding="utf-8"))


def table_to_text(table: FieldTable) -> str:
    """Re-serialise a parsed table; byte-identical to the text it came from."""
    lines = [f"# {k}: {v}" for k, v in table.meta]
    lines.append("# " + ",".join(table.columns))
    cols = [table.data[c] for c in table.columns]
    for i in range(len(cols[0]) if cols else 0):
        lines.append(",".join(str(int(c[i])) if name in ("slice", "node") else _g(c[i])
                              for name, c in zip(table.columns, cols)))
    return "\n".join(lines) + "\n"
