"""Byte-stable CSV / JSON table writers.

Every table carries a versioned schema name, the config digest and the seed.
Floats are written with 9 significant digits.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

from .config import SCHEMA_VERSION, ExperimentConfig


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.9g}"
    if hasattr(value, "value"):  # enums
        return str(value.value)
    return str(value)


def _json_value(value: Any):
    if isinstance(value, bool) or isinstance(value, int) or value is None:
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            return str(value)
        return float(f"{value:.9g}")
    if hasattr(value, "value"):
        return value.value
    return str(value)


def rows_from(records: Iterable[Any]) -> tuple[list[str], list[list[Any]]]:
    """Columns and rows from a sequence of dataclass instances."""
    records = list(records)
    if not records:
        return [], []
    columns = [f.name for f in dataclasses.fields(records[0])]
    return columns, [[getattr(r, c) for c in columns] for r in records]


def write_table(
    out_dir: str | Path,
    name: str,
    columns: Sequence[str],
    rows: Sequence[Sequence[Any]],
    cfg: ExperimentConfig,
    fmt: str = "csv",
    seed: int | None = None,
) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed if seed is None else seed
    schema = f"homsync.{name}/{SCHEMA_VERSION}"
    if fmt == "csv":
        path = out_dir / f"{name}.csv"
        with path.open("w", newline="") as fh:
            fh.write(f"# schema: {schema}\n# config: {cfg.digest()}\n# seed: {seed}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    elif fmt == "json":
        path = out_dir / f"{name}.json"
        doc = {
            "schema": schema,
            "config": cfg.digest(),
            "seed": seed,
            "columns": list(columns),
            "rows": [[_json_value(v) for v in row] for row in rows],
        }
        path.write_text(json.dumps(doc, indent=1) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def write_records(out_dir, name, records, cfg, fmt="csv", seed=None) -> Path:
    columns, rows = rows_from(records)
    return write_table(out_dir, name, columns, rows, cfg, fmt, seed)


def read_csv_table(path: str | Path) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Parse a table written by :func:`write_table` back into header and rows."""
    meta = {}
    lines = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            key, _, value = line[2:].partition(": ")
            meta[key] = value
        else:
            lines.append(line)
    return meta, list(csv.DictReader(lines))
