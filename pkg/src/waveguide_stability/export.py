"""Delimited output with schema sidecars, and the run manifest."""
from __future__ import annotations

import csv
import json
import math
from datetime import datetime, timezone
from pathlib import Path

__all__ = ["format_value", "write_table", "write_manifest"]


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    if v is None:
        return ""
    return str(v)


def write_table(path, columns, rows, descriptions: dict) -> list:
    """Write ``rows`` as CSV plus ``<stem>.schema.json``; returns both paths.

    Every column needs an entry in ``descriptions``: ``(type, unit, text)``.
    """
    path = Path(path)
    missing = [c for c in columns if c not in descriptions]
    if missing:
        raise ValueError(f"undocumented columns: {missing}")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([format_value(x) for x in r])
    schema = {
        "file": path.name,
        "delimiter": ",",
        "float_format": "%.17g",
        "columns": [{"name": c, "type": descriptions[c][0], "unit": descriptions[c][1],
                     "description": descriptions[c][2]} for c in columns],
    }
    spath = path.with_name(path.stem + ".schema.json")
    spath.write_text(json.dumps(schema, indent=2) + "\n")
    return [path, spath]


def write_manifest(out_dir, *, subcommand: str, config_hash: str, seed: int, started: datetime,
                   verdicts: dict, files) -> Path:
    out_dir = Path(out_dir)
    record = {
        "subcommand": subcommand,
        "config_hash": config_hash,
        "seed": seed,
        "started": started.isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
        "verdicts": verdicts,
        "files": sorted(str(Path(f).relative_to(out_dir)) for f in files),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path
