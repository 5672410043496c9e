"""
Artifact writers.

Tables are lists of flat dicts. CSV output is deterministic: floats with 17
significant digits, '.' as decimal separator, '\\n' line endings, columns
in the given order. JSON output carries the same rows plus optional
metadata.
"""

import csv
import io
import json
import math
import sys
from typing import Any, Dict, Optional, Sequence

from wt_density.utils.debugging import setup_logging

logger = setup_logging()

FORMATS = ("csv", "json")


def format_value(value: Any) -> str:
    """Render one cell: floats as %.17g, bools as true/false, None as empty."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".17g")
    return str(value)


def render_csv(rows: Sequence[Dict[str, Any]], columns: Sequence[str]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row.get(c)) for c in columns])
    return buffer.getvalue()


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, complex):
        return [_json_safe(value.real), _json_safe(value.imag)]
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if hasattr(value, "item"):
        return _json_safe(value.item())
    return value


def render_json(rows: Sequence[Dict[str, Any]], columns: Sequence[str], metadata: Optional[Dict[str, Any]] = None) -> str:
    document = {
        "columns": list(columns),
        "rows": [{c: _json_safe(row.get(c)) for c in columns} for row in rows],
    }
    if metadata:
        document["metadata"] = _json_safe(metadata)
    return json.dumps(document, indent=2, sort_keys=False) + "\n"


def write_table(
    rows: Sequence[Dict[str, Any]],
    columns: Sequence[str],
    out: Optional[str] = None,
    fmt: str = "csv",
    metadata: Optional[Dict[str, Any]] = None,
) -> str:
    """
    Write a table to ``out`` (stdout when None).

    Args:
        rows: Row dicts.
        columns: Column order.
        out: Output path or None.
        fmt: "csv" or "json".
        metadata: Extra JSON-only metadata.

    Returns:
        str: The rendered text.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    text = render_csv(rows, columns) if fmt == "csv" else render_json(rows, columns, metadata)
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(out, "w", newline="") as f:
            f.write(text)
        logger.info(f"✅ wrote {len(rows)} rows to {out}")
    return text
