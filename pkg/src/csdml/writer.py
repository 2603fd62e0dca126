"""CSV and JSON emission for experiment results.

Floats are written with ``repr`` so that two identical runs produce
byte-identical files. ``None`` becomes an empty field.

Usage:
    from csdml.writer import write_csv

    write_csv(Path("out/rmse_vs_snr.csv"), SWEEP_HEADER, result.as_rows())
"""

import csv
import json
import sys
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any, TextIO

import numpy as np


class OutputError(Exception):
    """Error while writing results."""

    pass


def format_value(value: object) -> str:
    """Render one CSV field."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_rows(stream: TextIO, header: Sequence[str], rows: Iterable[Sequence[object]]) -> int:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(header)
    count = 0
    for row in rows:
        if len(row) != len(header):
            raise OutputError(f"row has {len(row)} fields, header has {len(header)}: {row}")
        writer.writerow([format_value(v) for v in row])
        count += 1
    return count


def write_csv(
    path: Path | None, header: Sequence[str], rows: Iterable[Sequence[object]]
) -> int:
    """Write ``rows`` under ``header`` to ``path``, or to stdout when ``path`` is None.

    Returns the number of data rows written.
    """
    if path is None:
        return _write_rows(sys.stdout, header, rows)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            return _write_rows(f, header, rows)
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e


def write_json(path: Path, payload: dict[str, Any]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, default=str))
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e
