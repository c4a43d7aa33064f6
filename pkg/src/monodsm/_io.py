"""CSV and JSON writers shared by the report types and the CLI."""

import csv
import datetime
import json
import math
from pathlib import Path

import numpy as np

from . import __version__


def _cell(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return "nan" if math.isnan(value) else f"{value:.17g}"
    return "" if value is None else str(value)


def write_csv(path, header, rows, stamp=True):
    """Write `rows` under `header`; floats use 17 significant digits.

    With `stamp`, the first line is a ``#`` comment carrying the package
    version and a UTC timestamp.  Everything after it is deterministic.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if stamp:
            now = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
            fh.write(f"# monodsm {__version__} {now}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, default=_default, allow_nan=True) + "\n")
