"""Self-describing CSV/JSON output with atomic writes."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

SIG_DIGITS = 12


def fmt(x) -> str:
    """Numeric text rounded to 12 significant digits."""
    if isinstance(x, str):
        return x
    return f"{float(x):.{SIG_DIGITS}g}"


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _header_value(v) -> str:
    if isinstance(v, (dict, list, tuple)):
        return json.dumps(v, sort_keys=True, default=str)
    if isinstance(v, float):
        return fmt(v)
    return str(v)


def write_table(path, columns: list[str], rows, metadata: dict, *, json_mirror: bool = False) -> list[Path]:
    """Write ``rows`` under ``columns`` with ``# key = value`` header lines.

    Returns the paths written (the CSV and optionally a JSON mirror with the
    same metadata and columns).
    """
    path = Path(path)
    rows = [list(r) for r in rows]
    lines = [f"# {k} = {_header_value(v)}" for k, v in metadata.items()]
    lines.append(",".join(columns))
    lines.extend(",".join(fmt(x) for x in r) for r in rows)
    _atomic_write(path, "\n".join(lines) + "\n")
    written = [path]
    if json_mirror:
        def clean(x):
            if isinstance(x, str):
                return x
            x = float(x)
            return x if np.isfinite(x) else None

        doc = {
            "metadata": json.loads(json.dumps(metadata, default=str)),
            "columns": {c: [clean(r[i]) for r in rows] for i, c in enumerate(columns)},
        }
        jpath = path.with_suffix(".json")
        _atomic_write(jpath, json.dumps(doc, indent=1))
        written.append(jpath)
    return written


def read_table(path) -> tuple[dict, list[str], np.ndarray]:
    """Parse a file written by :func:`write_table` (numeric columns only)."""
    meta, columns, data = {}, None, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(" = ")
            meta[key] = value
        elif columns is None:
            columns = line.split(",")
        elif line:
            data.append([float(x) for x in line.split(",")])
    return meta, columns or [], np.array(data, dtype=float).reshape(-1, len(columns or []))


PLOT_TEMPLATE = """\
# Plot {csv}; needs matplotlib.
import csv
import matplotlib.pyplot as plt

with open({csv!r}) as fh:
    rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
header, data = rows[0], [[float(x) for x in r] for r in rows[1:]]
x = [r[0] for r in data]
for j in {ycols}:
    plt.plot(x, [r[j] for r in data], label=header[j])
plt.xlabel(header[0])
plt.legend()
plt.savefig({png!r}, dpi=150)
"""


def write_plot_script(csv_path, ycols: list[int]) -> Path:
    csv_path = Path(csv_path)
    script = csv_path.with_name(f"plot_{csv_path.stem}.py")
    _atomic_write(
        script,
        PLOT_TEMPLATE.format(csv=csv_path.name, ycols=list(ycols), png=f"{csv_path.stem}.png"),
    )
    return script
