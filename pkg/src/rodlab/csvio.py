"""CSV and manifest writers.

Dialect: comma-separated, '.' decimal, floats in scientific notation with 17
significant digits (exact float64 round trip), single header row, UNIX
newlines. Files are written to a temporary sibling and renamed into place so
partial artifacts never appear under the final name.
"""
from __future__ import annotations

import math
import os
import tempfile


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.16e}"
    if isinstance(v, (int,)):
        return str(v)
    try:  # numpy scalars
        import numpy as np

        if isinstance(v, np.floating):
            return format_value(float(v))
        if isinstance(v, np.integer):
            return str(int(v))
    except ImportError:  # pragma: no cover
        pass
    return str(v)


def _atomic_write(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows, comment: str | None = None) -> None:
    lines = []
    if comment:
        lines.append("# " + comment)
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def write_manifest(path, mapping: dict) -> None:
    """Flat key = value record, one entry per line."""
    lines = [f"{key} = {format_value(value)}" for key, value in mapping.items()]
    _atomic_write(path, "\n".join(lines) + "\n")
