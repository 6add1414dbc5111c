"""CSV output: a ``# meta:`` comment block followed by RFC-4180 rows.

Floats are written with 17 significant digits so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import io
import math
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    if v is None:
        return ""
    return str(v)


_BUILD = None


def build_id() -> str:
    """Version plus the git commit of the source tree, if there is one."""
    global _BUILD
    if _BUILD is None:
        rev = "nogit"
        try:
            here = Path(__file__).resolve().parent
            res = subprocess.run(["git", "rev-parse", "--short=12", "HEAD"], cwd=here,
                                 capture_output=True, text=True, timeout=5)
            if res.returncode == 0 and res.stdout.strip():
                rev = res.stdout.strip()
        except (OSError, subprocess.SubprocessError):
            pass
        _BUILD = f"openasep-{__version__}+{rev}"
    return _BUILD


def render(header, rows, meta=None) -> str:
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# meta: {k} = {fmt(v)}\n")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def write(path, header, rows, meta=None) -> str:
    text = render(header, rows, meta)
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    return text


def read(path_or_text):
    """Parse text produced by :func:`render` back into (meta, header, rows of str)."""
    text = path_or_text
    if "\n" not in str(path_or_text):
        text = Path(path_or_text).read_text(encoding="utf-8")
    meta = {}
    body = []
    for line in text.splitlines():
        if line.startswith("# meta: "):
            k, v = line[len("# meta: "):].split(" = ", 1)
            meta[k] = v
        else:
            body.append(line)
    rows = list(csv.reader(body))
    return meta, rows[0], rows[1:]
