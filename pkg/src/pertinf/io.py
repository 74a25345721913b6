"""File formats: input CSV, key = value configs, report CSVs and SVG index plots."""

from __future__ import annotations

import csv
import math
import re
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import EmptyCluster, MissingColumn, NonNumericCell, ValidationError
from .models.data import Cluster, ClusteredDataset

_XCOL = re.compile(r"^x(\d+)$")


def ingest(path) -> ClusteredDataset:
    """Read ``cluster_id, [obs_index], y, x1..xq, [d]`` rows grouped by cluster.

    Clusters keep the order of first appearance and rows keep file order.
    Without any ``x`` column the design is a single intercept.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"data file {str(path)!r} does not exist")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyCluster("data file is empty") from None
        for col in ("cluster_id", "y"):
            if col not in header:
                raise MissingColumn(f"missing mandatory column {col!r}")
        xcols = sorted((c for c in header if _XCOL.match(c)), key=lambda c: int(_XCOL.match(c).group(1)))
        has_d = "d" in header
        has_obs = "obs_index" in header
        pos = {c: header.index(c) for c in header}
        groups: "OrderedDict[str, list]" = OrderedDict()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                row = row + [""] * (len(header) - len(row))
            cid = row[pos["cluster_id"]].strip()
            if not cid:
                raise NonNumericCell(f"row {lineno}: empty cluster_id")

            def num(col):
                cell = row[pos[col]].strip()
                try:
                    val = float(cell)
                except ValueError:
                    raise NonNumericCell(f"row {lineno}, column {col!r}: not a number: {cell!r}") from None
                if not math.isfinite(val):
                    raise NonNumericCell(f"row {lineno}, column {col!r}: not finite")
                return val

            rec = {"y": num("y"), "x": [num(c) for c in xcols]}
            rec["d"] = num("d") if has_d else None
            if has_obs:
                ov = num("obs_index")
                if ov != int(ov):
                    raise NonNumericCell(f"row {lineno}, column 'obs_index': not an integer")
                rec["obs"] = int(ov)
            groups.setdefault(cid, []).append(rec)
    if not groups:
        raise EmptyCluster("data file has no rows")
    clusters = []
    for cid, rows in groups.items():
        y = np.array([r["y"] for r in rows])
        x = np.array([r["x"] for r in rows]) if xcols else np.ones((len(rows), 1))
        d = np.array([r["d"] for r in rows]) if has_d else None
        obs = np.array([r["obs"] for r in rows]) if has_obs else None
        clusters.append(Cluster(cid, y, x, d, obs))
    names = tuple(xcols) if xcols else ("intercept",)
    return ClusteredDataset(tuple(clusters), names)


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    if path is None:
        return out
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file {str(path)!r} does not exist")
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "NA"
        return repr(x) if x != 0 else "0.0"
    return str(x)


def write_csv(path, header, rows, comment=None):
    with open(path, "w", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


# ---------------------------------------------------------------------------
# SVG


def _panel(values, x0, y0, w, h, title, color, flags=None):
    v = np.asarray(values, dtype=float)
    v = np.where(np.isfinite(v), v, 0.0)
    n = v.size
    lo, hi = min(0.0, float(v.min(initial=0.0))), max(0.0, float(v.max(initial=0.0)))
    if hi == lo:
        hi = lo + 1.0
    sx = (w - 60) / max(n - 1, 1)
    sy = (h - 50) / (hi - lo)

    def px(i):
        return x0 + 50 + i * sx

    def py(val):
        return y0 + 20 + (hi - val) * sy

    parts = [
        f'<text x="{x0 + w / 2:.2f}" y="{y0 + 14:.2f}" text-anchor="middle" font-size="13">{title}</text>',
        f'<line x1="{x0 + 50:.2f}" y1="{py(0.0):.2f}" x2="{x0 + w - 10:.2f}" y2="{py(0.0):.2f}" stroke="#888" stroke-width="0.8"/>',
        f'<line x1="{x0 + 50:.2f}" y1="{y0 + 20:.2f}" x2="{x0 + 50:.2f}" y2="{y0 + h - 30:.2f}" stroke="#000" stroke-width="0.8"/>',
        f'<text x="{x0 + 46:.2f}" y="{py(hi) + 4:.2f}" text-anchor="end" font-size="10">{hi:.3g}</text>',
        f'<text x="{x0 + 46:.2f}" y="{py(lo) + 4:.2f}" text-anchor="end" font-size="10">{lo:.3g}</text>',
        f'<text x="{x0 + w / 2:.2f}" y="{y0 + h - 8:.2f}" text-anchor="middle" font-size="11">index</text>',
    ]
    for i, val in enumerate(v):
        fill = "#c0392b" if flags is not None and flags[i] else color
        parts.append(f'<line x1="{px(i):.2f}" y1="{py(0.0):.2f}" x2="{px(i):.2f}" y2="{py(val):.2f}" stroke="{color}" stroke-width="0.8"/>')
        parts.append(f'<circle cx="{px(i):.2f}" cy="{py(val):.2f}" r="2.2" fill="{fill}"/>')
    return parts


def write_index_plot(path, si, fi, title="", flags=None):
    """Two stacked index plots (SI on top, FI below) as a static SVG."""
    w, h = 720, 260
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{2 * h + 30}" viewBox="0 0 {w} {2 * h + 30}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{w / 2}" y="18" text-anchor="middle" font-size="14">{title}</text>',
    ]
    parts += _panel(si, 0, 30, w, h, "SI along basis directions", "#1f4e79", flags)
    parts += _panel(fi, 0, 30 + h, w, h, "FI along basis directions", "#2e7d32", flags)
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
