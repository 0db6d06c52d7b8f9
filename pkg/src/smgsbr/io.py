"""CSV/JSON readers and writers for series, polylines, clouds and grids.

Floats are written with ``repr`` so every file round-trips exactly and
identical inputs always give byte-identical files.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .dynamics import Polyline, TimeSeries
from .errors import ParameterError
from .manifold import HpdrGrid, ManifoldCloud


def _plain(obj):
    """Convert numpy scalars/arrays and tuples into JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj))
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json")


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) for v in row) + "\n")


def _read_table(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise ParameterError(f"{path}: empty file") from None
        if [h.strip() for h in got] != list(header):
            raise ParameterError(f"{path}: expected header {','.join(header)}, got {','.join(got)}")
        rows = [r for r in reader if r]
    return rows


def write_series(path, series: TimeSeries) -> Path:
    """CSV with header ``x`` plus a JSON sidecar holding ``series.meta``."""
    path = Path(path)
    _write_rows(path, ["x"], ((float(v),) for v in series.values))
    write_json(sidecar(path), series.meta)
    return path


def read_series(path) -> TimeSeries:
    path = Path(path)
    rows = _read_table(path, ["x"])
    try:
        values = np.array([float(r[0]) for r in rows])
    except ValueError as exc:
        raise ParameterError(f"{path}: {exc}") from exc
    meta = read_json(sidecar(path)) if sidecar(path).exists() else {}
    return TimeSeries(values, meta)


def write_polyline(path, poly: Polyline, meta=None) -> Path:
    """CSV ``x,y,depth``; the sidecar keeps the segment break distance."""
    path = Path(path)
    _write_rows(path, ["x", "y", "depth"],
                ((float(x), float(y), int(d)) for (x, y), d in zip(poly.points, poly.depth)))
    info = dict(meta or {})
    info.update({"max_gap": poly.max_gap, "truncated": poly.truncated, "n_points": len(poly)})
    write_json(sidecar(path), info)
    return path


def read_polyline(path) -> Polyline:
    path = Path(path)
    rows = _read_table(path, ["x", "y", "depth"])
    arr = np.array([[float(r[0]), float(r[1])] for r in rows]).reshape(-1, 2)
    depth = np.array([int(r[2]) for r in rows], dtype=int)
    max_gap, truncated = math.inf, False
    if sidecar(path).exists():
        info = read_json(sidecar(path))
        max_gap = info.get("max_gap") or math.inf
        truncated = bool(info.get("truncated", False))
    return Polyline(arr, depth, max_gap=max_gap, truncated=truncated)


def write_cloud(path, cloud: ManifoldCloud) -> Path:
    path = Path(path)
    _write_rows(
        path, ["x", "y", "source_id", "sweep_index"],
        ((float(x), float(y), int(s), int(w))
         for (x, y), s, w in zip(cloud.points, cloud.source_id, cloud.sweep_index)),
    )
    write_json(sidecar(path), {"mode": cloud.mode, "config": cloud.config,
                               "failures": cloud.failures, "n_points": len(cloud)})
    return path


def read_cloud(path) -> ManifoldCloud:
    path = Path(path)
    rows = _read_table(path, ["x", "y", "source_id", "sweep_index"])
    pts = np.array([[float(r[0]), float(r[1])] for r in rows]).reshape(-1, 2)
    sid = np.array([int(r[2]) for r in rows], dtype=np.int64)
    sw = np.array([int(r[3]) for r in rows], dtype=np.int64)
    info = read_json(sidecar(path)) if sidecar(path).exists() else {}
    return ManifoldCloud(pts, sid, sw, mode=info.get("mode", "sliding"),
                         config=info.get("config", {}), failures=info.get("failures", []))


def write_grid(path, grid: HpdrGrid) -> Path:
    """Counts matrix as CSV (first line is the lowest-y row) plus a JSON header."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        for row in grid.counts:
            fh.write(",".join(str(int(v)) for v in row) + "\n")
    write_json(sidecar(path), {
        "bounds": list(grid.bounds),
        "resolution": list(grid.resolution),
        "total": grid.total,
        "inside": grid.inside,
        "orientation": "rows ascend in y from bounds[2]; columns ascend in x from bounds[0]",
    })
    return path


def read_grid(path) -> HpdrGrid:
    path = Path(path)
    counts = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)
    info = read_json(sidecar(path))
    return HpdrGrid(tuple(info["bounds"]), tuple(info["resolution"]), counts, int(info["total"]))
