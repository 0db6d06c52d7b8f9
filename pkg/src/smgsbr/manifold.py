"""Posterior point clouds of backward-shifted initial points.

Two constructions are supported. In *sliding* mode one chain runs on each
stride-1 window of a single series. In *multi* mode one chain runs on each
of several series. In both cases the retained initial-point draws of all
chains are pooled into a :class:`ManifoldCloud`. The module also holds the
scoring tools used to compare a cloud against a traced stable manifold.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .dynamics import MapSpec, Polyline, TimeSeries, basis_size, orbit, simulate
from .errors import (
    DegenerateCloudError,
    ManifoldError,
    ParameterError,
    SmgsbrError,
    WindowLengthError,
)
from .gsbr import GsbrConfig, run_chain
from .stochastics import NoiseSpec, RngStream

log = logging.getLogger(__name__)

__all__ = [
    "WindowPlan",
    "ManifoldCloud",
    "HpdrGrid",
    "sliding_windows",
    "approximate_manifold_sliding",
    "approximate_manifold_multi",
    "orbit_start_series",
    "hpdr_grid",
    "cloud_metrics",
    "point_segment_distance",
    "principal_direction",
    "major_axis_spread",
    "mean_source_spread",
    "axis_angle_diff",
]

MAX_FAILURE_FRACTION = 0.10


@dataclass(frozen=True)
class WindowPlan:
    """``k`` stride-1 windows ``x_{j : n-k+j}``, ``j = 1..k``."""

    n: int
    k: int

    @property
    def window_len(self) -> int:
        return self.n - self.k + 1

    @property
    def offsets(self) -> range:
        return range(1, self.k + 1)

    def windows(self) -> list:
        """``(start, length)`` pairs with 1-based starts."""
        return [(j, self.window_len) for j in self.offsets]


def sliding_windows(series: TimeSeries, k: int, degree: int = 2) -> WindowPlan:
    """Plan ``k`` overlapping windows of length ``n - k + 1``."""
    if int(k) != k or k < 1:
        raise ParameterError(f"k must be a positive integer, got {k}")
    plan = WindowPlan(len(series), int(k))
    need = basis_size(2, degree) + 1
    if plan.window_len < need:
        raise WindowLengthError(
            f"k={k} leaves windows of length {plan.window_len}; at least {need} are needed"
        )
    return plan


@dataclass
class ManifoldCloud:
    """Pooled initial-point draws tagged by chain.

    ``points[i]`` is the chronological pair ``(x_{-T-1}, x_{-T})`` of one
    retained draw from chain ``source_id[i]`` at sweep ``sweep_index[i]``.
    """

    points: np.ndarray
    source_id: np.ndarray
    sweep_index: np.ndarray
    mode: str = "sliding"
    config: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.source_id = np.asarray(self.source_id, dtype=np.int64).reshape(-1)
        self.sweep_index = np.asarray(self.sweep_index, dtype=np.int64).reshape(-1)
        if not (len(self.points) == len(self.source_id) == len(self.sweep_index)):
            raise ParameterError("cloud columns must have equal length")
        if self.mode not in ("sliding", "multi"):
            raise ParameterError(f"mode must be 'sliding' or 'multi', got {self.mode!r}")

    def __len__(self):
        return len(self.points)

    @property
    def sources(self) -> np.ndarray:
        return np.unique(self.source_id)

    def subset(self, source_id: int) -> np.ndarray:
        return self.points[self.source_id == source_id]


@dataclass
class HpdrGrid:
    """Histogram of a cloud on a regular grid.

    ``counts[row, col]``: rows run upward in y from ``ymin``, columns run
    rightward in x from ``xmin``. ``total`` counts every cloud point,
    including those outside ``bounds``.
    """

    bounds: tuple
    resolution: tuple
    counts: np.ndarray
    total: int

    @property
    def inside(self) -> int:
        return int(self.counts.sum())


def _chain_task(args):
    source_id, values, meta, config_dict, seed = args
    config = GsbrConfig.from_dict(config_dict)
    try:
        res = run_chain(config, TimeSeries(values, meta), RngStream(seed, source_id))
    except (SmgsbrError, ArithmeticError) as exc:
        return source_id, None, f"{type(exc).__name__}: {exc}"
    pts = res.initial_points()
    sweeps = np.array([s.sweep_index for s in res.samples], dtype=np.int64)
    return source_id, (pts, sweeps), None


def _run_tasks(tasks, config: GsbrConfig, seed: int, mode: str, jobs: int) -> ManifoldCloud:
    payload = [(sid, s.values, s.meta, config.to_dict(), int(seed)) for sid, s in tasks]
    if jobs is None or jobs < 1:
        raise ParameterError("jobs must be >= 1")
    if jobs == 1 or len(payload) == 1:
        results = [_chain_task(p) for p in payload]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_chain_task, payload, chunksize=1))
    results.sort(key=lambda r: r[0])
    failures = [{"source_id": sid, "error": err} for sid, _, err in results if err is not None]
    for f in failures:
        log.warning("chain %d failed: %s", f["source_id"], f["error"])
    if len(failures) > MAX_FAILURE_FRACTION * len(results):
        raise ManifoldError(f"{len(failures)} of {len(results)} chains failed")
    pts, ids, sweeps = [np.empty((0, 2))], [np.empty(0, dtype=np.int64)], [np.empty(0, dtype=np.int64)]
    for sid, out, err in results:
        if out is None:
            continue
        pts.append(out[0])
        ids.append(np.full(len(out[0]), sid, dtype=np.int64))
        sweeps.append(out[1])
    return ManifoldCloud(
        np.vstack(pts), np.concatenate(ids), np.concatenate(sweeps),
        mode=mode, config=config.to_dict(), failures=failures,
    )


def approximate_manifold_sliding(
    series: TimeSeries, k: int, config: GsbrConfig, seed: int, jobs: int = 1
) -> ManifoldCloud:
    """Pool initial-point draws of one chain per sliding window.

    Window ``j`` uses random stream ``(seed, j)``, so the cloud does not
    depend on execution order or on ``jobs``.
    """
    plan = sliding_windows(series, k, config.degree)
    tasks = [(j, series.window(j, length)) for j, length in plan.windows()]
    return _run_tasks(tasks, config, seed, "sliding", jobs)


def approximate_manifold_multi(
    series_list: Sequence[TimeSeries], config: GsbrConfig, seed: int, jobs: int = 1, first_id: int = 1
) -> ManifoldCloud:
    """Pool initial-point draws of one chain per series.

    Series ``i`` (0-based) gets source id and random stream ``first_id + i``,
    so a set split into consecutive blocks with matching ``first_id`` values
    reproduces the pooled cloud exactly.
    """
    series_list = list(series_list)
    if not series_list:
        raise ParameterError("need at least one series")
    lengths = {len(s) for s in series_list}
    if len(lengths) != 1:
        raise ParameterError(f"series must have equal length, got {sorted(lengths)}")
    if first_id < 1:
        raise ParameterError("first_id must be >= 1")
    tasks = list(enumerate(series_list, start=int(first_id)))
    return _run_tasks(tasks, config, seed, "multi", jobs)


def orbit_start_series(
    map: MapSpec, noise: NoiseSpec, start, r: int, n: int, seed: int, skip: int = 0
) -> list:
    """Noisy series launched from ``r`` consecutive points of one orbit.

    The deterministic orbit of ``start`` provides initial points
    ``(y_{j-1}, y_j)`` for ``j = skip + 1 .. skip + r``; series ``j`` draws
    its noise from a seed derived from ``(seed, j)``.
    """
    if r < 1 or n < 1 or skip < 0:
        raise ParameterError("r and n must be >= 1 and skip >= 0")
    starts = orbit(map, start, skip + r)[skip + 1 :]
    out = []
    for j, x0 in enumerate(starts, start=skip + 1):
        child = int(np.random.SeedSequence(seed, spawn_key=(j,)).generate_state(1, np.uint64)[0])
        s = simulate(map, noise, tuple(x0), n, child)
        s.meta["orbit_index"] = j
        out.append(s)
    return out


def _as_points(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, ManifoldCloud) else cloud
    return np.asarray(pts, dtype=float).reshape(-1, 2)


def hpdr_grid(cloud, bounds, resolution) -> HpdrGrid:
    """Bin cloud points on a ``cols x rows`` grid over ``(xmin, xmax, ymin, ymax)``.

    Cells are half-open ``[lo, hi)`` except the last row and column, which
    also include their upper edge.
    """
    xmin, xmax, ymin, ymax = (float(b) for b in bounds)
    if not (xmin < xmax and ymin < ymax) or not all(map(math.isfinite, (xmin, xmax, ymin, ymax))):
        raise ParameterError(f"degenerate bounds {bounds}")
    if isinstance(resolution, (int, np.integer)):
        resolution = (resolution, resolution)
    cols, rows = (int(v) for v in resolution)
    if cols < 1 or rows < 1:
        raise ParameterError("resolution must be at least 1 x 1")
    pts = _as_points(cloud)
    counts, _, _ = np.histogram2d(pts[:, 1], pts[:, 0], bins=(rows, cols),
                                  range=((ymin, ymax), (xmin, xmax)))
    return HpdrGrid((xmin, xmax, ymin, ymax), (cols, rows), counts.astype(np.int64), len(pts))


def point_segment_distance(p, a, b) -> np.ndarray:
    """Euclidean distance from points ``p`` to segments ``[a, b]`` (broadcast)."""
    p, a, b = (np.asarray(v, dtype=float) for v in (p, a, b))
    ab = b - a
    ap = p - a
    den = np.einsum("...i,...i->...", ab, ab)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(den > 0, np.einsum("...i,...i->...", ap, ab) / np.where(den > 0, den, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(*np.moveaxis(ap - t[..., None] * ab, -1, 0))


def _distance_to_polyline(pts: np.ndarray, truth: Polyline, chunk: int = 4096) -> np.ndarray:
    verts = truth.points
    d_vert, _ = cKDTree(verts).query(pts)
    a, b = truth.segments()
    if len(a) == 0:
        return d_vert
    mids = 0.5 * (a + b)
    half = 0.5 * np.hypot(*(b - a).T)
    tree = cKDTree(mids)
    out = d_vert.copy()
    # Any segment closer than the nearest vertex has its midpoint within
    # d_vert + (longest half-length) of the query point.
    radius = d_vert + half.max() + 1e-12
    for s in range(0, len(pts), chunk):
        sl = slice(s, s + chunk)
        cand = tree.query_ball_point(pts[sl], radius[sl])
        lens = np.fromiter((len(c) for c in cand), dtype=np.int64, count=len(cand))
        if lens.sum() == 0:
            continue
        owner = np.repeat(np.arange(len(cand)), lens)
        seg = np.concatenate([np.asarray(c, dtype=np.int64) for c in cand])
        dist = point_segment_distance(pts[sl][owner], a[seg], b[seg])
        best = np.full(len(cand), np.inf)
        np.minimum.at(best, owner, dist)
        out[sl] = np.minimum(out[sl], best)
    return out


def cloud_metrics(cloud, truth: Polyline, tol: float, recall_tol: Optional[float] = None) -> dict:
    """Distances between a cloud and a reference polyline.

    Returns
    -------
    dict
        ``median``, ``p95`` and ``max`` of the point-to-polyline distances;
        ``coverage``, the share of cloud points within ``tol`` of the
        polyline; ``recall``, the share of polyline vertices within
        ``recall_tol`` (default ``tol``) of some cloud point.
    """
    pts = _as_points(cloud)
    if len(pts) == 0 or truth is None or len(truth) == 0:
        raise ParameterError("cloud and truth must be non-empty")
    if not (tol >= 0):
        raise ParameterError("tol must be non-negative")
    recall_tol = tol if recall_tol is None else float(recall_tol)
    dist = _distance_to_polyline(pts, truth)
    near, _ = cKDTree(pts).query(truth.points, distance_upper_bound=recall_tol * (1 + 1e-12) + 1e-300)
    return {
        "n_points": int(len(pts)),
        "n_vertices": int(len(truth)),
        "tol": float(tol),
        "recall_tol": recall_tol,
        "median": float(np.median(dist)),
        "p95": float(np.percentile(dist, 95)),
        "max": float(dist.max()),
        "coverage": float(np.mean(dist <= tol)),
        "recall": float(np.mean(near <= recall_tol)),
    }


def _cov_eig(points):
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 3:
        raise DegenerateCloudError("need at least 3 points")
    w, v = np.linalg.eigh(np.cov(pts.T))
    return w, v


def principal_direction(points):
    """Major axis of the sample covariance.

    Returns
    -------
    direction : ndarray, shape (2,)
        Unit eigenvector of the larger eigenvalue, signed so that its angle
        lies in ``[0, 180)`` degrees.
    angle : float
        Angle to the positive x-axis in degrees.
    """
    w, v = _cov_eig(points)
    if not (w[1] > 0) or (w[1] - w[0]) <= 1e-12 * w[1]:
        raise DegenerateCloudError("covariance has no distinct major axis")
    vec = v[:, 1]
    if vec[1] < 0 or (vec[1] == 0 and vec[0] < 0):
        vec = -vec
    angle = math.degrees(math.atan2(vec[1], vec[0])) % 180.0
    return vec / np.hypot(*vec), angle


def major_axis_spread(points) -> float:
    """Standard deviation along the major axis."""
    w, _ = _cov_eig(points)
    return float(math.sqrt(max(w[1], 0.0)))


def mean_source_spread(cloud: ManifoldCloud) -> float:
    """Mean over sources of :func:`major_axis_spread`."""
    return float(np.mean([major_axis_spread(cloud.subset(s)) for s in cloud.sources]))


def axis_angle_diff(a: float, b: float) -> float:
    """Smallest angle in degrees between two undirected axes."""
    d = abs(a - b) % 180.0
    return min(d, 180.0 - d)
