"""Polynomial delay maps, noisy simulation, saddles and stable manifolds.

Conventions
-----------
A delay-2 map is written ``x_i = g(theta, x_{i-1}, x_{i-2})``.  Lag vectors
passed to :func:`poly_features` and :func:`map_eval` are ordered most recent
first, ``(x_{i-1}, x_{i-2})``.  Initial conditions and planar points are
chronological, ``(older, newer) = (x_{i-1}, x_i)``, and the planar map is

    F(u, v) = (v, g(theta, v, u)),    u = x_{i-2}, v = x_{i-1}.

All 2-D objects (saddles, directions, manifolds, clouds) use these axes.

The complete polynomial basis for two lags ``a = x_{i-1}``, ``b = x_{i-2}`` is

    degree 1: 1, a, b
    degree 2: ab, a^2, b^2
    degree 3: a^3, a^2 b, a b^2, b^3

each degree extending the previous one.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    EscapeError,
    InvertibilityError,
    NumericOverflowError,
    ParameterError,
    SingularityError,
    UnsupportedModelError,
)
from .stochastics import NoiseSpec, RngStream, sample_mixture_noise

__all__ = [
    "MapSpec",
    "NoiseSpec",
    "TimeSeries",
    "SaddlePoint",
    "Polyline",
    "PRESETS",
    "basis_size",
    "poly_features",
    "map_eval",
    "forward_step",
    "simulate",
    "orbit",
    "find_saddle",
    "jacobian_delay",
    "stable_direction",
    "is_invertible",
    "inverse_step",
    "trace_stable_manifold",
]

SUPPORTED_DEGREES = (1, 2, 3)
MONOMIAL_NAMES = {
    1: ("1", "x1", "x2"),
    2: ("1", "x1", "x2", "x1*x2", "x1^2", "x2^2"),
    3: ("1", "x1", "x2", "x1*x2", "x1^2", "x2^2", "x1^3", "x1^2*x2", "x1*x2^2", "x2^3"),
}
# Basis indices that involve x_{i-2} beyond the linear term (index 2).
_NONLINEAR_OLD_LAG = {1: (), 2: (3, 5), 3: (3, 5, 7, 8, 9)}


def basis_size(delay: int, degree: int) -> int:
    return math.comb(delay + degree, degree)


def _check_model(delay: int, degree: int) -> None:
    if delay != 2 or degree not in SUPPORTED_DEGREES:
        raise UnsupportedModelError(
            f"only delay 2 with degree in {SUPPORTED_DEGREES} is supported "
            f"(got delay={delay}, degree={degree})"
        )


def poly_features(lags, degree: int) -> np.ndarray:
    """Evaluate the complete polynomial basis at a lag vector.

    Parameters
    ----------
    lags : array_like, shape (..., 2)
        ``(x_{i-1}, x_{i-2})``; leading axes are broadcast.
    degree : int
        Total polynomial degree (1, 2 or 3).

    Returns
    -------
    ndarray, shape (..., basis_size(2, degree))
    """
    lags = np.asarray(lags, dtype=float)
    _check_model(lags.shape[-1] if lags.ndim else 0, degree)
    if not np.all(np.isfinite(lags)):
        raise ParameterError("lags must be finite")
    a, b = lags[..., 0], lags[..., 1]
    cols = [np.ones_like(a), a, b]
    if degree >= 2:
        cols += [a * b, a * a, b * b]
    if degree >= 3:
        cols += [a**3, a * a * b, a * b * b, b**3]
    return np.stack(cols, axis=-1)


def _feature_grads(a: float, b: float, degree: int):
    """Gradients of the basis w.r.t. ``a = x_{i-1}`` and ``b = x_{i-2}``."""
    da = [0.0, 1.0, 0.0]
    db = [0.0, 0.0, 1.0]
    if degree >= 2:
        da += [b, 2 * a, 0.0]
        db += [a, 0.0, 2 * b]
    if degree >= 3:
        da += [3 * a * a, 2 * a * b, b * b, 0.0]
        db += [0.0, a * a, 2 * a * b, 3 * b * b]
    return np.array(da), np.array(db)


@dataclass(frozen=True)
class MapSpec:
    """Delay-``d`` polynomial map given by coefficients over the basis."""

    delay: int
    degree: int
    coeffs: tuple
    preset_name: Optional[str] = None

    def __post_init__(self):
        _check_model(self.delay, self.degree)
        coeffs = tuple(float(c) for c in self.coeffs)
        if len(coeffs) != basis_size(self.delay, self.degree):
            raise ParameterError(
                f"expected {basis_size(self.delay, self.degree)} coefficients, got {len(coeffs)}"
            )
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def theta(self) -> np.ndarray:
        return np.array(self.coeffs)

    @classmethod
    def from_terms(cls, degree: int, terms: dict, name=None) -> "MapSpec":
        """Build a map from ``{monomial name: coefficient}``."""
        names = MONOMIAL_NAMES[degree]
        coeffs = [0.0] * len(names)
        for key, val in terms.items():
            coeffs[names.index(key)] = val
        return cls(2, degree, tuple(coeffs), name)

    @classmethod
    def preset(cls, name: str) -> "MapSpec":
        try:
            return PRESETS[name]
        except KeyError:
            raise ParameterError(
                f"unknown preset {name!r}; choose from {sorted(PRESETS)}"
            ) from None

    def with_degree(self, degree: int) -> "MapSpec":
        """Same map embedded in (or truncated to) another basis degree."""
        n_new = basis_size(self.delay, degree)
        old = list(self.coeffs)
        if any(c != 0.0 for c in old[n_new:]):
            raise UnsupportedModelError(f"map has terms above degree {degree}")
        return MapSpec(self.delay, degree, tuple((old + [0.0] * n_new)[:n_new]), self.preset_name)

    def to_dict(self) -> dict:
        return {
            "preset": self.preset_name,
            "delay": self.delay,
            "degree": self.degree,
            "coeffs": list(self.coeffs),
        }


PRESETS = {
    "henon": MapSpec.from_terms(2, {"1": 1.0, "x1^2": -1.4, "x2": 0.3}, "henon"),
    "dual-henon": MapSpec.from_terms(3, {"x1": 2.0, "x1^3": -0.1, "x2": 0.3}, "dual-henon"),
    "noninv-quad": MapSpec.from_terms(2, {"1": 1.38, "x1^2": -1.0, "x2^2": 0.211}, "noninv-quad"),
    # Henon-type map used to generate the multiple-series initial points.
    "henon-138": MapSpec.from_terms(2, {"1": 1.38, "x1^2": -1.0, "x2": 0.27}, "henon-138"),
}


def _g_scalar(coeffs, a: float, b: float) -> float:
    c = coeffs
    val = c[0] + c[1] * a + c[2] * b
    if len(c) > 3:
        val += c[3] * a * b + c[4] * a * a + c[5] * b * b
    if len(c) > 6:
        val += c[6] * a * a * a + c[7] * a * a * b + c[8] * a * b * b + c[9] * b * b * b
    return val


def map_eval(map: MapSpec, lags) -> float:
    """Return ``g(theta, lags)`` for lags ``(x_{i-1}, x_{i-2})``."""
    if len(lags) != map.delay:
        raise ParameterError(f"expected {map.delay} lags, got {len(lags)}")
    val = _g_scalar(map.coeffs, float(lags[0]), float(lags[1]))
    if not math.isfinite(val):
        raise NumericOverflowError(f"map value is not finite at lags {tuple(lags)}")
    return val


def forward_step(map: MapSpec, points) -> np.ndarray:
    """Apply the planar map ``(u, v) -> (v, g(v, u))`` to points of shape (..., 2)."""
    pts = np.asarray(points, dtype=float)
    u, v = pts[..., 0], pts[..., 1]
    with np.errstate(over="ignore", invalid="ignore"):
        w = poly_features_unchecked(np.stack([v, u], axis=-1), map.degree) @ map.theta
    return np.stack([v, w], axis=-1)


def poly_features_unchecked(lags, degree):
    """:func:`poly_features` without the finiteness check (NaN-tolerant)."""
    a, b = lags[..., 0], lags[..., 1]
    cols = [np.ones_like(a), a, b]
    if degree >= 2:
        cols += [a * b, a * a, b * b]
    if degree >= 3:
        cols += [a**3, a * a * b, a * b * b, b**3]
    return np.stack(cols, axis=-1)


@dataclass
class TimeSeries:
    """Observed scalar series ``x_{1:n}`` plus a provenance record."""

    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ParameterError("series values must be one-dimensional")

    @property
    def n(self) -> int:
        return int(self.values.size)

    def __len__(self):
        return self.n

    def window(self, start: int, length: int) -> "TimeSeries":
        """Sub-series ``x_{start : start+length-1}`` (1-based ``start``)."""
        if start < 1 or start - 1 + length > self.n:
            raise ParameterError(f"window ({start}, {length}) outside series of length {self.n}")
        meta = dict(self.meta)
        meta["window"] = {"start": start, "length": length}
        return TimeSeries(self.values[start - 1 : start - 1 + length].copy(), meta)

    def embedded(self) -> np.ndarray:
        """Delay embedding ``(x_{i-1}, x_i)`` of shape (n - 1, 2)."""
        return np.column_stack([self.values[:-1], self.values[1:]])


def simulate(
    map: MapSpec,
    noise: NoiseSpec,
    x0: Sequence[float],
    n: int,
    seed: int,
    bound: float = 1e6,
) -> TimeSeries:
    """Iterate ``x_i = g(theta, x_{i-1}, x_{i-2}) + e_i`` for ``i = 1..n``.

    ``x0`` holds the initial point chronologically, ``(x_{-1}, x_0)``; noise
    draws come from stream ``(seed, 0)``.
    """
    if n < 1:
        raise ParameterError("n must be >= 1")
    x0 = [float(v) for v in x0]
    if len(x0) != map.delay or not all(math.isfinite(v) for v in x0):
        raise ParameterError(f"x0 must hold {map.delay} finite values")
    e = sample_mixture_noise(noise, RngStream(seed, 0), size=n)
    out = np.empty(n)
    older, newer = x0
    coeffs = map.coeffs
    for i in range(n):
        x = _g_scalar(coeffs, newer, older) + float(e[i])
        if not (abs(x) <= bound):
            raise EscapeError(i + 1, x, bound)
        out[i] = x
        older, newer = newer, x
    meta = {
        "preset": map.preset_name,
        "delay": map.delay,
        "degree": map.degree,
        "coeffs": list(map.coeffs),
        "noise": noise.to_list(),
        "x0": x0,
        "n": n,
        "seed": int(seed),
    }
    return TimeSeries(out, meta)


def orbit(map: MapSpec, point, steps: int) -> np.ndarray:
    """Deterministic planar orbit ``point, F(point), ..., F^steps(point)``."""
    pts = np.empty((steps + 1, 2))
    pts[0] = point
    coeffs = map.coeffs
    u, v = float(point[0]), float(point[1])
    for k in range(1, steps + 1):
        u, v = v, _g_scalar(coeffs, v, u)
        pts[k] = (u, v)
    return pts


@dataclass(frozen=True)
class SaddlePoint:
    location: tuple
    eigenvalues: tuple  # (stable, unstable)
    stable_dir: tuple
    unstable_dir: tuple

    @property
    def x(self) -> float:
        return self.location[0]


def jacobian_delay(map: MapSpec, point) -> np.ndarray:
    """Jacobian of ``(u, v) -> (v, g(v, u))`` at ``point = (u, v)``.

    Rows are the output coordinates ``(v, g)``, columns the inputs ``(u, v)``::

        [[0,      1     ],
         [dg/du,  dg/dv ]]
    """
    u, v = float(point[0]), float(point[1])
    da, db = _feature_grads(v, u, map.degree)
    theta = map.theta
    return np.array([[0.0, 1.0], [theta @ db, theta @ da]])


def _unit(vec) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    vec = vec / np.hypot(vec[0], vec[1])
    # Canonical sign: first nonzero component positive.
    if vec[0] < 0 or (vec[0] == 0 and vec[1] < 0):
        vec = -vec
    return vec


def _classify(map: MapSpec, x: float) -> Optional[SaddlePoint]:
    J = jacobian_delay(map, (x, x))
    tr, det = J[1, 1], -J[1, 0]
    disc = tr * tr - 4 * det
    if disc <= 0:
        return None
    root = math.sqrt(disc)
    lams = sorted(((tr - root) / 2, (tr + root) / 2), key=abs)
    ls, lu = lams
    if not (abs(ls) < 1 < abs(lu)):
        return None
    # First row of J gives v2 = lambda * v1 for any eigenvector.
    return SaddlePoint(
        location=(float(x), float(x)),
        eigenvalues=(float(ls), float(lu)),
        stable_dir=tuple(float(c) for c in _unit((1.0, ls))),
        unstable_dir=tuple(float(c) for c in _unit((1.0, lu))),
    )


def find_saddle(map: MapSpec, search_interval=(-3.0, 3.0), n_grid: int = 10_000, xtol: float = 1e-12):
    """Saddle fixed points ``(x*, x*)`` with ``x* = g(x*, x*)`` inside an interval.

    Roots are bracketed by a sign scan over ``n_grid`` subintervals and
    refined by bisection; only hyperbolic saddles are returned, sorted by
    location.
    """
    if map.delay != 2:
        raise UnsupportedModelError("saddle search needs a delay-2 map")
    lo, hi = float(search_interval[0]), float(search_interval[1])
    if not lo < hi:
        raise ParameterError(f"empty search interval ({lo}, {hi})")
    coeffs = map.coeffs

    def h(x):
        return _g_scalar(coeffs, x, x) - x

    grid = np.linspace(lo, hi, n_grid + 1)
    vals = np.array([h(x) for x in grid])
    roots = [float(x) for x, fx in zip(grid, vals) if fx == 0.0]
    for i in np.flatnonzero(vals[:-1] * vals[1:] < 0):
        a, b, fa = grid[i], grid[i + 1], vals[i]
        while b - a > xtol:
            m = 0.5 * (a + b)
            fm = h(m)
            if fm == 0.0:
                a = b = m
                break
            if (fm < 0) == (fa < 0):
                a, fa = m, fm
            else:
                b = m
        roots.append(0.5 * (a + b))
    saddles = [s for s in (_classify(map, r) for r in sorted(roots)) if s is not None]
    return saddles


def stable_direction(
    map: MapSpec,
    orbit_point,
    orbit_pts=None,
    *,
    steps: int = 60,
    seed: int = 0,
    jacobian=None,
) -> np.ndarray:
    """Local stable direction at ``orbit_point``.

    A random unit vector placed at the end of the forward orbit is pulled
    back through the inverse Jacobian at every orbit point and renormalised
    after each step.

    Parameters
    ----------
    orbit_pts : array_like, optional
        Forward orbit starting at ``orbit_point``.  If its first entry is not
        ``orbit_point`` it is taken to start at ``F(orbit_point)``.  When
        omitted, ``steps`` forward iterates are computed.
    jacobian : callable, optional
        Override for :func:`jacobian_delay` (``point -> 2x2 array``).
    """
    p0 = np.asarray(orbit_point, dtype=float)
    if orbit_pts is None:
        pts = orbit(map, p0, steps)
    else:
        pts = np.asarray(orbit_pts, dtype=float).reshape(-1, 2)
        if not np.array_equal(pts[0], p0):
            pts = np.vstack([p0, pts])
    jac = jacobian or (lambda p: jacobian_delay(map, p))
    gen = RngStream(seed, 0).generator
    vec = _unit(gen.standard_normal(2))
    for k in range(len(pts) - 2, -1, -1):
        J = np.asarray(jac(pts[k]), dtype=float)
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        if not math.isfinite(det) or abs(det) < 1e-300:
            raise SingularityError(k)
        vec = np.linalg.solve(J, vec)
        vec = vec / np.hypot(vec[0], vec[1])
    return _unit(vec)


def is_invertible(map: MapSpec) -> bool:
    """True when ``g`` is affine in ``x_{i-2}`` with a nonzero slope."""
    c = map.coeffs
    return c[2] != 0.0 and all(c[i] == 0.0 for i in _NONLINEAR_OLD_LAG[map.degree])


def inverse_step(map: MapSpec, point) -> np.ndarray:
    """Exact preimage under ``F`` of ``point = (p, q)``; vectorised over (..., 2)."""
    if not is_invertible(map):
        raise InvertibilityError(
            f"map {map.preset_name or map.coeffs} is not invertible in closed form"
        )
    pts = np.asarray(point, dtype=float)
    p, q = pts[..., 0], pts[..., 1]
    c = map.coeffs
    # g(p, u) = a(p) + c2 * u with a(p) = g(p, 0).
    with np.errstate(over="ignore", invalid="ignore"):
        a = poly_features_unchecked(np.stack([p, np.zeros_like(p)], axis=-1), map.degree) @ map.theta
        u = (q - a) / c[2]
    return np.stack([u, p], axis=-1)


@dataclass
class Polyline:
    """Ordered vertices with per-vertex backward-iteration depth.

    Consecutive vertices are joined by a segment only when they are at most
    ``max_gap`` apart; larger jumps mark breaks between curve pieces.
    """

    points: np.ndarray
    depth: np.ndarray
    max_gap: float = math.inf
    truncated: bool = False

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.depth = np.asarray(self.depth, dtype=int).reshape(-1)
        if self.points.shape[0] == 0:
            raise ParameterError("polyline must be non-empty")
        if self.depth.shape[0] != self.points.shape[0]:
            raise ParameterError("depth tags must match the number of points")
        if not np.all(np.isfinite(self.points)):
            raise ParameterError("polyline coordinates must be finite")

    def __len__(self):
        return self.points.shape[0]

    def segments(self):
        """Return (starts, ends) arrays of the joined segments."""
        p = self.points
        if len(p) < 2:
            return p[:0], p[:0]
        gaps = np.hypot(*(p[1:] - p[:-1]).T)
        keep = gaps <= self.max_gap
        return p[:-1][keep], p[1:][keep]


def _in_window(pts, window):
    x0, x1, y0, y1 = window
    x, y = pts[..., 0], pts[..., 1]
    return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)


def _pull_back(map, pts, k, escape):
    for _ in range(k):
        pts = inverse_step(map, pts)
        bad = ~np.all(np.abs(pts) <= escape, axis=-1)
        if bad.any():
            pts[bad] = np.nan
    return pts


def _refine(map, origin, direction, t, pts, k, box, resolution, escape, budget):
    """Bisect parameter intervals until images under F^-k inside ``box`` are
    at most ``resolution`` apart.  Returns refined (t, pts, truncated)."""
    truncated = False
    while True:
        a, b = pts[:-1], pts[1:]
        with np.errstate(invalid="ignore"):
            gap = np.hypot(*(b - a).T)
        ina, inb = _in_window(a, box), _in_window(b, box)
        need = np.where(np.isnan(gap), ina | inb, (gap > resolution) & (ina | inb))
        dt = np.abs(t[1:] - t[:-1])
        need &= dt > 8 * np.spacing(np.maximum(np.abs(t[1:]), np.abs(t[:-1])))
        idx = np.flatnonzero(need)
        if idx.size == 0:
            return t, pts, truncated
        room = budget - t.size
        if idx.size > room:
            truncated = True
            idx = idx[: max(room, 0)]
            if idx.size == 0:
                return t, pts, truncated
        tm = 0.5 * (t[idx] + t[idx + 1])
        pm = _pull_back(map, origin + tm[:, None] * direction, k, escape)
        t = np.insert(t, idx + 1, tm)
        pts = np.insert(pts, idx + 1, pm, axis=0)
        if truncated:
            return t, pts, truncated


def _prune(t, pts, box):
    """Drop parameters whose image and both neighbours lie outside ``box``."""
    inside = _in_window(pts, box)
    keep = inside.copy()
    keep[1:] |= inside[:-1]
    keep[:-1] |= inside[1:]
    return t[keep], pts[keep]


def trace_stable_manifold(
    map: MapSpec,
    saddle: SaddlePoint,
    eps: float = 1e-4,
    n_back: int = 10,
    window=(-3.0, 3.0, -3.0, 3.0),
    max_points: int = 500_000,
    resolution: float = 0.01,
    seed_points: int = 64,
    escape: float = 1e6,
    margin: float = 1.0,
) -> Polyline:
    """Global stable manifold of ``saddle`` by backward iteration of segments.

    The seed segment ``saddle + t * stable_dir`` for ``|t| <= eps`` is returned
    at depth 0.  For each depth ``k = 1..n_back`` the two fundamental domains
    ``|lambda_s| eps <= |t| <= eps`` are pulled back ``k`` times through
    :func:`inverse_step`; parameter intervals are bisected until consecutive
    images inside ``window = (xmin, xmax, ymin, ymax)`` are at most
    ``resolution`` apart.  Refinement is carried from one depth to the next
    and applied inside the window enlarged by ``margin`` window-widths on
    every side, so curve pieces that leave and re-enter the window are kept.
    A point of depth ``k`` satisfies ``|F^k(p) - saddle| <= eps``.
    """
    if not is_invertible(map):
        raise InvertibilityError("ground-truth tracing needs an invertible map")
    if eps <= 0 or resolution <= 0 or n_back < 0:
        raise ParameterError("eps and resolution must be positive, n_back >= 0")
    window = tuple(float(w) for w in window)
    cx, cy = 0.5 * (window[0] + window[1]), 0.5 * (window[2] + window[3])
    hx = (0.5 + margin) * (window[1] - window[0])
    hy = (0.5 + margin) * (window[3] - window[2])
    box = (cx - hx, cx + hx, cy - hy, cy + hy)
    origin = np.asarray(saddle.location, dtype=float)
    direction = np.asarray(saddle.stable_dir, dtype=float)
    ls = abs(saddle.eigenvalues[0])

    t0 = np.linspace(-eps, eps, 2 * (seed_points // 2) + 1)
    seg = origin + t0[:, None] * direction
    pieces = [(seg, np.zeros(len(seg), dtype=int))]
    used = len(seg)
    truncated = False
    fronts = []
    for side in (1.0, -1.0):
        t = side * np.linspace(ls * eps, eps, seed_points)
        fronts.append((t, origin + t[:, None] * direction))
    for k in range(1, n_back + 1):
        for i, (t, pts) in enumerate(fronts):
            pts = _pull_back(map, pts, 1, escape)
            t, pts, trunc = _refine(
                map, origin, direction, t, pts, k, box, resolution, escape,
                max(max_points - used, 0) + t.size,
            )
            truncated |= trunc
            t, pts = _prune(t, pts, box)
            fronts[i] = (t, pts)
            keep = _in_window(pts, window)
            if keep.any():
                pieces.append((pts[keep], np.full(int(keep.sum()), k)))
                used += int(keep.sum())
        if used >= max_points:
            truncated = True
            break
    if truncated:
        warnings.warn("stable-manifold point budget exhausted; result truncated", RuntimeWarning)
    pts = np.vstack([p for p, _ in pieces])
    depth = np.concatenate([d for _, d in pieces])
    return Polyline(pts, depth, max_gap=2 * resolution, truncated=truncated)
