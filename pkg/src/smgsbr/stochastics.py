"""Seeded random streams and the sampling kernels used by the Gibbs sampler.

Every stream is a PCG64 generator seeded from ``SeedSequence(seed,
spawn_key=(stream_id,))``; distinct stream ids give statistically independent
streams, and the same ``(seed, stream_id)`` pair always replays the same draws.
Gamma variates are parameterised by shape and *rate*.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ParameterError

__all__ = [
    "RngStream",
    "NoiseSpec",
    "Normal",
    "Gamma",
    "Beta",
    "sample_standard",
    "sample_mixture_noise",
    "sample_truncated_geometric",
    "sample_categorical",
]

_U64 = 2**64


class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``."""

    def __init__(self, seed: int, stream_id: int = 0):
        seed, stream_id = int(seed), int(stream_id)
        if not (0 <= seed < _U64 and 0 <= stream_id < _U64):
            raise ParameterError("seed and stream_id must be unsigned 64-bit integers")
        self.seed = seed
        self.stream_id = stream_id
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    @property
    def state(self) -> dict:
        """Bit-generator state; assign it back to resume the stream exactly."""
        return self.generator.bit_generator.state

    @state.setter
    def state(self, value: dict) -> None:
        self.generator.bit_generator.state = value

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def _gen(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


@dataclass(frozen=True)
class NoiseSpec:
    """Finite mixture of zero-mean Gaussians given as (weight, variance) pairs.

    The empty mixture is the zero-noise limit.
    """

    components: tuple = ()

    def __post_init__(self):
        comps = tuple((float(w), float(v)) for w, v in self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            return
        for w, v in comps:
            if not (0.0 < w <= 1.0):
                raise ParameterError(f"mixture weight {w} not in (0, 1]")
            if not (v > 0.0 and math.isfinite(v)):
                raise ParameterError(f"mixture variance {v} must be positive")
        total = math.fsum(w for w, _ in comps)
        if abs(total - 1.0) > 1e-12:
            raise ParameterError(f"mixture weights sum to {total!r}, not 1")

    @classmethod
    def parse(cls, text: str) -> "NoiseSpec":
        """Parse ``"none"`` or ``"w1:v1,w2:v2,..."``."""
        text = text.strip()
        if text.lower() in ("", "none", "zero", "0"):
            return cls(())
        comps = []
        for part in text.split(","):
            try:
                w, v = part.split(":")
                comps.append((float(w), float(v)))
            except ValueError as exc:
                raise ParameterError(f"cannot parse noise component {part!r}") from exc
        return cls(tuple(comps))

    @property
    def is_zero(self) -> bool:
        return not self.components

    @property
    def variance(self) -> float:
        return math.fsum(w * v for w, v in self.components)

    def to_list(self) -> list:
        return [[w, v] for w, v in self.components]

    def __str__(self):
        if self.is_zero:
            return "none"
        return ",".join(f"{w!r}:{v!r}" for w, v in self.components)


@dataclass(frozen=True)
class Normal:
    mean: float
    var: float

    def __post_init__(self):
        if not (self.var > 0 and math.isfinite(self.var)):
            raise ParameterError(f"normal variance must be positive, got {self.var}")

    def sample(self, gen, size=None):
        return gen.normal(self.mean, math.sqrt(self.var), size)


@dataclass(frozen=True)
class Gamma:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ParameterError(f"gamma shape/rate must be positive, got {self.shape}, {self.rate}")

    def sample(self, gen, size=None):
        # numpy boosts shapes < 1 internally (Gamma(a+1) * U**(1/a)).
        return gen.gamma(self.shape, 1.0 / self.rate, size)


@dataclass(frozen=True)
class Beta:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ParameterError(f"beta shapes must be positive, got {self.a}, {self.b}")

    def sample(self, gen, size=None):
        return gen.beta(self.a, self.b, size)


def sample_standard(dist, rng, size=None):
    """Draw from a :class:`Normal`, :class:`Gamma` or :class:`Beta` law."""
    if not isinstance(dist, (Normal, Gamma, Beta)):
        raise ParameterError(f"unknown distribution {dist!r}")
    return dist.sample(_gen(rng), size)


def sample_mixture_noise(noise: NoiseSpec, rng, size=None):
    """Draw additive noise from a Gaussian mixture.

    A component index is chosen by weight, then a zero-mean Gaussian with that
    component's variance is drawn. The empty mixture returns exact zeros.
    """
    gen = _gen(rng)
    shape = () if size is None else size
    if noise.is_zero:
        out = np.zeros(shape)
        return float(out) if size is None else out
    weights = np.array([w for w, _ in noise.components])
    sds = np.sqrt([v for _, v in noise.components])
    u = gen.random(shape)
    comp = np.minimum(np.searchsorted(np.cumsum(weights), u, side="right"), len(weights) - 1)
    out = gen.standard_normal(shape) * sds[comp]
    return float(out) if size is None else out


def sample_truncated_geometric(lam: float, min_n: int, rng, size=None):
    """Draw N with P(N) proportional to (1 - lam)**(N - 1) on N >= min_n.

    Implemented as ``min_n + G`` where G counts failures before the first
    success of a Bernoulli(lam) sequence.
    """
    if not (0.0 < lam < 1.0):
        raise ParameterError(f"lambda must lie in (0, 1), got {lam}")
    if min_n < 1:
        raise ParameterError(f"min_n must be >= 1, got {min_n}")
    # numpy's geometric counts trials (>= 1), so subtract one.
    g = _gen(rng).geometric(lam, size)
    return int(min_n) + g - 1 if size is None else int(min_n) + np.asarray(g) - 1


def sample_categorical(weights: Sequence[float], rng) -> int:
    """Return index i (0-based) with probability ``weights[i] / sum(weights)``."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ParameterError("weights must be a finite non-negative vector")
    cw = np.cumsum(w)
    if cw[-1] <= 0:
        raise ParameterError("at least one weight must be strictly positive")
    u = _gen(rng).random() * cw[-1]
    idx = int(np.searchsorted(cw, u, side="right"))
    if idx >= w.size:
        # u rounded onto the final edge; fall back to the last positive weight.
        idx = int(np.flatnonzero(w)[-1])
    return idx


def geometric_weights(lam: float, k: int) -> np.ndarray:
    """First ``k`` geometric stick-breaking weights lam * (1 - lam)**(j - 1)."""
    j = np.arange(k)
    return lam * (1.0 - lam) ** j


def chi_square_gof(observed: Iterable[int], expected_probs: Iterable[float]):
    """Pearson chi-square statistic and p-value (helper for kernel checks)."""
    from scipy import stats

    obs = np.asarray(list(observed), dtype=float)
    p = np.asarray(list(expected_probs), dtype=float)
    exp = p * obs.sum()
    stat = float(np.sum((obs - exp) ** 2 / exp))
    return stat, float(stats.chi2.sf(stat, obs.size - 1))
