"""Sampler configuration and iteration-budget profiles."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

from ..dynamics import SUPPORTED_DEGREES, basis_size
from ..errors import ParameterError, UnsupportedModelError

# Iteration budgets. "desk" keeps CI runs to minutes.
PROFILES = {
    "full": {"iters": 200_000, "burn_in": 50_000, "thin": 150},
    "desk": {"iters": 20_000, "burn_in": 5_000, "thin": 15},
}


@dataclass(frozen=True)
class GsbrConfig:
    """Hyperparameters and run length of one chain.

    Parameters
    ----------
    T : int
        Backward horizon: number of unobserved steps between the inferred
        initial point and the first observation.
    d : int
        Delay of the recurrence. Only 2 is supported.
    degree : int
        Total degree of the polynomial model basis.
    trunc : (float, float)
        Open interval to which every latent coordinate is restricted.
    alpha, beta : float
        Beta prior shapes of the stick-breaking parameter.
    b1, b2 : float
        Gamma prior shape and rate of the component precisions.
    iters, burn_in, thin : int
        Total sweeps, discarded sweeps, and retention stride.
    proposal_scale0 : float
        Initial random-walk scale for every latent coordinate.
    adapt : bool
        Tune the latent proposal scales during burn-in.
    """

    T: int = 3
    d: int = 2
    degree: int = 2
    trunc: tuple = (-3.0, 3.0)
    alpha: float = 0.5
    beta: float = 0.5
    b1: float = 1e-3
    b2: float = 1e-3
    iters: int = 200_000
    burn_in: int = 50_000
    thin: int = 150
    proposal_scale0: float = 0.1
    adapt: bool = True
    target_accept: float = 0.44
    adapt_batch: int = 50
    jitter: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "trunc", tuple(float(v) for v in self.trunc))
        for name in ("T", "d", "degree", "iters", "burn_in", "thin", "adapt_batch"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise ParameterError(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.d != 2:
            raise UnsupportedModelError(f"only delay 2 is supported, got d={self.d}")
        if self.degree not in SUPPORTED_DEGREES:
            raise UnsupportedModelError(f"degree must be one of {SUPPORTED_DEGREES}")
        if self.T < 0:
            raise ParameterError(f"T must be >= 0, got {self.T}")
        if len(self.trunc) != 2:
            raise ParameterError("trunc must be a (lo, hi) pair")
        lo, hi = self.trunc
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ParameterError(f"trunc must be a bounded nonempty interval, got {self.trunc}")
        for name in ("alpha", "beta", "b1", "b2", "proposal_scale0"):
            value = float(getattr(self, name))
            if not (value > 0 and math.isfinite(value)):
                raise ParameterError(f"{name} must be positive, got {value}")
            object.__setattr__(self, name, value)
        if self.iters < 1:
            raise ParameterError(f"iters must be >= 1, got {self.iters}")
        if not (0 <= self.burn_in < self.iters):
            raise ParameterError(f"burn_in must satisfy 0 <= burn_in < iters, got {self.burn_in}")
        if self.thin < 1:
            raise ParameterError(f"thin must be >= 1, got {self.thin}")
        if not (0.0 < self.target_accept < 1.0):
            raise ParameterError("target_accept must lie in (0, 1)")
        if self.adapt_batch < 1:
            raise ParameterError("adapt_batch must be >= 1")
        if not (self.jitter >= 0 and math.isfinite(self.jitter)):
            raise ParameterError("jitter must be non-negative")
        object.__setattr__(self, "adapt", bool(self.adapt))

    @property
    def n_samples(self) -> int:
        """Number of retained draws."""
        return (self.iters - self.burn_in) // self.thin

    @property
    def basis_size(self) -> int:
        return basis_size(self.d, self.degree)

    @property
    def n_latent(self) -> int:
        return self.T + self.d

    def replace(self, **changes) -> "GsbrConfig":
        return dataclasses.replace(self, **changes)

    def with_profile(self, name: str) -> "GsbrConfig":
        if name not in PROFILES:
            raise ParameterError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
        return self.replace(**PROFILES[name])

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["trunc"] = list(self.trunc)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GsbrConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)
