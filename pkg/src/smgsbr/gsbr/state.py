"""Mutable chain state and retained posterior draws."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ChainState:
    """Current values of every sampled quantity.

    The observed and latent parts of the series are kept in one contiguous
    array ``z = (x_{-T-1}, ..., x_0, x_1, ..., x_n)``; ``latent_x`` and
    ``obs_x`` are views into it. Term ``m`` (0-based, ``M = n + T`` terms)
    models ``z[m + 2]`` from the lags ``(z[m + 1], z[m])``.
    """

    lam: float
    tau: np.ndarray
    alloc_d: np.ndarray
    slice_N: np.ndarray
    theta: np.ndarray
    z: np.ndarray
    n_latent: int
    scales: np.ndarray
    acc_batch: np.ndarray = None
    acc_total: np.ndarray = None
    prop_total: np.ndarray = None
    sweep: int = 0

    def __post_init__(self):
        self.lam = float(self.lam)
        self.tau = np.ascontiguousarray(self.tau, dtype=np.float64)
        self.alloc_d = np.ascontiguousarray(self.alloc_d, dtype=np.int64)
        self.slice_N = np.ascontiguousarray(self.slice_N, dtype=np.int64)
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        self.z = np.ascontiguousarray(self.z, dtype=np.float64)
        self.scales = np.ascontiguousarray(self.scales, dtype=np.float64)
        for name in ("acc_batch", "acc_total", "prop_total"):
            value = getattr(self, name)
            if value is None:
                value = np.zeros(self.n_latent, dtype=np.int64)
            setattr(self, name, np.ascontiguousarray(value, dtype=np.int64))

    @property
    def latent_x(self) -> np.ndarray:
        return self.z[: self.n_latent]

    @property
    def obs_x(self) -> np.ndarray:
        return self.z[self.n_latent :]

    @property
    def M(self) -> int:
        return self.alloc_d.size

    @property
    def initial_point(self) -> tuple:
        return float(self.z[0]), float(self.z[1])

    def copy(self) -> "ChainState":
        return ChainState(
            self.lam, self.tau.copy(), self.alloc_d.copy(), self.slice_N.copy(),
            self.theta.copy(), self.z.copy(), self.n_latent, self.scales.copy(),
            self.acc_batch.copy(), self.acc_total.copy(), self.prop_total.copy(), self.sweep,
        )

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "tau": self.tau.tolist(),
            "alloc_d": self.alloc_d.tolist(),
            "slice_N": self.slice_N.tolist(),
            "theta": self.theta.tolist(),
            "z": self.z.tolist(),
            "n_latent": self.n_latent,
            "scales": self.scales.tolist(),
            "acc_batch": self.acc_batch.tolist(),
            "acc_total": self.acc_total.tolist(),
            "prop_total": self.prop_total.tolist(),
            "sweep": self.sweep,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChainState":
        return cls(
            data["lambda"], data["tau"], data["alloc_d"], data["slice_N"], data["theta"],
            data["z"], data["n_latent"], data["scales"], data["acc_batch"],
            data["acc_total"], data["prop_total"], data["sweep"],
        )


@dataclass
class PosteriorSample:
    """One retained draw."""

    theta: np.ndarray
    lam: float
    initial_point: tuple
    intermediates: np.ndarray
    sweep_index: int
    tau: np.ndarray = field(default_factory=lambda: np.empty(0))

    def to_dict(self) -> dict:
        return {
            "theta": np.asarray(self.theta).tolist(),
            "lambda": float(self.lam),
            "initial_point": [float(v) for v in self.initial_point],
            "intermediates": np.asarray(self.intermediates).tolist(),
            "sweep_index": int(self.sweep_index),
            "tau": np.asarray(self.tau).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PosteriorSample":
        return cls(
            np.asarray(data["theta"], dtype=float),
            float(data["lambda"]),
            tuple(float(v) for v in data["initial_point"]),
            np.asarray(data["intermediates"], dtype=float),
            int(data["sweep_index"]),
            np.asarray(data.get("tau", []), dtype=float),
        )

    @classmethod
    def from_state(cls, state: ChainState, d: int = 2) -> "PosteriorSample":
        return cls(
            state.theta.copy(),
            state.lam,
            tuple(float(v) for v in state.z[:d]),
            state.z[d : state.n_latent].copy(),
            state.sweep,
            state.tau.copy(),
        )
