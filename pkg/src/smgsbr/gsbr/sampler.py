"""Gibbs sampler for the geometric stick-breaking reconstruction model.

Each sweep updates, in order: the slice/allocation pairs, the component
precisions, the stick-breaking parameter, the map coefficients and finally
the latent initial point and intermediate states (random-walk Metropolis,
one coordinate at a time, left to right). Heavy loops live in
:mod:`._kernels`; this module holds the Python API, the reference density
and checkpointing.
"""
from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from ..dynamics import TimeSeries, poly_features
from ..errors import ParameterError, SingularModelError
from ..stochastics import RngStream, _gen
from . import _kernels as K
from .config import GsbrConfig
from .state import ChainState, PosteriorSample

__all__ = [
    "ChainResult",
    "init_chain",
    "log_joint",
    "lambda_conditional",
    "tau_conditional",
    "alloc_probabilities",
    "update_alloc_pairs",
    "update_tau",
    "update_lambda",
    "update_theta",
    "update_latent",
    "latent_log_ratio",
    "theta_conditional",
    "gibbs_sweep",
    "run_chain",
    "resume_chain",
    "posterior_predict",
    "save_checkpoint",
    "load_checkpoint",
]

TINY = K.TINY
_LOG_2PI = math.log(2.0 * math.pi)


def _residuals_np(state: ChainState, degree: int) -> np.ndarray:
    z = state.z
    lags = np.column_stack([z[1:-1], z[:-2]])
    return z[2:] - poly_features(lags, degree) @ state.theta


def log_joint(state: ChainState, config: GsbrConfig) -> float:
    """Log of the unnormalised augmented posterior.

    Sums, over every modelled term, the slice weight
    ``2 log(lam) + (N - 1) log(1 - lam)`` and the Gaussian log-density of the
    residual under precision ``tau[d - 1]``; adds the Beta prior of ``lam``,
    the Gamma prior of every realised precision and the uniform prior of the
    initial point. Returns ``-inf`` if a latent value leaves the restriction
    interval or an allocation exceeds its slice.
    """
    lo, hi = config.trunc
    latent = state.latent_x
    if not np.all((latent > lo) & (latent < hi)):
        return -math.inf
    d, N, tau, lam = state.alloc_d, state.slice_N, state.tau, state.lam
    if np.any(d < 1) or np.any(d > N) or np.any(d > tau.size):
        return -math.inf
    r = _residuals_np(state, config.degree)
    t = tau[d - 1]
    excess = (N - 1).astype(float)
    slice_part = 2.0 * math.log(lam) * d.size + (
        float(np.sum(excess)) * math.log1p(-lam) if np.any(excess) else 0.0
    )
    gauss = np.sum(0.5 * np.log(t) - 0.5 * _LOG_2PI - 0.5 * t * r * r)
    prior = stats.beta.logpdf(lam, config.alpha, config.beta)
    prior += np.sum(stats.gamma.logpdf(tau, config.b1, scale=1.0 / config.b2))
    prior -= config.d * math.log(hi - lo)
    return float(slice_part + gauss + prior)


def init_chain(config: GsbrConfig, series: TimeSeries, rng) -> ChainState:
    """Starting state: OLS theta, prior draws for tau and the latents.

    Every slice starts at ``N_i = d_i = 1`` and lambda is drawn from its
    conditional given those slices, ``Be(alpha + 2M, beta)``. A prior draw
    can land near 0, and the first slice update would then draw about
    ``1 / lambda`` components per term.
    """
    gen = _gen(rng)
    x = np.asarray(series.values if isinstance(series, TimeSeries) else series, dtype=float)
    P = config.basis_size
    if x.ndim != 1 or x.size < P + 1:
        raise ParameterError(f"series needs at least {P + 1} values for degree {config.degree}")
    if not np.all(np.isfinite(x)):
        raise ParameterError("series contains non-finite values")
    lo, hi = config.trunc
    M = x.size + config.T
    lam = min(max(gen.beta(config.alpha + 2.0 * M, config.beta), TINY), K.LAMBDA_MAX)
    tau = np.array([max(gen.gamma(config.b1, 1.0 / config.b2), TINY)])
    latent = gen.uniform(lo, hi, config.n_latent)
    while np.any(latent <= lo):
        bad = latent <= lo
        latent[bad] = gen.uniform(lo, hi, int(bad.sum()))
    theta = np.zeros(P)
    if x.size >= 3:
        A = poly_features(np.column_stack([x[1:-1], x[:-2]]), config.degree)
        sol, _, rank, _ = np.linalg.lstsq(A, x[2:], rcond=None)
        if rank == P and np.all(np.isfinite(sol)):
            theta = sol
    if not np.any(theta):
        warnings.warn("degenerate design matrix; starting from theta = 0", RuntimeWarning, stacklevel=2)
    return ChainState(
        lam=lam,
        tau=tau,
        alloc_d=np.ones(M, dtype=np.int64),
        slice_N=np.ones(M, dtype=np.int64),
        theta=theta,
        z=np.concatenate([latent, x]),
        n_latent=config.n_latent,
        scales=np.full(config.n_latent, config.proposal_scale0),
    )


def lambda_conditional(state: ChainState, config: GsbrConfig) -> tuple:
    """Beta shapes ``(alpha + 2M, beta + sum(N_i - 1))`` of the lambda conditional."""
    M = state.slice_N.size
    return config.alpha + 2.0 * M, config.beta + float(np.sum(state.slice_N - 1))


def tau_conditional(state: ChainState, config: GsbrConfig) -> tuple:
    """Gamma shapes and rates of every precision up to ``max(slice_N)``.

    Component ``j`` gets ``(b1 + n_j / 2, b2 + S_j / 2)`` with ``n_j`` the
    number of terms allocated to it and ``S_j`` their residual sum of squares.
    """
    nstar = max(int(state.slice_N.max(initial=1)), 1)
    r = _residuals_np(state, config.degree)
    counts = np.bincount(state.alloc_d - 1, minlength=nstar)[:nstar].astype(float)
    ss = np.bincount(state.alloc_d - 1, weights=r * r, minlength=nstar)[:nstar]
    return config.b1 + 0.5 * counts, config.b2 + 0.5 * ss


def alloc_probabilities(tau, n_slice: int, resid: float) -> np.ndarray:
    """Probabilities of ``d = 1..n_slice`` given the slice and the residual."""
    tau = np.asarray(tau, dtype=float)[:n_slice]
    logw = 0.5 * np.log(tau) - 0.5 * tau * resid * resid
    w = np.exp(logw - logw.max())
    return w / w.sum()


def update_alloc_pairs(state: ChainState, config: GsbrConfig, rng):
    """Draw every ``N_i | d_i`` then every ``d_i | N_i``; grows ``tau`` lazily."""
    resid = K.residuals(state.z, state.theta, config.degree)
    state.tau = K.update_alloc(_gen(rng), state.lam, state.tau, state.alloc_d, state.slice_N,
                               resid, config.b1, config.b2)
    return state.alloc_d, state.slice_N


def update_tau(state: ChainState, config: GsbrConfig, rng) -> np.ndarray:
    """Conjugate Gamma draw of every precision up to ``max(slice_N)``."""
    resid = K.residuals(state.z, state.theta, config.degree)
    state.tau = K.update_tau(_gen(rng), state.alloc_d, state.slice_N, resid, config.b1, config.b2)
    return state.tau


def update_lambda(state: ChainState, config: GsbrConfig, rng) -> float:
    """Conjugate Beta draw of the stick-breaking parameter."""
    state.lam = float(K.update_lambda(_gen(rng), state.slice_N, config.alpha, config.beta))
    return state.lam


def theta_conditional(state: ChainState, config: GsbrConfig):
    """Mean and covariance of the Gaussian conditional of theta."""
    Q, b = K.theta_moments(state.z, state.alloc_d, state.tau, config.degree, config.jitter)
    try:
        L = np.linalg.cholesky(Q)
    except np.linalg.LinAlgError as exc:
        raise SingularModelError("weighted design matrix is not positive definite") from exc
    Linv = np.linalg.inv(L)
    cov = Linv.T @ Linv
    return cov @ b, cov


def update_theta(state: ChainState, config: GsbrConfig, rng) -> np.ndarray:
    """Gaussian draw of the map coefficients (weighted least squares posterior)."""
    if not K.update_theta(_gen(rng), state.z, state.alloc_d, state.tau, config.degree,
                          config.jitter, state.theta):
        raise SingularModelError("weighted design matrix is not positive definite")
    return state.theta


def latent_log_ratio(state: ChainState, config: GsbrConfig, j: int, value: float) -> float:
    """Log acceptance ratio for moving latent coordinate ``j`` to ``value``.

    ``-inf`` outside the restriction interval.
    """
    if not 0 <= j < state.n_latent:
        raise ParameterError(f"latent index {j} out of range")
    lo, hi = config.trunc
    if not (lo < value < hi):
        return -math.inf
    return float(K.latent_delta(state.z, state.theta, config.degree, state.alloc_d, state.tau,
                                int(j), float(value)))


def update_latent(state: ChainState, config: GsbrConfig, rng) -> np.ndarray:
    """One Metropolis pass over the latent coordinates at the current scales."""
    lo, hi = config.trunc
    K.update_latent(_gen(rng), state.z, state.theta, config.degree, state.alloc_d, state.tau,
                    lo, hi, state.scales, state.n_latent, state.acc_batch, state.acc_total,
                    state.prop_total, state.sweep >= config.burn_in)
    return state.latent_x


def _advance(state: ChainState, config: GsbrConfig, gen, n_sweeps: int, do_latent: bool = True):
    lo, hi = config.trunc
    status, lam, tau, sweep = K.run_sweeps(
        gen, state.lam, state.tau, state.alloc_d, state.slice_N, state.theta, state.z,
        state.n_latent, state.scales, state.acc_batch, state.acc_total, state.prop_total,
        state.sweep, int(n_sweeps), config.degree, lo, hi, config.alpha, config.beta,
        config.b1, config.b2, config.jitter, config.burn_in, config.adapt,
        config.target_accept, config.adapt_batch, do_latent,
    )
    state.lam, state.tau, state.sweep = float(lam), tau, int(sweep)
    if status != 0:
        raise SingularModelError(f"weighted design matrix not positive definite at sweep {sweep + 1}")


def gibbs_sweep(state: ChainState, config: GsbrConfig, rng, update_latents: bool = True) -> ChainState:
    """One full sweep; adapts proposal scales at batch boundaries during burn-in."""
    _advance(state, config, _gen(rng), 1, update_latents)
    return state


@dataclass
class ChainResult:
    """Retained draws of one chain plus diagnostics and the final state.

    Behaves like the list of :class:`PosteriorSample`.
    """

    samples: list
    diagnostics: dict
    state: ChainState
    config: GsbrConfig
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def initial_points(self) -> np.ndarray:
        return np.array([s.initial_point for s in self.samples]).reshape(-1, 2)

    def theta_mean(self) -> np.ndarray:
        return np.mean([s.theta for s in self.samples], axis=0)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "samples": [s.to_dict() for s in self.samples],
            "diagnostics": self.diagnostics,
            "meta": self.meta,
        }


def _diagnostics(state: ChainState, samples: Sequence[PosteriorSample], config: GsbrConfig) -> dict:
    prop = state.prop_total
    rate = np.where(prop > 0, state.acc_total / np.maximum(prop, 1), np.nan)
    lams = np.array([s.lam for s in samples])
    nstar = np.array([len(s.tau) for s in samples])
    out = {
        "sweeps": int(state.sweep),
        "n_samples": len(samples),
        "acceptance_rate": [None if math.isnan(v) else float(v) for v in rate],
        "proposal_scale": state.scales.tolist(),
        "n_star_final": int(state.tau.size),
    }
    if len(samples):
        out["n_star"] = {"max": int(nstar.max()), "mean": float(nstar.mean())}
        out["lambda"] = {
            "mean": float(lams.mean()),
            "sd": float(lams.std()),
            "min": float(lams.min()),
            "max": float(lams.max()),
        }
    return out


def _next_stop(sweep: int, config: GsbrConfig) -> int:
    if sweep < config.burn_in:
        stop = config.burn_in
    else:
        stop = sweep + config.thin - (sweep - config.burn_in) % config.thin
    return min(stop, config.iters)


def run_chain(
    config: GsbrConfig,
    series: TimeSeries,
    rng,
    *,
    state: Optional[ChainState] = None,
    samples: Optional[list] = None,
    checkpoint: Optional[os.PathLike] = None,
    checkpoint_every: int = 1000,
) -> ChainResult:
    """Run the chain to ``config.iters`` sweeps and keep every ``thin``-th draw after burn-in.

    Parameters
    ----------
    config : GsbrConfig
    series : TimeSeries
        Observed window ``x_{1:n}``.
    rng : RngStream or numpy.random.Generator
        Consumed in place.
    state, samples : optional
        Resume from an existing state and previously retained draws.
    checkpoint : path, optional
        If given, the chain (state, draws and RNG state) is written there
        roughly every ``checkpoint_every`` sweeps and at the end.
    """
    gen = _gen(rng)
    if state is None:
        state = init_chain(config, series, gen)
    samples = list(samples or [])
    last_ckpt = state.sweep
    while state.sweep < config.iters:
        stop = _next_stop(state.sweep, config)
        _advance(state, config, gen, stop - state.sweep)
        if state.sweep > config.burn_in and (state.sweep - config.burn_in) % config.thin == 0:
            samples.append(PosteriorSample.from_state(state, config.d))
        if checkpoint is not None and state.sweep - last_ckpt >= checkpoint_every:
            save_checkpoint(checkpoint, config, state, gen, samples)
            last_ckpt = state.sweep
    if checkpoint is not None:
        save_checkpoint(checkpoint, config, state, gen, samples)
    meta = dict(series.meta) if isinstance(series, TimeSeries) else {}
    return ChainResult(samples, _diagnostics(state, samples, config), state, config, meta)


def save_checkpoint(path, config: GsbrConfig, state: ChainState, rng, samples) -> None:
    """Write everything needed to continue the chain bit-exactly."""
    gen = _gen(rng)
    doc = {
        "config": config.to_dict(),
        "state": state.to_dict(),
        "rng_state": gen.bit_generator.state,
        "samples": [s.to_dict() for s in samples],
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True))
    os.replace(tmp, path)


def load_checkpoint(path):
    """Return ``(config, state, generator, samples)`` from a checkpoint file."""
    doc = json.loads(Path(path).read_text())
    config = GsbrConfig.from_dict(doc["config"])
    state = ChainState.from_dict(doc["state"])
    gen = np.random.Generator(np.random.PCG64())
    gen.bit_generator.state = doc["rng_state"]
    samples = [PosteriorSample.from_dict(s) for s in doc["samples"]]
    return config, state, gen, samples


def resume_chain(path, series: Optional[TimeSeries] = None, checkpoint=None) -> ChainResult:
    """Continue a checkpointed chain to completion."""
    config, state, gen, samples = load_checkpoint(path)
    if series is None:
        series = TimeSeries(state.obs_x.copy())
    return run_chain(config, series, gen, state=state, samples=samples, checkpoint=checkpoint)


def _noise_draw(gen, lam: float, tau: np.ndarray, config: GsbrConfig) -> float:
    k = 1 if lam >= 1.0 else int(gen.geometric(lam))
    t = tau[k - 1] if k <= tau.size else max(gen.gamma(config.b1, 1.0 / config.b2), TINY)
    if math.isinf(t):
        return 0.0
    return float(gen.normal(0.0, 1.0 / math.sqrt(t)))


def posterior_predict(source, config: GsbrConfig, rng, horizon: int = 0, history=None):
    """Predictive noise draw and optional forward path.

    Parameters
    ----------
    source : ChainState, ChainResult or sequence of PosteriorSample
        A sequence is sampled uniformly for ``(theta, lam, tau)``.
    horizon : int
        Number of forward steps ``x_{n+1..n+horizon}``.
    history : (x_{n-1}, x_n), optional
        Last two observations; taken from the chain state when available.

    Returns
    -------
    e : float
        Draw of the next noise term.
    path : ndarray, shape (horizon,)
        ``x_{n+j} = g(theta, x_{n+j-1}, x_{n+j-2}) + e_j`` with ``e_1 = e``.
    """
    if int(horizon) != horizon or horizon < 0:
        raise ParameterError(f"horizon must be a non-negative integer, got {horizon}")
    gen = _gen(rng)
    state = source.state if isinstance(source, ChainResult) else source
    if isinstance(state, ChainState):
        lam, tau, theta = state.lam, state.tau, state.theta
        if history is None:
            history = state.z[-2:]
    else:
        pool = list(source)
        if not pool:
            raise ParameterError("posterior_predict needs at least one sample")
        pick = pool[int(gen.integers(len(pool)))]
        lam, tau, theta = pick.lam, np.asarray(pick.tau, dtype=float), np.asarray(pick.theta)
    if np.asarray(tau).size == 0:
        tau = np.array([max(gen.gamma(config.b1, 1.0 / config.b2), TINY)])
    e = _noise_draw(gen, lam, np.asarray(tau, dtype=float), config)
    path = np.empty(int(horizon))
    if horizon:
        if history is None:
            raise ParameterError("history (x_{n-1}, x_n) is required for a forward path")
        older, newer = (float(v) for v in history)
        for j in range(int(horizon)):
            noise = e if j == 0 else _noise_draw(gen, lam, tau, config)
            x = K.gval(theta, config.degree, newer, older) + noise
            path[j] = x
            older, newer = newer, x
    return e, path
