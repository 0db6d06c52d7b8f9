"""Geometric stick-breaking reconstruction sampler."""
from .config import PROFILES, GsbrConfig
from .sampler import (
    ChainResult,
    alloc_probabilities,
    gibbs_sweep,
    init_chain,
    lambda_conditional,
    latent_log_ratio,
    load_checkpoint,
    log_joint,
    posterior_predict,
    resume_chain,
    run_chain,
    save_checkpoint,
    tau_conditional,
    theta_conditional,
    update_alloc_pairs,
    update_lambda,
    update_latent,
    update_tau,
    update_theta,
)
from .state import ChainState, PosteriorSample

__all__ = [
    "PROFILES",
    "GsbrConfig",
    "ChainState",
    "PosteriorSample",
    "ChainResult",
    "init_chain",
    "lambda_conditional",
    "tau_conditional",
    "alloc_probabilities",
    "log_joint",
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
