"""Fusion of heterogeneous classifier outputs into full-universe soft labels."""

from .ce import CESolverConfig, ce_gradient, ce_objective, fuse_ce, fuse_ce_batch
from .common import BatchFusion, overlap_components
from .mf_logit import (
    LogitMFConfig,
    eliminate_c_objective,
    fuse_mf_logit,
    fuse_mf_logit_batch,
    mfl_objective,
    optimal_shift,
)
from .mf_prob import ALSConfig, fuse_mf_prob, fuse_mf_prob_batch, mfp_objective
from .sd import fuse_sd, fuse_sd_batch

FUSION_METHODS = ("sd", "ce", "mf_p", "mf_lv", "mf_lf")


def fuse_batch(method: str, batch, lam: float = 0.01, ce_config=None, als_config=None,
               mf_config=None) -> BatchFusion:
    """Dispatch a whole :class:`~hetfuse.labels.ProfileBatch` to one fusion method."""
    if method == "sd":
        return fuse_sd_batch(batch)
    if method == "ce":
        return fuse_ce_batch(batch, ce_config or CESolverConfig())
    if method == "mf_p":
        return fuse_mf_prob_batch(batch, als_config or ALSConfig())
    if method in ("mf_lv", "mf_lf"):
        base = mf_config or LogitMFConfig(lam=lam)
        variant = "free_v" if method == "mf_lv" else "fixed_v"
        cfg = LogitMFConfig(lam=base.lam, rmse_tol=base.rmse_tol, max_iters=base.max_iters,
                            variant=variant, descent=base.descent)
        return fuse_mf_logit_batch(batch, cfg)
    raise ValueError(f"unknown fusion method {method!r}; expected one of {FUSION_METHODS}")


__all__ = [
    "ALSConfig", "BatchFusion", "CESolverConfig", "FUSION_METHODS", "LogitMFConfig",
    "ce_gradient", "ce_objective", "eliminate_c_objective", "fuse_batch", "fuse_ce",
    "fuse_ce_batch", "fuse_mf_logit", "fuse_mf_logit_batch", "fuse_mf_prob",
    "fuse_mf_prob_batch", "fuse_sd", "fuse_sd_batch", "mfl_objective", "mfp_objective",
    "optimal_shift", "overlap_components",
]
