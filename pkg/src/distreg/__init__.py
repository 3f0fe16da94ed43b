"""Two-stage distribution regression with kernel mean embeddings.

Tail-averaged mini-batch SGD, tail-averaged gradient descent and kernel
ridge regression on empirical mean embeddings, with the parameter schedules
and diagnostics needed to check learning rates on synthetic data.
"""

from distreg.embedding import (
    Bag,
    EmbeddingGram,
    GaussianParams,
    OuterGram,
    analytic_gauss_inner,
    embed_inner,
    embed_sq_dist,
    embedding_gram,
    outer_gram,
)
from distreg.estimators import FittedModel, SgdConfig, gd_fit, krr_fit, predict, sgd_fit
from distreg.kernels import BaseKernelSpec, OuterKernelSpec, base_eval, outer_eval_from_geometry
from distreg.schedules import ScheduleInput, ScheduleSpec, make_schedule, theoretical_envelope

__version__ = "0.1.0"

__all__ = [
    "Bag",
    "BaseKernelSpec",
    "EmbeddingGram",
    "FittedModel",
    "GaussianParams",
    "OuterGram",
    "OuterKernelSpec",
    "ScheduleInput",
    "ScheduleSpec",
    "SgdConfig",
    "analytic_gauss_inner",
    "base_eval",
    "embed_inner",
    "embed_sq_dist",
    "embedding_gram",
    "gd_fit",
    "krr_fit",
    "make_schedule",
    "outer_eval_from_geometry",
    "outer_gram",
    "predict",
    "sgd_fit",
    "theoretical_envelope",
]
