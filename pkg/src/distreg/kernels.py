"""Base kernels on the sample space and outer kernels on mean embeddings.

The base kernel ``G`` acts on raw samples. The outer kernel ``K`` acts on mean
embeddings, but only through their ``H_G`` inner products, so it can be
evaluated from a 2x2 block of geometry without ever materialising an
embedding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from distreg.errors import GeometryError, InputError

BaseFamily = Literal["gaussian", "exponential"]
OuterFamily = Literal["gaussian_on_embedding", "linear_embedding"]

GEOMETRY_TOL = 1e-9


@dataclass(frozen=True)
class BaseKernelSpec:
    """Kernel ``G`` on ``R^d``.

    :param family: ``"gaussian"`` for ``exp(-|s-t|^2 / (2 sigma^2))`` or
        ``"exponential"`` for ``exp(-|s-t| / sigma)``
    :param bandwidth: ``sigma`` in input-space units
    :param dim: dimension ``d`` of the sample space
    """

    family: BaseFamily = "gaussian"
    bandwidth: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if self.family not in ("gaussian", "exponential"):
            raise InputError(f"unknown base kernel family {self.family!r}")
        if not self.bandwidth > 0:
            raise InputError(f"base bandwidth must be positive, got {self.bandwidth}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise InputError(f"dimension must be a positive integer, got {self.dim}")

    @property
    def gamma_sq(self) -> float:
        """``sup_s G(s, s)``; both families are translation invariant with ``G(s, s) = 1``."""
        return 1.0

    def pairwise(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Kernel matrix between the rows of ``s`` (m x d) and ``t`` (k x d)."""
        s = _as_points(s, self.dim)
        t = _as_points(t, self.dim)
        sq = (
            np.sum(s * s, axis=1)[:, None]
            + np.sum(t * t, axis=1)[None, :]
            - 2.0 * (s @ t.T)
        )
        np.maximum(sq, 0.0, out=sq)
        if self.family == "gaussian":
            return np.exp(-sq / (2.0 * self.bandwidth**2))
        return np.exp(-np.sqrt(sq) / self.bandwidth)


@dataclass(frozen=True)
class OuterKernelSpec:
    """Kernel ``K`` on mean embeddings.

    ``gaussian_on_embedding`` is ``exp(-|mu_1 - mu_2|^2_{H_G} / (2 tau^2))``;
    ``linear_embedding`` is ``<mu_1, mu_2>_{H_G}``. The Hoelder pair and the
    bound are derived from the family and never user supplied.
    """

    family: OuterFamily = "gaussian_on_embedding"
    bandwidth: float = 1.0
    gamma_sq: float = 1.0

    def __post_init__(self):
        if self.family not in ("gaussian_on_embedding", "linear_embedding"):
            raise InputError(f"unknown outer kernel family {self.family!r}")
        if self.family == "gaussian_on_embedding" and not self.bandwidth > 0:
            raise InputError(f"outer bandwidth must be positive, got {self.bandwidth}")
        if not self.gamma_sq > 0:
            raise InputError("gamma_sq must be positive")

    @property
    def kappa_sq(self) -> float:
        if self.family == "gaussian_on_embedding":
            return 1.0
        return self.gamma_sq

    @property
    def holder(self) -> tuple[float, float]:
        """Declared ``(alpha, L)``."""
        if self.family == "gaussian_on_embedding":
            return 1.0, 1.0 / self.bandwidth
        return 1.0, 1.0

    def from_geometry(self, inner_ij, inner_ii, inner_jj):
        """Vectorised evaluation from inner products; no validity checks."""
        inner_ij = np.asarray(inner_ij, dtype=float)
        if self.family == "linear_embedding":
            return inner_ij.copy() if inner_ij.ndim else float(inner_ij)
        sq = np.asarray(inner_ii) + np.asarray(inner_jj) - 2.0 * inner_ij
        sq = np.maximum(sq, 0.0)
        out = np.exp(-sq / (2.0 * self.bandwidth**2))
        return out if out.ndim else float(out)


def _as_points(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if dim == 1 else x.reshape(1, -1)
    if x.shape[1] != dim:
        raise InputError(f"expected points of dimension {dim}, got {x.shape[1]}")
    return x


def base_eval(spec: BaseKernelSpec, s, t) -> float:
    s = np.atleast_1d(np.asarray(s, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if s.shape != (spec.dim,) or t.shape != (spec.dim,):
        raise InputError(
            f"points must have dimension {spec.dim}, got {s.shape} and {t.shape}"
        )
    diff = s - t
    if spec.family == "gaussian":
        return math.exp(-float(diff @ diff) / (2.0 * spec.bandwidth**2))
    return math.exp(-math.sqrt(float(diff @ diff)) / spec.bandwidth)


def outer_eval_from_geometry(
    spec: OuterKernelSpec, inner_ij: float, inner_ii: float, inner_jj: float
) -> float:
    """Evaluate ``K(mu_i, mu_j)`` from the three ``H_G`` inner products.

    Raises :class:`GeometryError` if the block is not a valid 2x2 Gram matrix
    up to :data:`GEOMETRY_TOL`.
    """
    if inner_ii < -GEOMETRY_TOL or inner_jj < -GEOMETRY_TOL:
        raise GeometryError(
            f"negative self inner product ({inner_ii}, {inner_jj})"
        )
    if inner_ij**2 > max(inner_ii, 0.0) * max(inner_jj, 0.0) + GEOMETRY_TOL:
        raise GeometryError(
            f"Cauchy-Schwarz violated: {inner_ij}^2 > {inner_ii} * {inner_jj}"
        )
    return float(spec.from_geometry(inner_ij, inner_ii, inner_jj))
