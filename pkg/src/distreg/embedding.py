r"""Empirical kernel mean embeddings represented through their Gram geometry.

A bag :math:`\{x_i\}_{i=1}^N` stands for the empirical embedding
:math:`\hat\mu = \frac1N\sum_i G(x_i, \cdot)`; every quantity downstream is
built from the inner products

.. math::
    \langle \hat\mu_a, \hat\mu_b\rangle_{H_G} = \frac{1}{N_a N_b}\sum_{i,j} G(a_i, b_j).

Two engines compute these. ``direct`` evaluates every kernel pair. ``taylor``
applies only to the 1-D Gaussian base kernel and uses the exact expansion
:math:`e^{-(u-v)^2/2} = \sum_k \phi_k(u)\phi_k(v)` with
:math:`\phi_k(u) = e^{-u^2/2}u^k/\sqrt{k!}`, truncated at an order whose
tail is bounded by a Poisson survival probability below ``1e-16``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import pdtrc

from distreg.errors import InputError
from distreg.kernels import (
    GEOMETRY_TOL,
    BaseKernelSpec,
    OuterKernelSpec,
    outer_eval_from_geometry,
)

PSD_REL_TOL = 1e-8
NEG_DIST_WARN = -1e-9
TAYLOR_TAIL = 1e-16
TAYLOR_MAX_ORDER = 600
_BLOCK_ELEMS = 4_000_000


@dataclass
class Bag:
    """Second-stage sample drawn from one unobserved distribution."""

    samples: np.ndarray
    id: int = 0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s.reshape(-1, 1)
        if s.ndim != 2 or s.shape[0] < 1:
            raise InputError(f"bag {self.id} must be a non-empty N x d array")
        self.samples = s

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class GaussianParams:
    """A 1-D normal distribution ``N(mean, std^2)``."""

    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise InputError(f"std must be positive, got {self.std}")


@dataclass
class EmbeddingGram:
    inner: np.ndarray

    @property
    def n(self) -> int:
        return self.inner.shape[0]

    @property
    def diag(self) -> np.ndarray:
        return np.diag(self.inner).copy()


@dataclass
class OuterGram:
    k: np.ndarray
    spec: OuterKernelSpec = field(default_factory=OuterKernelSpec)

    @property
    def n(self) -> int:
        return self.k.shape[0]


def min_eig_ok(mat: np.ndarray, rel_tol: float = PSD_REL_TOL) -> bool:
    """PSD check used everywhere: ``lambda_min >= -rel_tol * trace``."""
    mat = np.asarray(mat, dtype=float)
    if mat.size == 0:
        return True
    lam = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    return bool(lam[0] >= -rel_tol * max(np.trace(mat), 0.0))


def _check_dims(bags: Sequence[Bag], spec: BaseKernelSpec) -> None:
    for b in bags:
        if b.dim != spec.dim:
            raise InputError(
                f"bag {b.id} has dimension {b.dim}, kernel expects {spec.dim}"
            )


def embed_inner(a: Bag, b: Bag, spec: BaseKernelSpec) -> float:
    """V-statistic inner product of two empirical embeddings (diagonal included)."""
    _check_dims([a, b], spec)
    return float(spec.pairwise(a.samples, b.samples).mean())


def embed_sq_dist(a: Bag, b: Bag, spec: BaseKernelSpec) -> float:
    """Squared MMD between the empirical measures, clamped at zero."""
    d2 = embed_inner(a, a, spec) + embed_inner(b, b, spec) - 2.0 * embed_inner(a, b, spec)
    if d2 < NEG_DIST_WARN:
        warnings.warn(f"squared embedding distance {d2:.3e} clamped to 0", RuntimeWarning)
    return max(d2, 0.0)


# ---------------------------------------------------------------------------
# Taylor feature engine (1-D Gaussian base kernel)


class GaussianTaylorFeatures:
    """Truncated Taylor features of the 1-D Gaussian kernel around ``center``."""

    def __init__(self, sigma: float, center: float, order: int):
        self.sigma = float(sigma)
        self.center = float(center)
        self.order = int(order)

    @classmethod
    def for_range(cls, sigma: float, lo: float, hi: float, tail: float = TAYLOR_TAIL):
        """Smallest order whose worst-case tail over ``[lo, hi]`` is below ``tail``.

        Returns ``None`` if that order exceeds :data:`TAYLOR_MAX_ORDER`.
        """
        center = 0.5 * (lo + hi)
        u_max = max(0.5 * (hi - lo) / sigma, 1e-3)
        lam = u_max * u_max
        # sum_{k>p} phi_k(u)^2 = P(Poisson(u^2) > p), increasing in |u|
        p = int(lam)
        while pdtrc(p, lam) >= tail:
            p += 1
            if p > TAYLOR_MAX_ORDER:
                return None
        return cls(sigma, center, p)

    def transform(self, x: np.ndarray) -> np.ndarray:
        u = (np.asarray(x, dtype=float).reshape(-1) - self.center) / self.sigma
        phi = np.empty((u.size, self.order + 1))
        phi[:, 0] = np.exp(-0.5 * u * u)
        for k in range(1, self.order + 1):
            np.multiply(phi[:, k - 1], u / math.sqrt(k), out=phi[:, k])
        return phi

    def mean_features(self, bags: Sequence[Bag]) -> np.ndarray:
        out = np.empty((len(bags), self.order + 1))
        max_pts = max(_BLOCK_ELEMS // (self.order + 1), 1)
        start = 0
        while start < len(bags):
            stop, pts = start, 0
            while stop < len(bags) and (stop == start or pts + bags[stop].size <= max_pts):
                pts += bags[stop].size
                stop += 1
            group = bags[start:stop]
            phi = self.transform(np.concatenate([b.samples[:, 0] for b in group]))
            offsets = np.cumsum([0] + [b.size for b in group[:-1]])
            sums = np.add.reduceat(phi, offsets, axis=0)
            out[start:stop] = sums / np.array([b.size for b in group], dtype=float)[:, None]
            start = stop
        return out


def _taylor_map(spec: BaseKernelSpec, *bag_lists: Sequence[Bag]):
    if spec.family != "gaussian" or spec.dim != 1:
        return None
    lo = min(float(b.samples.min()) for bags in bag_lists for b in bags)
    hi = max(float(b.samples.max()) for bags in bag_lists for b in bags)
    return GaussianTaylorFeatures.for_range(spec.bandwidth, lo, hi)


def _resolve(method: str, spec: BaseKernelSpec, *bag_lists):
    if method not in ("auto", "direct", "taylor"):
        raise InputError(f"unknown gram method {method!r}")
    if method == "direct":
        return None
    fmap = _taylor_map(spec, *bag_lists)
    if fmap is None and method == "taylor":
        raise InputError("taylor engine needs a 1-D gaussian base kernel and a bounded range")
    return fmap


# ---------------------------------------------------------------------------
# Direct engine


def _direct_cross(rows: Sequence[Bag], cols: Sequence[Bag], spec: BaseKernelSpec,
                  upper: bool = False) -> np.ndarray:
    """Row-bag by column-bag inner products; with ``upper`` only ``j >= i`` is filled."""
    out = np.zeros((len(rows), len(cols)))
    col_sizes = np.array([b.size for b in cols])
    for i, a in enumerate(rows):
        j0 = i if upper else 0
        j = j0
        while j < len(cols):
            # group column bags so one kernel block stays bounded
            k, pts = j, 0
            while k < len(cols) and (k == j or (pts + col_sizes[k]) * a.size <= _BLOCK_ELEMS):
                pts += col_sizes[k]
                k += 1
            block = spec.pairwise(a.samples, np.concatenate([c.samples for c in cols[j:k]]))
            offsets = np.concatenate([[0], np.cumsum(col_sizes[j:k - 1])])
            sums = np.add.reduceat(block.sum(axis=0), offsets)
            out[i, j:k] = sums / (a.size * col_sizes[j:k])
            j = k
    return out


def embedding_gram(bags: Sequence[Bag], spec: BaseKernelSpec, method: str = "auto") -> EmbeddingGram:
    """``n x n`` matrix of embedding inner products.

    ``method`` selects the engine: ``"direct"``, ``"taylor"`` or ``"auto"``
    (Taylor whenever the base kernel is a 1-D Gaussian).
    """
    bags = list(bags)
    if not bags:
        raise InputError("embedding_gram needs at least one bag")
    _check_dims(bags, spec)
    fmap = _resolve(method, spec, bags)
    if fmap is not None:
        feats = fmap.mean_features(bags)
        g = feats @ feats.T
    else:
        g = _direct_cross(bags, bags, spec, upper=True)
    g = np.triu(g) + np.triu(g, 1).T
    return EmbeddingGram(g)


def cross_geometry(test: Sequence[Bag], train: Sequence[Bag], spec: BaseKernelSpec,
                   method: str = "auto"):
    """Test-by-train inner products plus the self inner products of both sides.

    Returns ``(cross, test_self, train_self)``.
    """
    test, train = list(test), list(train)
    _check_dims(test, spec)
    _check_dims(train, spec)
    if not test:
        return np.zeros((0, len(train))), np.zeros(0), np.zeros(len(train))
    fmap = _resolve(method, spec, test, train)
    if fmap is not None:
        ft, fr = fmap.mean_features(test), fmap.mean_features(train)
        return ft @ fr.T, np.einsum("ij,ij->i", ft, ft), np.einsum("ij,ij->i", fr, fr)
    cross = _direct_cross(test, train, spec)
    return cross, self_inner(test, spec, "direct"), self_inner(train, spec, "direct")


def self_inner(bags: Sequence[Bag], spec: BaseKernelSpec, method: str = "auto") -> np.ndarray:
    """Diagonal ``<mu_hat_j, mu_hat_j>`` without forming the full Gram."""
    bags = list(bags)
    _check_dims(bags, spec)
    fmap = _resolve(method, spec, bags) if bags else None
    if fmap is not None:
        f = fmap.mean_features(bags)
        return np.einsum("ij,ij->i", f, f)
    return np.array([_direct_cross([b], [b], spec)[0, 0] for b in bags])


def outer_gram(eg: EmbeddingGram, spec: OuterKernelSpec) -> OuterGram:
    inner = np.asarray(eg.inner, dtype=float)
    d = np.diag(inner)
    if spec.family == "linear_embedding":
        return OuterGram(inner.copy(), spec)
    dp = np.maximum(d, 0.0)
    bad = (inner**2 > np.outer(dp, dp) + GEOMETRY_TOL) | (d[:, None] < -GEOMETRY_TOL)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        outer_eval_from_geometry(spec, inner[i, j], d[i], d[j])  # raises GeometryError
    sq = d[:, None] + d[None, :] - 2.0 * inner
    if sq.min() < NEG_DIST_WARN:
        warnings.warn(f"squared embedding distance {sq.min():.3e} clamped to 0", RuntimeWarning)
    k = spec.from_geometry(inner, d[:, None], d[None, :])
    np.fill_diagonal(k, 1.0)
    return OuterGram(k, spec)


def outer_cross(cross: np.ndarray, left_self: np.ndarray, right_self: np.ndarray,
                spec: OuterKernelSpec) -> np.ndarray:
    """Outer kernel between two sets of embeddings given their geometry."""
    return np.asarray(
        spec.from_geometry(cross, np.asarray(left_self)[:, None], np.asarray(right_self)[None, :])
    )


# ---------------------------------------------------------------------------
# Closed-form population embeddings of 1-D Gaussians


def analytic_gauss_inner(p: GaussianParams, q: GaussianParams, sigma: float) -> float:
    r"""Population :math:`\langle\mu_P, \mu_Q\rangle_{H_G}` for 1-D Gaussians.

    Equal to :math:`\sigma/\sqrt{v}\,\exp(-(m_1-m_2)^2/(2v))` with
    :math:`v = \sigma^2 + s_1^2 + s_2^2`.
    """
    if not sigma > 0:
        raise InputError(f"bandwidth must be positive, got {sigma}")
    return float(analytic_inner_matrix([p.mean], [p.std], [q.mean], [q.std], sigma)[0, 0])


def analytic_inner_matrix(m_a, s_a, m_b, s_b, sigma: float) -> np.ndarray:
    """Vectorised :func:`analytic_gauss_inner` over two parameter lists.

    Scales of zero are allowed here and denote point masses.
    """
    m_a, s_a = np.asarray(m_a, float), np.asarray(s_a, float)
    m_b, s_b = np.asarray(m_b, float), np.asarray(s_b, float)
    if np.any(s_a < 0) or np.any(s_b < 0) or not sigma > 0:
        raise InputError("scales must be nonnegative and bandwidth positive")
    v = sigma**2 + s_a[:, None] ** 2 + s_b[None, :] ** 2
    return sigma / np.sqrt(v) * np.exp(-((m_a[:, None] - m_b[None, :]) ** 2) / (2.0 * v))


def population_sq_error(bag: Bag, p: GaussianParams, sigma: float,
                        spec: BaseKernelSpec | None = None) -> float:
    """``|mu_hat - mu_P|^2`` for a 1-D bag against its generating Gaussian."""
    spec = spec or BaseKernelSpec("gaussian", sigma, 1)
    x = bag.samples[:, 0]
    self_term = float(self_inner([bag], spec)[0])
    cross = analytic_inner_matrix(x, np.zeros_like(x), [p.mean], [p.std], sigma).mean()
    pop = analytic_gauss_inner(p, p, sigma)
    return max(self_term - 2.0 * cross + pop, 0.0)


# ---------------------------------------------------------------------------
# Bag file format


def write_bags(path, bags: Iterable[Bag]) -> None:
    bags = list(bags)
    d = bags[0].dim if bags else 1
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bag_id", "sample_index"] + [f"coord_{c}" for c in range(d)])
        for b in bags:
            for i, row in enumerate(b.samples):
                w.writerow([b.id, i] + [format(float(v), ".17g") for v in row])


def read_bags(path) -> list[Bag]:
    """Parse the bag CSV; rows of one bag must appear with consecutive indices."""
    path = Path(path)
    rows: dict[int, list[list[float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["bag_id", "sample_index"] or len(header) < 3:
            raise InputError(f"{path}:1: expected header bag_id,sample_index,coord_0,...")
        d = len(header) - 2
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != d + 2:
                raise InputError(f"{path}:{lineno}: expected {d + 2} fields, got {len(rec)}")
            try:
                bid, idx = int(rec[0]), int(rec[1])
                coords = [float(v) for v in rec[2:]]
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
            samples = rows.setdefault(bid, [])
            if idx != len(samples):
                raise InputError(f"{path}:{lineno}: bag {bid} sample_index {idx} out of order")
            samples.append(coords)
    return [Bag(np.array(v), id=k) for k, v in sorted(rows.items())]
