"""Risk evaluation and diagnostics for fitted two-stage models."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from distreg.embedding import (
    PSD_REL_TOL,
    Bag,
    OuterGram,
    cross_geometry,
    embedding_gram,
    outer_cross,
    outer_gram,
    EmbeddingGram,
)
from distreg.errors import DegenerateError, DistRegError, GeometryError, InputError
from distreg.estimators import (
    FittedModel,
    SgdConfig,
    TrainGeometry,
    gd_fit,
    krr_fit,
    predict,
    predict_cross,
    sgd_fit,
)
from distreg.kernels import BaseKernelSpec, OuterKernelSpec
from distreg.synth import LabeledBagSet


def risk_from_predictions(pred, true_f) -> float:
    pred = np.asarray(pred, dtype=float)
    true_f = np.asarray(true_f, dtype=float)
    if pred.size == 0:
        raise InputError("excess risk needs a non-empty test set")
    d = pred - true_f
    return float(d @ d / d.size)


def excess_risk(model: FittedModel, test: LabeledBagSet, base: BaseKernelSpec | None = None) -> float:
    """Monte Carlo estimate of ``|h - f_rho|^2`` in ``L^2`` against noise-free targets."""
    if len(test) == 0:
        raise InputError("excess risk needs a non-empty test set")
    return risk_from_predictions(predict(model, test.bags, base), test.true_f)


class RateFit(NamedTuple):
    slope: float
    intercept: float
    residual: float


def fit_rate(points: Sequence[tuple[float, float]]) -> RateFit:
    """Least-squares line through ``(log n, log risk)``; residual is the max abs deviation."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise InputError("fit_rate needs at least 3 (n, risk) points")
    if np.any(pts[:, 1] <= 0) or np.any(pts[:, 0] <= 0):
        raise InputError("fit_rate needs positive sample sizes and risks")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = float(np.max(np.abs(y - design @ np.array([slope, intercept]))))
    return RateFit(float(slope), float(intercept), resid)


def effective_dimension(k: OuterGram | np.ndarray, lam: float) -> float:
    """``sum_i s_i / (s_i + lam)`` over the eigenvalues ``s_i`` of ``K / n``."""
    if not lam > 0:
        raise InputError(f"lambda must be positive, got {lam}")
    kmat = np.asarray(k.k if isinstance(k, OuterGram) else k, dtype=float)
    n = kmat.shape[0]
    try:
        s = np.linalg.eigvalsh(0.5 * (kmat + kmat.T) / n)
    except np.linalg.LinAlgError as exc:
        raise DistRegError(f"eigendecomposition failed: {exc}") from None
    tol = PSD_REL_TOL * max(float(np.trace(kmat)) / n, 0.0)
    if s[0] < -tol:
        raise GeometryError(f"Gram has eigenvalue {s[0]:.3e} below -{tol:.1e}")
    s = np.clip(s, 0.0, None)
    return float(np.sum(s / (s + lam)))


class HolderFit(NamedTuple):
    alpha: float
    L: float


def holder_pairs(eg: EmbeddingGram, outer: OuterKernelSpec, pairs: int, seed: int,
                 min_dist: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Sample index pairs and return ``(g, h)``: embedding and ``H_K`` distances.

    Pairs whose embeddings coincide (``g <= min_dist``) are dropped.
    """
    inner = eg.inner
    n = inner.shape[0]
    if n < 2:
        raise InputError("need at least two bags")
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, size=pairs)
    j = (i + rng.integers(1, n, size=pairs)) % n
    d = np.diag(inner)
    g2 = np.maximum(d[i] + d[j] - 2.0 * inner[i, j], 0.0)
    k = outer_gram(eg, outer).k
    kd = np.diag(k)
    h2 = np.maximum(kd[i] + kd[j] - 2.0 * k[i, j], 0.0)
    g, h = np.sqrt(g2), np.sqrt(h2)
    keep = g > min_dist
    return g[keep], h[keep]


def holder_estimate(bags: Sequence[Bag], base: BaseKernelSpec, outer: OuterKernelSpec,
                    pairs: int = 1000, seed: int = 0) -> HolderFit:
    """Empirical Hoelder exponent and constant of ``mu -> K(mu, .)``.

    The exponent is the slope of ``log h`` on ``log g``; the constant is the
    smallest ``L`` with ``h <= L g^alpha`` over the sampled pairs.
    """
    if len(bags) < 2:
        raise InputError("holder_estimate needs at least two bags")
    g, h = holder_pairs(embedding_gram(bags, base), outer, pairs, seed)
    if g.size == 0:
        raise DegenerateError("all sampled pairs have coincident embeddings")
    ok = h > 0
    lg, lh = np.log(g[ok]), np.log(h[ok])
    if lg.size >= 2 and np.ptp(lg) > 1e-12:
        alpha = float(np.polyfit(lg, lh, 1)[0])
    else:
        alpha = 1.0
    L = float(np.max(h / g**alpha))
    return HolderFit(alpha, L)


# ---------------------------------------------------------------------------
# First-stage versus second-stage comparison


@dataclass
class PopulationGeometry:
    """Geometry standing in for the population embeddings on both sides."""

    train_inner: np.ndarray
    test_cross: np.ndarray
    test_self: np.ndarray


def analytic_geometry(train: LabeledBagSet, test: LabeledBagSet, sigma: float) -> PopulationGeometry:
    return PopulationGeometry(
        train.population_inner(sigma),
        test.population_inner(sigma, train),
        np.diag(test.population_inner(sigma)).copy(),
    )


def fit_estimator(k: OuterGram, y, estimator: str, params: dict,
                  geometry: TrainGeometry | None = None) -> FittedModel:
    if estimator == "krr":
        return krr_fit(k, y, params["lam"], geometry=geometry)
    if estimator == "gd":
        return gd_fit(k, y, params["eta"], params["iterations"], params.get("tail", "paper_tail"),
                      geometry=geometry)
    if estimator == "sgd":
        return sgd_fit(k, y, SgdConfig(**params), geometry=geometry)
    raise InputError(f"unknown estimator {estimator!r}")


def two_stage_gap(train: LabeledBagSet, test: LabeledBagSet, base: BaseKernelSpec,
                  outer: OuterKernelSpec, estimator: str, params: dict,
                  population: PopulationGeometry | None = None) -> tuple[float, float]:
    """Risk of the same learner on empirical versus population embeddings.

    Returns ``(risk_empirical, risk_population)``. By default the population
    side uses closed-form Gaussian embeddings for train and test alike, so
    the difference isolates the second-stage sampling error.
    """
    eg = embedding_gram(train.bags, base)
    k_emp = outer_gram(eg, outer)
    m_emp = fit_estimator(k_emp, train.y, estimator, params)
    cross, t_self, _ = cross_geometry(test.bags, train.bags, base)
    pred_emp = predict_cross(m_emp, outer_cross(cross, t_self, eg.diag, outer))

    pop = population or analytic_geometry(train, test, base.bandwidth)
    k_pop = outer_gram(EmbeddingGram(pop.train_inner), outer)
    m_pop = fit_estimator(k_pop, train.y, estimator, params)
    kc = outer_cross(pop.test_cross, pop.test_self, np.diag(pop.train_inner), outer)
    pred_pop = predict_cross(m_pop, kc)
    return risk_from_predictions(pred_emp, test.true_f), risk_from_predictions(pred_pop, test.true_f)


# ---------------------------------------------------------------------------
# Rate reports


@dataclass
class RatePoint:
    n: int
    mean_risk: float
    std_risk: float
    trials: int


@dataclass
class RateReport:
    points: list[RatePoint]
    slope: float
    intercept: float
    residual: float
    theoretical_exponent: float
    schedules: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_risks(cls, risks: dict[int, Sequence[float]], theoretical_exponent: float,
                   schedules: list[dict] | None = None, **extra) -> "RateReport":
        points = []
        for n in sorted(risks):
            r = np.asarray(risks[n], dtype=float)
            if r.size < 1 or np.any(r < 0):
                raise InputError(f"invalid risks at n={n}")
            std = float(r.std(ddof=1)) if r.size > 1 else 0.0
            points.append(RatePoint(int(n), float(r.mean()), std, int(r.size)))
        fit = fit_rate([(p.n, p.mean_risk) for p in points])
        return cls(points, fit.slope, fit.intercept, fit.residual, theoretical_exponent,
                   schedules or [], dict(extra))

    def risk_at(self, n: int) -> float:
        for p in self.points:
            if p.n == n:
                return p.mean_risk
        raise KeyError(n)

    def footer(self) -> dict:
        out = {
            "slope": self.slope,
            "intercept": self.intercept,
            "max_residual": self.residual,
            "theoretical_exponent": self.theoretical_exponent,
            "theoretical_squared_exponent": 2.0 * self.theoretical_exponent,
        }
        out.update(self.extra)
        return out

    def to_csv(self) -> str:
        lines = ["n,trials,mean_risk,std_risk"]
        for p in self.points:
            lines.append(f"{p.n},{p.trials},{p.mean_risk:.17g},{p.std_risk:.17g}")
        lines.append("# " + json.dumps(self.footer(), sort_keys=True, default=_json_float))
        return "\n".join(lines) + "\n"


def _json_float(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(type(x))


def summarize(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    return float(v.mean()), (float(v.std(ddof=1)) if v.size > 1 else 0.0)
