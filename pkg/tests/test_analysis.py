import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_bags
from distreg.analysis import (
    PopulationGeometry,
    RateReport,
    analytic_geometry,
    effective_dimension,
    excess_risk,
    fit_rate,
    holder_estimate,
    holder_pairs,
    two_stage_gap,
)
from distreg.embedding import (
    Bag,
    GaussianParams,
    OuterGram,
    cross_geometry,
    embed_inner,
    embedding_gram,
    outer_gram,
    self_inner,
)
from distreg.errors import DegenerateError, GeometryError, InputError
from distreg.estimators import FittedModel, TrainGeometry, krr_fit, predict
from distreg.kernels import BaseKernelSpec, OuterKernelSpec, outer_eval_from_geometry
from distreg.synth import LabeledBagSet, MetaConfig, fresh_test_set, sample_meta

BASE = BaseKernelSpec("gaussian", 1.0, 1)
OUTER = OuterKernelSpec("gaussian_on_embedding", 0.5)


def labeled(bags, true_f):
    n = len(bags)
    return LabeledBagSet(bags, np.zeros(n), [GaussianParams(0.0, 1.0)] * n, true_f)


# --- excess risk -----------------------------------------------------------


def _fitted(n=50, seed=0):
    cfg = MetaConfig(n=n, N=40, seed=seed)
    train = sample_meta(cfg, BASE, OUTER)
    test = fresh_test_set(cfg, 30, 60, seed + 100, BASE, OUTER)
    k = outer_gram(embedding_gram(train.bags, BASE), OUTER)
    geo = TrainGeometry(train.bags, self_inner(train.bags, BASE), BASE)
    return krr_fit(k, train.y, 1e-3, geometry=geo), train, test


def test_excess_risk_of_zero_model_is_mean_square():
    rng = np.random.default_rng(0)
    bags = random_bags(rng, 4)
    geo = TrainGeometry(bags, self_inner(bags, BASE), BASE)
    model = FittedModel(np.zeros(4), "krr", {}, OUTER, geometry=geo)
    test = labeled(random_bags(rng, 5), np.full(5, 0.7))
    assert excess_risk(model, test) == pytest.approx(0.49, abs=1e-15)


def test_excess_risk_zero_for_exact_model():
    model, _, test = _fitted()
    exact = labeled(test.bags, predict(model, test.bags))
    assert excess_risk(model, exact) == 0.0


def test_excess_risk_matches_naive_loop():
    model, train, test = _fitted(n=50, seed=1)
    total = 0.0
    for t, f in zip(test.bags, test.true_f):
        pred = 0.0
        for a, b in zip(model.alpha, train.bags):
            pred += a * outer_eval_from_geometry(
                OUTER, embed_inner(t, b, BASE), embed_inner(t, t, BASE), embed_inner(b, b, BASE))
        total += (pred - f) ** 2
    assert excess_risk(model, test) == pytest.approx(total / len(test), abs=1e-12)


def test_excess_risk_permutation_invariant():
    model, _, test = _fitted(seed=2)
    perm = np.random.default_rng(3).permutation(len(test))
    shuffled = LabeledBagSet([test.bags[i] for i in perm], test.y[perm],
                             [test.true_params[i] for i in perm], test.true_f[perm])
    assert excess_risk(model, shuffled) == pytest.approx(excess_risk(model, test), rel=1e-13)


def test_excess_risk_needs_test_points():
    model, _, _ = _fitted()
    with pytest.raises(InputError):
        excess_risk(model, labeled([], np.zeros(0)))


# --- rate fitting ----------------------------------------------------------


def test_exact_power_law():
    ns = [64, 128, 256, 512]
    fit = fit_rate([(n, 3.0 * n**-0.5) for n in ns])
    assert fit.slope == pytest.approx(-0.5, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)
    assert fit.residual < 1e-12


def test_constant_risk():
    assert fit_rate([(n, 0.2) for n in (10, 20, 40)]).slope == pytest.approx(0.0, abs=1e-12)


def test_noisy_power_law():
    rng = np.random.default_rng(0)
    ns = [2**k for k in range(6, 13)]
    fit = fit_rate([(n, n ** (-1 / 3) * rng.uniform(0.9, 1.1)) for n in ns])
    assert abs(fit.slope + 1 / 3) <= 0.05


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(1e-6, 10.0), min_size=3, max_size=8),
    st.floats(1e-3, 1e3),
)
def test_fit_rate_scale_changes_only_intercept(risks, c):
    pts = [(2.0**k, r) for k, r in enumerate(risks, start=3)]
    a = fit_rate(pts)
    b = fit_rate([(n, c * r) for n, r in pts])
    assert b.slope == pytest.approx(a.slope, abs=1e-9)
    assert b.intercept == pytest.approx(a.intercept + math.log(c), abs=1e-9)


@pytest.mark.parametrize("pts", [[(1, 1.0), (2, 0.5)], [(1, 1.0), (2, 0.0), (4, 0.1)]])
def test_fit_rate_rejects_bad_points(pts):
    with pytest.raises(InputError):
        fit_rate(pts)


def test_rate_report_csv():
    report = RateReport.from_risks({256: [0.2, 0.3], 64: [1.0, 1.2], 128: [0.5]}, -0.25,
                                   schedules=[{"n": 64}])
    lines = report.to_csv().splitlines()
    assert lines[0] == "n,trials,mean_risk,std_risk"
    assert [l.split(",")[0] for l in lines[1:4]] == ["64", "128", "256"]
    assert lines[2] == "128,1,0.5,0"
    footer = json.loads(lines[4][2:])
    assert footer["slope"] == pytest.approx(report.slope)
    assert footer["theoretical_exponent"] == -0.25
    assert report.risk_at(64) == pytest.approx(1.1)


# --- effective dimension ---------------------------------------------------


def test_effective_dimension_identity():
    n = 7
    assert effective_dimension(n * np.eye(n), 1.0) == pytest.approx(n / 2)


def test_effective_dimension_limits():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(8, 3))
    k = x @ x.T
    assert effective_dimension(k, 1e12) < 1e-9
    assert effective_dimension(k, 1e-9) == pytest.approx(3.0, abs=1e-5)


@pytest.mark.parametrize("seed", range(5))
def test_effective_dimension_direct_solve(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(6, 6))
    k = x @ x.T
    for lam in (1e-3, 0.1, 1.0, 10.0):
        s = k / 6
        direct = np.trace(np.linalg.solve(s + lam * np.eye(6), s))
        assert effective_dimension(OuterGram(k), lam) == pytest.approx(direct, abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_effective_dimension_monotone_and_bounded(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, rng.integers(1, n + 1)))
    k = x @ x.T
    lams = np.logspace(-3, 3, 13)
    vals = [effective_dimension(k, lam) for lam in lams]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    tr = np.trace(k) / n
    assert all(v <= tr / lam * (1 + 1e-12) for v, lam in zip(vals, lams))


def test_effective_dimension_rejects_indefinite():
    with pytest.raises(GeometryError):
        effective_dimension(np.diag([1.0, -1.0]), 0.1)
    with pytest.raises(InputError):
        effective_dimension(np.eye(2), 0.0)


# --- Hoelder ---------------------------------------------------------------


def test_holder_gaussian_certificate():
    bags = random_bags(np.random.default_rng(2), 40)
    for tau in (0.3, 1.0, 2.0):
        outer = OuterKernelSpec("gaussian_on_embedding", tau)
        g, h = holder_pairs(embedding_gram(bags, BASE), outer, 2000, seed=1)
        assert np.all(h <= g / tau + 1e-9)
        fit = holder_estimate(bags, BASE, outer, pairs=500)
        assert math.isfinite(fit.alpha) and math.isfinite(fit.L)


def test_holder_linear_is_isometry():
    bags = random_bags(np.random.default_rng(3), 20)
    fit = holder_estimate(bags, BASE, OuterKernelSpec("linear_embedding"), pairs=300)
    assert fit.alpha == pytest.approx(1.0, abs=1e-9)
    assert fit.L == pytest.approx(1.0, abs=1e-9)


def test_holder_filters_duplicates():
    bags = random_bags(np.random.default_rng(4), 5)
    bags = bags + [Bag(b.samples) for b in bags]
    fit = holder_estimate(bags, BASE, OUTER, pairs=400)
    assert math.isfinite(fit.alpha) and math.isfinite(fit.L)


def test_holder_degenerate():
    b = Bag([[0.1], [0.5]])
    with pytest.raises(DegenerateError):
        holder_estimate([b, Bag(b.samples)], BASE, OUTER, pairs=10)
    with pytest.raises(InputError):
        holder_estimate([b], BASE, OUTER)


# --- two-stage gap ---------------------------------------------------------

KRR = {"lam": 1e-2}


def _gap(N, seed, n=60):
    cfg = MetaConfig(n=n, N=N, seed=seed)
    train = sample_meta(cfg, BASE, OUTER)
    test = fresh_test_set(cfg, 100, 2048, seed + 10**6, BASE, OUTER)
    return two_stage_gap(train, test, BASE, OUTER, "krr", KRR), train, test


@pytest.mark.parametrize("seed", range(3))
def test_gap_vanishes_with_large_bags(seed):
    (emp, pop), _, _ = _gap(4096, seed)
    assert abs(emp - pop) <= 0.10 * pop


def test_tiny_bags_hurt():
    wins = sum(emp > pop for (emp, pop), _, _ in (_gap(2, s) for s in range(50)))
    assert wins >= 45


def test_identical_geometry_gives_identical_risks():
    (_, _), train, test = _gap(30, 3)
    eg = embedding_gram(train.bags, BASE)
    cross, t_self, _ = cross_geometry(test.bags, train.bags, BASE)
    pop = PopulationGeometry(eg.inner, cross, t_self)
    emp, same = two_stage_gap(train, test, BASE, OUTER, "gd", {"eta": 0.2, "iterations": 50}, pop)
    assert emp == same


def test_analytic_geometry_shapes():
    (_, _), train, test = _gap(5, 4, n=7)
    geo = analytic_geometry(train, test, 1.0)
    assert geo.train_inner.shape == (7, 7)
    assert geo.test_cross.shape == (100, 7)
    np.testing.assert_allclose(geo.test_self, 1 / np.sqrt(1 + 2 * test.stds**2), rtol=1e-14)
