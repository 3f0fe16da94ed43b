"""Two-stage learners in coefficient form.

Every iterate lives in ``span{K(mu_hat_j, .)}``, so a function is stored as a
coefficient vector ``alpha`` with ``h = sum_j alpha_j K(mu_hat_j, .)`` and
``h(mu_hat_i) = (K alpha)_i``. The SGD step on a mini-batch ``j_1..j_b``

    alpha <- alpha - (eta / b) * sum_i ((K alpha)_{j_i} - y_{j_i}) e_{j_i}

is the coefficient image of the functional recursion, and full-batch GD is
the same step with the batch replaced by every index and ``b = n``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Literal, Sequence

import numpy as np
import scipy.linalg

from distreg.embedding import Bag, OuterGram, cross_geometry, outer_cross, self_inner
from distreg.errors import ConditioningError, ConfigError, DivergenceError, InputError
from distreg.kernels import BaseKernelSpec, OuterKernelSpec

Tail = Literal["paper_tail", "full_average", "last_iterate"]
Sampling = Literal["with_replacement", "full_batch_deterministic"]

DIVERGENCE_LIMIT = 1e12
MODEL_FORMAT = "distreg-model 1"


@dataclass
class SgdConfig:
    eta: float
    batch: int = 1
    iterations: int = 100
    seed: int = 0
    sampling: Sampling = "with_replacement"
    tail: Tail = "paper_tail"

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError(f"step size must be positive, got {self.eta}")
        if self.batch < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch}")
        if self.iterations < 2:
            raise ConfigError(f"need at least 2 iterations, got {self.iterations}")
        if self.sampling not in ("with_replacement", "full_batch_deterministic"):
            raise ConfigError(f"unknown sampling {self.sampling!r}")
        _check_tail(self.tail)


@dataclass
class TrainGeometry:
    """What prediction needs from the training side."""

    bags: list[Bag]
    self_inner: np.ndarray
    base: BaseKernelSpec


@dataclass
class FittedModel:
    alpha: np.ndarray
    estimator: str
    config: dict
    outer: OuterKernelSpec
    passes: int = 0
    geometry: TrainGeometry | None = None
    trajectory: list[np.ndarray] | None = None

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    def rkhs_norm_sq(self, k: np.ndarray) -> float:
        return float(self.alpha @ k @ self.alpha)


def _check_tail(tail: str) -> None:
    if tail not in ("paper_tail", "full_average", "last_iterate"):
        raise ConfigError(f"unknown tail mode {tail!r}")


def tail_window(T: int, tail: Tail = "paper_tail") -> tuple[int, int]:
    """Inclusive range of iterate indices averaged into the output."""
    if tail == "paper_tail":
        return T // 2 + 1, T
    if tail == "full_average":
        return 1, T
    return T, T


def _validate(k: OuterGram, y) -> tuple[np.ndarray, np.ndarray]:
    kmat = np.asarray(k.k, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if kmat.ndim != 2 or kmat.shape[0] != kmat.shape[1]:
        raise InputError(f"Gram must be square, got {kmat.shape}")
    if y.shape[0] != kmat.shape[0]:
        raise InputError(f"{y.shape[0]} labels for a {kmat.shape[0]}x{kmat.shape[0]} Gram")
    return kmat, y


def _run(kmat, y, eta, T, tail, step, record, kappa_sq):
    n = y.shape[0]
    alpha = np.zeros(n)
    lo, hi = tail_window(T, tail)
    acc = np.zeros(n)
    traj = [alpha.copy()] if record else None
    for t in range(1, T + 1):
        alpha = step(t, alpha)
        if not np.all(np.isfinite(alpha)) or np.max(np.abs(alpha)) > DIVERGENCE_LIMIT:
            raise DivergenceError(eta, t, kappa_sq)
        if record:
            traj.append(alpha.copy())
        if t >= lo:
            acc += alpha
    return acc / (hi - lo + 1), traj


def batch_indices(seed: int, t: int, n: int, b: int) -> np.ndarray:
    """Mini-batch of iteration ``t``: ``b`` uniform draws with replacement.

    Drawn from a Philox stream keyed by ``seed`` with counter ``t``, so the
    batch depends only on ``(seed, t)``.
    """
    gen = np.random.Generator(np.random.Philox(key=int(seed), counter=int(t)))
    return gen.integers(0, n, size=b)


def sgd_fit(k: OuterGram, y, cfg: SgdConfig, *, geometry: TrainGeometry | None = None,
            record: bool = False) -> FittedModel:
    """Tail-averaged mini-batch SGD started from zero."""
    kmat, y = _validate(k, y)
    n = y.shape[0]
    b, eta = cfg.batch, cfg.eta
    if b > n:
        raise ConfigError(f"batch size {b} exceeds n={n}")
    if cfg.sampling == "full_batch_deterministic" and b != n:
        raise ConfigError("full_batch_deterministic sampling requires b = n")
    full = np.arange(n)

    def step(t, alpha):
        if cfg.sampling == "full_batch_deterministic":
            idx = full
        else:
            idx = batch_indices(cfg.seed, t, n, b)
        resid = kmat[idx] @ alpha - y[idx]
        alpha = alpha.copy()
        # duplicates from replacement sampling accumulate
        np.add.at(alpha, idx, -(eta / b) * resid)
        return alpha

    avg, traj = _run(kmat, y, eta, cfg.iterations, cfg.tail, step, record, k.spec.kappa_sq)
    return FittedModel(avg, "sgd", asdict(cfg), k.spec, passes=(b * cfg.iterations) // n,
                       geometry=geometry, trajectory=traj)


def gd_fit(k: OuterGram, y, eta: float, T: int, tail: Tail = "paper_tail", *,
           geometry: TrainGeometry | None = None, record: bool = False) -> FittedModel:
    """Tail-averaged full-batch gradient descent, ``alpha <- alpha - (eta/n)(K alpha - y)``."""
    kmat, y = _validate(k, y)
    if not eta > 0:
        raise ConfigError(f"step size must be positive, got {eta}")
    if T < 2:
        raise ConfigError(f"need at least 2 iterations, got {T}")
    _check_tail(tail)
    n = y.shape[0]

    def step(t, alpha):
        return alpha - (eta / n) * (kmat @ alpha - y)

    avg, traj = _run(kmat, y, eta, T, tail, step, record, k.spec.kappa_sq)
    cfg = {"eta": eta, "batch": n, "iterations": T, "tail": tail}
    return FittedModel(avg, "gd", cfg, k.spec, passes=T, geometry=geometry, trajectory=traj)


def krr_fit(k: OuterGram, y, lam: float, *, geometry: TrainGeometry | None = None) -> FittedModel:
    """Kernel ridge regression: solve ``(K + n lam I) alpha = y`` by Cholesky."""
    kmat, y = _validate(k, y)
    if not lam > 0:
        raise ConfigError(f"ridge parameter must be positive, got {lam}")
    n = y.shape[0]
    try:
        factor = scipy.linalg.cho_factor(kmat + n * lam * np.eye(n), lower=True)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(f"K + n*lam*I is not numerically positive definite: {exc}") from None
    alpha = scipy.linalg.cho_solve(factor, y)
    return FittedModel(alpha, "krr", {"lam": lam}, k.spec, passes=0, geometry=geometry)


def predict_cross(model: FittedModel, kcross: np.ndarray) -> np.ndarray:
    return np.asarray(kcross) @ model.alpha


def predict(model: FittedModel, test_bags: Sequence[Bag], base: BaseKernelSpec | None = None,
            method: str = "auto") -> np.ndarray:
    """Evaluate the fitted function at the empirical embeddings of ``test_bags``."""
    if model.geometry is None:
        raise InputError("model carries no training geometry; refit or attach bags")
    geo = model.geometry
    base = base or geo.base
    if base != geo.base:
        raise InputError("prediction base kernel differs from the training one")
    cross, t_self, _ = cross_geometry(test_bags, geo.bags, base, method)
    kc = outer_cross(cross, t_self, geo.self_inner, model.outer)
    return predict_cross(model, kc)


def train_mse(model: FittedModel, k: OuterGram, y) -> float:
    r = np.asarray(k.k) @ model.alpha - np.asarray(y, dtype=float)
    return float(r @ r / r.size)


# ---------------------------------------------------------------------------
# Text serialisation


def save_model(path, model: FittedModel, base: BaseKernelSpec | None = None) -> None:
    base = base or (model.geometry.base if model.geometry else None)
    lines = [
        MODEL_FORMAT,
        f"estimator: {model.estimator}",
        f"n: {model.n}",
        f"passes: {model.passes}",
        f"config: {json.dumps(model.config, sort_keys=True)}",
        f"base_kernel: {json.dumps(asdict(base) if base else None, sort_keys=True)}",
        f"outer_kernel: {json.dumps(asdict(model.outer), sort_keys=True)}",
        "coefficients:",
    ]
    lines += [format(float(a), ".17g") for a in model.alpha]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path, bags: Sequence[Bag] | None = None) -> FittedModel:
    """Read a model file; pass the training ``bags`` to make it predictive."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MODEL_FORMAT:
        raise InputError(f"{path}:1: not a {MODEL_FORMAT!r} file")
    header = {}
    i = 1
    while i < len(lines) and lines[i] != "coefficients:":
        key, _, val = lines[i].partition(": ")
        header[key] = val
        i += 1
    try:
        n = int(header["n"])
        alpha = np.array([float(v) for v in lines[i + 1:i + 1 + n]])
        outer = OuterKernelSpec(**json.loads(header["outer_kernel"]))
        base_d = json.loads(header["base_kernel"])
    except (KeyError, ValueError) as exc:
        raise InputError(f"{path}: malformed model header: {exc}") from None
    if alpha.shape[0] != n:
        raise InputError(f"{path}: expected {n} coefficients, found {alpha.shape[0]}")
    geometry = None
    if bags is not None:
        if base_d is None:
            raise InputError(f"{path}: no base kernel recorded")
        base = BaseKernelSpec(**base_d)
        geometry = TrainGeometry(list(bags), self_inner(bags, base), base)
    return FittedModel(alpha, header["estimator"], json.loads(header["config"]), outer,
                       passes=int(header["passes"]), geometry=geometry)
