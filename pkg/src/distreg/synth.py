"""Two-stage synthetic data with closed-form ground truth.

Each first-stage draw is a 1-D Gaussian ``N(m_j, s_j^2)``. Its bag holds
``N`` samples from it, and its label is ``f(x_j) + noise``. Population
embeddings of Gaussians are known in closed form, so ``f`` can be built
exactly inside ``H_K`` (``anchor_expansion``) or outside it
(``parametric``).

Randomness is split per bag index through :class:`numpy.random.SeedSequence`
spawn keys, so growing ``n`` or ``N`` never changes the content of earlier
bags. Bag ``j`` of a size-``N`` set is a prefix of bag ``j`` of a
size-``2N`` set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from distreg.embedding import Bag, GaussianParams, analytic_inner_matrix, read_bags
from distreg.errors import ConfigError, InputError
from distreg.kernels import BaseKernelSpec, OuterKernelSpec

RNG_NAME = "pcg64-seedsequence-v1"

_PARAMS, _SAMPLES, _NOISE, _ANCHORS = 0, 1, 2, 3
_TEST_TAG = 0x7E57


def _stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(purpose, index))
    return np.random.Generator(np.random.PCG64(ss))


def derived_seed(seed: int, *tags: int) -> int:
    """Deterministic 64-bit seed derived from ``seed`` and integer tags."""
    state = np.random.SeedSequence([int(seed), *map(int, tags)]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


@dataclass
class MetaConfig:
    n: int = 100
    N: int = 100
    noise_std: float = 0.05
    label_bound: float = 2.0
    mean_range: tuple[float, float] = (-2.0, 2.0)
    std_range: tuple[float, float] = (0.25, 1.0)
    truth: Literal["anchor_expansion", "parametric"] = "anchor_expansion"
    anchor_weights: tuple[float, ...] = (1.0, -1.0, 1.0, -1.0, 1.0)
    # explicit anchors as (mean, std) pairs; drawn from truth_seed when empty
    anchors: tuple[tuple[float, float], ...] = ()
    seed: int = 0
    truth_seed: int = 0

    def __post_init__(self):
        self.mean_range = tuple(map(float, self.mean_range))
        self.std_range = tuple(map(float, self.std_range))
        self.anchor_weights = tuple(map(float, self.anchor_weights))
        self.anchors = tuple(tuple(map(float, a)) for a in self.anchors)
        self.validate()

    @property
    def k(self) -> int:
        return len(self.anchor_weights)

    def validate(self) -> None:
        if self.n < 0 or self.N < 1:
            raise ConfigError(f"need n >= 0 and N >= 1, got n={self.n}, N={self.N}")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be nonnegative")
        if not self.label_bound > 0:
            raise ConfigError("label_bound must be positive")
        lo, hi = self.mean_range
        if lo > hi:
            raise ConfigError(f"empty mean_range {self.mean_range}")
        slo, shi = self.std_range
        if slo > shi or slo <= 0:
            raise ConfigError(f"std_range must be a positive nonempty interval, got {self.std_range}")
        if self.truth not in ("anchor_expansion", "parametric"):
            raise ConfigError(f"unknown truth mode {self.truth!r}")
        if self.truth == "anchor_expansion":
            if self.k < 1:
                raise ConfigError("anchor_expansion needs at least one anchor weight")
            if self.anchors and len(self.anchors) != self.k:
                raise ConfigError(
                    f"{len(self.anchors)} anchors given for {self.k} weights"
                )
            for a in self.anchors:
                if len(a) != 2 or a[1] <= 0:
                    raise ConfigError(f"anchor {a} must be (mean, positive std)")


@dataclass
class LabeledBagSet:
    bags: list[Bag]
    y: np.ndarray
    true_params: list[GaussianParams]
    true_f: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.true_f = np.asarray(self.true_f, dtype=float)
        if not (len(self.bags) == len(self.y) == len(self.true_params) == len(self.true_f)):
            raise InputError("bags, labels, params and true_f must have equal length")

    def __len__(self) -> int:
        return len(self.bags)

    @property
    def means(self) -> np.ndarray:
        return np.array([p.mean for p in self.true_params])

    @property
    def stds(self) -> np.ndarray:
        return np.array([p.std for p in self.true_params])

    def population_inner(self, sigma: float, other: "LabeledBagSet | None" = None) -> np.ndarray:
        """Closed-form ``<mu_i, mu_j>`` between population embeddings."""
        other = self if other is None else other
        return analytic_inner_matrix(self.means, self.stds, other.means, other.stds, sigma)


def anchor_params(cfg: MetaConfig) -> list[GaussianParams]:
    if cfg.anchors:
        return [GaussianParams(m, s) for m, s in cfg.anchors]
    out = []
    for i in range(cfg.k):
        rng = _stream(cfg.truth_seed, _ANCHORS, i)
        out.append(GaussianParams(rng.uniform(*cfg.mean_range), rng.uniform(*cfg.std_range)))
    return out


def truth_values(cfg: MetaConfig, params: Sequence[GaussianParams],
                 base: BaseKernelSpec, outer: OuterKernelSpec) -> np.ndarray:
    """Noise-free regression function at the population embeddings of ``params``."""
    m = np.array([p.mean for p in params], dtype=float)
    s = np.array([p.std for p in params], dtype=float)
    if cfg.truth == "parametric":
        return np.sin(np.pi * m) * np.exp(-s)
    anchors = anchor_params(cfg)
    am = np.array([a.mean for a in anchors])
    ast = np.array([a.std for a in anchors])
    sigma = base.bandwidth
    cross = analytic_inner_matrix(m, s, am, ast, sigma)
    self_x = sigma / np.sqrt(sigma**2 + 2.0 * s**2)
    self_z = sigma / np.sqrt(sigma**2 + 2.0 * ast**2)
    kx = np.asarray(outer.from_geometry(cross, self_x[:, None], self_z[None, :]))
    return kx.reshape(len(m), len(anchors)) @ np.array(cfg.anchor_weights)


def _check_base(base: BaseKernelSpec) -> None:
    if base.family != "gaussian" or base.dim != 1:
        raise ConfigError("synthetic ground truth needs a 1-D gaussian base kernel")


def _generate(cfg: MetaConfig, n: int, N: int, seed: int,
              base: BaseKernelSpec, outer: OuterKernelSpec) -> LabeledBagSet:
    params, bags, noise = [], [], np.empty(n)
    for j in range(n):
        prng = _stream(seed, _PARAMS, j)
        p = GaussianParams(prng.uniform(*cfg.mean_range), prng.uniform(*cfg.std_range))
        params.append(p)
        z = _stream(seed, _SAMPLES, j).standard_normal(N)
        bags.append(Bag((p.mean + p.std * z).reshape(-1, 1), id=j))
        noise[j] = _stream(seed, _NOISE, j).standard_normal() * cfg.noise_std
    f = truth_values(cfg, params, base, outer) if n else np.zeros(0)
    y = np.clip(f + noise, -cfg.label_bound, cfg.label_bound)
    meta = {"seed": int(seed), "rng": RNG_NAME, "N": N}
    return LabeledBagSet(bags, y, params, f, meta)


def sample_meta(cfg: MetaConfig, base: BaseKernelSpec, outer: OuterKernelSpec) -> LabeledBagSet:
    """Draw ``n`` (distribution, label) pairs and a bag of ``N`` samples for each."""
    _check_base(base)
    return _generate(cfg, cfg.n, cfg.N, cfg.seed, base, outer)


def heldout_seed(seed: int) -> int:
    """Seed of the held-out set paired with a training seed."""
    return derived_seed(seed, _TEST_TAG)


def fresh_test_set(cfg: MetaConfig, m_test: int, N_test: int, seed: int,
                   base: BaseKernelSpec, outer: OuterKernelSpec) -> LabeledBagSet:
    """Held-out set drawn exactly like training data from its own seed.

    The ground truth (anchors) comes from ``cfg.truth_seed`` and is therefore
    shared with every training set built from ``cfg``.
    """
    _check_base(base)
    if m_test < 0 or N_test < 1:
        raise ConfigError("m_test must be >= 0 and N_test >= 1")
    return _generate(cfg, m_test, N_test, seed, base, outer)


def write_labels(path, data: LabeledBagSet) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bag_id", "y", "true_f", "m", "s"])
        for b, y, f, p in zip(data.bags, data.y, data.true_f, data.true_params):
            w.writerow([b.id] + [format(float(v), ".17g") for v in (y, f, p.mean, p.std)])


def read_labels(path) -> dict[int, tuple[float, float, float, float]]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["bag_id", "y", "true_f", "m", "s"]:
            raise InputError(f"{path}:1: expected header bag_id,y,true_f,m,s")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                out[int(rec[0])] = tuple(float(v) for v in rec[1:5])
            except (ValueError, IndexError) as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    return out


def load_dataset(bags_path, labels_path) -> LabeledBagSet:
    bags = read_bags(bags_path)
    labels = read_labels(labels_path)
    missing = [b.id for b in bags if b.id not in labels]
    if missing or len(labels) != len(bags):
        raise InputError(f"bag ids and label ids disagree (first missing: {missing[:3]})")
    rows = [labels[b.id] for b in bags]
    return LabeledBagSet(
        bags,
        [r[0] for r in rows],
        [GaussianParams(r[2], r[3]) for r in rows],
        [r[1] for r in rows],
    )
