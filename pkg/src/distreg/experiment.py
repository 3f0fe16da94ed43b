"""Experiment configuration and the seeded trial loops behind the CLI.

Config files are flat ``key = value`` text grouped under ``[section]``
headers; ``#`` starts a comment. Every key is optional, and unknown sections
or keys are rejected with the offending line number::

    [data]
    n = 256
    N = 512
    mean_range = -2, 2
    anchor_weights = 1, -1, 1

    [outer_kernel]
    bandwidth = 0.5

    [estimator]
    kind = schedule

    [schedule]
    r = 0.5
    variant = 3

    [sweep]
    n_values = 64, 128, 256
    seeds = 10
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable


from distreg.analysis import RateReport, risk_from_predictions, summarize
from distreg.embedding import cross_geometry, embedding_gram, outer_cross, outer_gram
from distreg.errors import ConfigError, DistRegError
from distreg.estimators import (
    FittedModel,
    SgdConfig,
    TrainGeometry,
    gd_fit,
    krr_fit,
    predict_cross,
    sgd_fit,
    train_mse,
)
from distreg.kernels import BaseKernelSpec, OuterKernelSpec
from distreg.schedules import ScheduleInput, ScheduleSpec, make_schedule
from distreg.synth import (
    LabeledBagSet,
    MetaConfig,
    derived_seed,
    fresh_test_set,
    heldout_seed,
    sample_meta,
)

_BATCH_SEED_TAG = 0xB47C


@dataclass
class EstimatorConfig:
    kind: str = "schedule"  # schedule | sgd | gd | krr
    eta: float = 0.2
    batch: int = 1
    iterations: int = 100
    sampling: str = "with_replacement"
    tail: str = "paper_tail"
    lam: float = 1e-2

    def validate(self) -> None:
        if self.kind not in ("schedule", "sgd", "gd", "krr"):
            raise ConfigError(f"unknown estimator kind {self.kind!r}")


@dataclass
class ScheduleConfig:
    r: float = 0.5
    nu: float = 1.0
    alpha: float = 1.0
    R: float = 1.0
    M: float = 1.0
    eta0: float = 0.2
    log_k: float = 1.5
    variant: int = 3
    regime: str | None = None

    def input_for(self, n: int, kappa: float) -> ScheduleInput:
        return ScheduleInput(
            n=n, r=self.r, nu=self.nu, alpha=self.alpha, R=self.R, M=self.M,
            eta0=self.eta0, kappa=kappa, log_k=self.log_k, variant=self.variant,
            regime=self.regime,
        )


@dataclass
class SweepConfig:
    n_values: tuple[int, ...] = (64, 128, 256)
    N_values: tuple[int, ...] = (2, 32, 512)
    seeds: int = 10
    N_cap: int = 512
    slope_threshold: float = 0.0
    fixed_n: int | None = None


@dataclass
class ExperimentConfig:
    meta: MetaConfig = field(default_factory=MetaConfig)
    base: BaseKernelSpec = field(default_factory=BaseKernelSpec)
    outer: OuterKernelSpec = field(default_factory=lambda: OuterKernelSpec(bandwidth=0.5))
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    m_test: int = 200
    N_test: int = 2048
    bags_file: str | None = None
    labels_file: str | None = None
    out_dir: str = "out"

    @property
    def kappa(self) -> float:
        return math.sqrt(self.outer.kappa_sq)


# ---------------------------------------------------------------------------
# Parsing


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.replace(",", " ").split())


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.replace(",", " ").split())


def _pair(v: str) -> tuple[float, float]:
    out = _floats(v)
    if len(out) != 2:
        raise ValueError(f"expected two numbers, got {v!r}")
    return out


def _anchors(v: str) -> tuple[tuple[float, float], ...]:
    out = []
    for item in v.split(","):
        item = item.strip()
        if not item:
            continue
        m, _, s = item.partition(":")
        out.append((float(m), float(s)))
    return tuple(out)


def _opt_int(v: str):
    return None if v.lower() in ("", "none") else int(v)


def _opt_str(v: str):
    return None if v.lower() in ("", "none") else v


# section -> key -> (target, attribute, converter)
_SCHEMA: dict[str, dict[str, tuple[str, str, Callable[[str], Any]]]] = {
    "data": {
        "n": ("meta", "n", int),
        "N": ("meta", "N", int),
        "noise_std": ("meta", "noise_std", float),
        "label_bound": ("meta", "label_bound", float),
        "mean_range": ("meta", "mean_range", _pair),
        "std_range": ("meta", "std_range", _pair),
        "truth": ("meta", "truth", str),
        "anchor_weights": ("meta", "anchor_weights", _floats),
        "anchors": ("meta", "anchors", _anchors),
        "seed": ("meta", "seed", int),
        "truth_seed": ("meta", "truth_seed", int),
        "m_test": ("top", "m_test", int),
        "N_test": ("top", "N_test", int),
        "bags_file": ("top", "bags_file", _opt_str),
        "labels_file": ("top", "labels_file", _opt_str),
    },
    "base_kernel": {
        "family": ("base", "family", str),
        "bandwidth": ("base", "bandwidth", float),
        "dim": ("base", "dim", int),
    },
    "outer_kernel": {
        "family": ("outer", "family", str),
        "bandwidth": ("outer", "bandwidth", float),
    },
    "estimator": {
        "kind": ("estimator", "kind", str),
        "eta": ("estimator", "eta", float),
        "batch": ("estimator", "batch", int),
        "iterations": ("estimator", "iterations", int),
        "sampling": ("estimator", "sampling", str),
        "tail": ("estimator", "tail", str),
        "lam": ("estimator", "lam", float),
    },
    "schedule": {
        "r": ("schedule", "r", float),
        "nu": ("schedule", "nu", float),
        "alpha": ("schedule", "alpha", float),
        "R": ("schedule", "R", float),
        "M": ("schedule", "M", float),
        "eta0": ("schedule", "eta0", float),
        "log_k": ("schedule", "log_k", float),
        "variant": ("schedule", "variant", int),
        "regime": ("schedule", "regime", _opt_str),
    },
    "sweep": {
        "n_values": ("sweep", "n_values", _ints),
        "N_values": ("sweep", "N_values", _ints),
        "seeds": ("sweep", "seeds", int),
        "N_cap": ("sweep", "N_cap", int),
        "slope_threshold": ("sweep", "slope_threshold", float),
        "fixed_n": ("sweep", "fixed_n", _opt_int),
    },
    "output": {"dir": ("top", "out_dir", str)},
}


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse config text into an :class:`ExperimentConfig`.

    Errors carry the 1-based line number of the offending entry.
    """
    values: dict[str, dict[str, Any]] = {}
    key_lines: dict[tuple[str, str], int] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"{source}: unknown section [{section}]", lineno)
            continue
        if section is None:
            raise ConfigError(f"{source}: entry outside any section", lineno)
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise ConfigError(f"{source}: expected 'key = value', got {raw.strip()!r}", lineno)
        if key not in _SCHEMA[section]:
            raise ConfigError(f"{source}: unknown key {key!r} in [{section}]", lineno)
        if (section, key) in key_lines:
            raise ConfigError(f"{source}: duplicate key {key!r} in [{section}]", lineno)
        target, attr, conv = _SCHEMA[section][key]
        try:
            values.setdefault(target, {})[attr] = conv(val)
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {exc}", lineno) from None
        key_lines[(section, key)] = lineno

    def build(name, factory, default):
        kw = values.get(name)
        if not kw:
            return default
        try:
            return factory(**kw)
        except DistRegError as exc:
            first = min(key_lines[k] for k in key_lines if _SCHEMA[k[0]][k[1]][0] == name)
            raise ConfigError(f"{source}: {exc}", first) from None

    defaults = ExperimentConfig()
    base = build("base", lambda **kw: BaseKernelSpec(**{**vars_of(defaults.base), **kw}), defaults.base)
    outer_kw = {**vars_of(defaults.outer), **values.get("outer", {}), "gamma_sq": base.gamma_sq}
    outer = build("outer", lambda **kw: OuterKernelSpec(**outer_kw), OuterKernelSpec(**outer_kw))
    cfg = ExperimentConfig(
        meta=build("meta", lambda **kw: MetaConfig(**kw), defaults.meta),
        base=base,
        outer=outer,
        estimator=replace(defaults.estimator, **values.get("estimator", {})),
        schedule=replace(defaults.schedule, **values.get("schedule", {})),
        sweep=replace(defaults.sweep, **values.get("sweep", {})),
        **values.get("top", {}),
    )
    try:
        cfg.estimator.validate()
        _validate_sweep(cfg.sweep)
        if cfg.m_test < 0 or cfg.N_test < 1:
            raise ConfigError("m_test must be >= 0 and N_test >= 1")
        if cfg.estimator.kind == "schedule":
            cfg.schedule.input_for(max(cfg.meta.n, 1), cfg.kappa)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def vars_of(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _validate_sweep(s: SweepConfig) -> None:
    if s.seeds < 1:
        raise ConfigError("sweep seeds must be >= 1")
    if any(n < 1 for n in s.n_values) or any(N < 1 for N in s.N_values):
        raise ConfigError("sweep grids must contain positive integers")
    if s.N_cap < 1:
        raise ConfigError("N_cap must be >= 1")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


# ---------------------------------------------------------------------------
# Trials


@dataclass
class TrialResult:
    n: int
    N: int
    seed: int
    risk: float
    train_mse: float
    estimator: str
    b: int | None
    eta: float | None
    T: int | None


def make_train(cfg: ExperimentConfig, n: int, N: int, seed: int) -> LabeledBagSet:
    return sample_meta(replace(cfg.meta, n=n, N=N, seed=seed), cfg.base, cfg.outer)


def make_test(cfg: ExperimentConfig, seed: int) -> LabeledBagSet:
    return fresh_test_set(cfg.meta, cfg.m_test, cfg.N_test, heldout_seed(seed), cfg.base, cfg.outer)


def fit_with(cfg: ExperimentConfig, k, y, seed: int, schedule: ScheduleSpec | None,
             geometry: TrainGeometry | None = None) -> tuple[FittedModel, int | None, float | None, int | None]:
    """Run the configured learner; returns the model and its ``(b, eta, T)``."""
    n = len(y)
    est = cfg.estimator
    batch_seed = derived_seed(seed, _BATCH_SEED_TAG)
    if est.kind == "schedule":
        s = schedule or make_schedule(cfg.schedule.input_for(n, cfg.kappa))
        if s.b == n:
            model = gd_fit(k, y, s.eta, s.T, est.tail, geometry=geometry)
        else:
            model = sgd_fit(k, y, SgdConfig(s.eta, s.b, s.T, batch_seed, "with_replacement", est.tail),
                            geometry=geometry)
        return model, s.b, s.eta, s.T
    if est.kind == "krr":
        return krr_fit(k, y, est.lam, geometry=geometry), None, None, None
    if est.kind == "gd":
        return gd_fit(k, y, est.eta, est.iterations, est.tail, geometry=geometry), n, est.eta, est.iterations
    b = n if est.sampling == "full_batch_deterministic" else est.batch
    model = sgd_fit(k, y, SgdConfig(est.eta, b, est.iterations, batch_seed, est.sampling, est.tail),
                    geometry=geometry)
    return model, b, est.eta, est.iterations


def evaluate(cfg: ExperimentConfig, train: LabeledBagSet, test: LabeledBagSet, seed: int,
             schedule: ScheduleSpec | None = None) -> tuple[FittedModel, TrialResult]:
    eg = embedding_gram(train.bags, cfg.base)
    k = outer_gram(eg, cfg.outer)
    geo = TrainGeometry(train.bags, eg.diag, cfg.base)
    model, b, eta, T = fit_with(cfg, k, train.y, seed, schedule, geo)
    if len(test):
        cross, t_self, _ = cross_geometry(test.bags, train.bags, cfg.base)
        pred = predict_cross(model, outer_cross(cross, t_self, eg.diag, cfg.outer))
        risk = risk_from_predictions(pred, test.true_f)
    else:
        risk = float("nan")
    N = train.bags[0].size if train.bags else 0
    res = TrialResult(len(train), N, seed, risk, train_mse(model, k, train.y),
                      model.estimator, b, eta, T)
    return model, res


def run_trial(cfg: ExperimentConfig, n: int, N: int, seed: int,
              schedule: ScheduleSpec | None = None) -> TrialResult:
    try:
        return evaluate(cfg, make_train(cfg, n, N, seed), make_test(cfg, seed), seed, schedule)[1]
    except DistRegError as exc:
        raise type(exc)(f"trial (n={n}, N={N}, seed={seed}) failed: {exc}") from exc


def _run_trial_args(args) -> TrialResult:
    return run_trial(*args)


def run_many(jobs: list[tuple], workers: int = 1) -> list[TrialResult]:
    """Run trial argument tuples, serially or in a process pool, preserving order."""
    if workers <= 1 or len(jobs) <= 1:
        return [_run_trial_args(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_trial_args, jobs))


def seed_list(cfg: ExperimentConfig) -> list[int]:
    return [cfg.meta.seed + i for i in range(cfg.sweep.seeds)]


def run_rates(cfg: ExperimentConfig, workers: int = 1) -> tuple[RateReport, list[TrialResult]]:
    """Excess risk versus ``n`` under the configured schedule."""
    if len(cfg.sweep.n_values) < 3:
        raise ConfigError("rates needs at least 3 n values")
    ns = sorted(set(cfg.sweep.n_values))
    schedules, jobs = {}, []
    for n in ns:
        s = make_schedule(cfg.schedule.input_for(n, cfg.kappa))
        schedules[n] = s
        N = min(s.N_min, cfg.sweep.N_cap)
        jobs += [(cfg, n, N, seed, s) for seed in seed_list(cfg)]
    results = sorted(run_many(jobs, workers), key=lambda r: (r.n, r.N, r.seed))
    risks: dict[int, list[float]] = {}
    for r in results:
        risks.setdefault(r.n, []).append(r.risk)
    rows = []
    for n in ns:
        d = schedules[n].as_dict()
        d["N_used"] = min(schedules[n].N_min, cfg.sweep.N_cap)
        rows.append(d)
    rate = schedules[ns[0]].rate_exponent
    report = RateReport.from_risks(risks, rate, rows, slope_threshold=cfg.sweep.slope_threshold)
    return report, results


def run_sweep_N(cfg: ExperimentConfig, workers: int = 1) -> tuple[list[tuple[int, int, float, float]], list[TrialResult]]:
    """Mean excess risk for each second-stage size at fixed ``n``."""
    n = cfg.sweep.fixed_n or cfg.meta.n
    Ns = sorted(set(cfg.sweep.N_values))
    sched = make_schedule(cfg.schedule.input_for(n, cfg.kappa)) if cfg.estimator.kind == "schedule" else None
    jobs = [(cfg, n, N, seed, sched) for N in Ns for seed in seed_list(cfg)]
    results = sorted(run_many(jobs, workers), key=lambda r: (r.n, r.N, r.seed))
    rows = []
    for N in Ns:
        vals = [r.risk for r in results if r.N == N]
        mean, std = summarize(vals)
        rows.append((N, len(vals), mean, std))
    return rows, results


def sweep_csv(rows) -> str:
    lines = ["N,trials,mean_risk,std_risk"]
    lines += [f"{N},{t},{m:.17g},{s:.17g}" for N, t, m, s in rows]
    return "\n".join(lines) + "\n"
