"""Command-line front end.

Exit codes: 0 success or gate passed, 1 validation error, 2 runtime or
divergence error, 3 gate failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path


from distreg.embedding import write_bags
from distreg.errors import ConfigError, DistRegError, DivergenceError, InputError
from distreg.estimators import save_model
from distreg.experiment import (
    ExperimentConfig,
    evaluate,
    load_config,
    make_test,
    make_train,
    run_rates,
    run_sweep_N,
    sweep_csv,
)
from distreg.schedules import CSV_HEADER, make_schedule
from distreg.synth import load_dataset, write_labels

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_GATE = 0, 1, 2, 3


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, meta=replace(cfg.meta, seed=args.seed))
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args) -> int:
    cfg = _load(args)
    data = make_train(cfg, cfg.meta.n, cfg.meta.N, cfg.meta.seed)
    out = _out_dir(cfg)
    write_bags(out / "bags.csv", data.bags)
    write_labels(out / "labels.csv", data)
    lo, hi = (float(data.y.min()), float(data.y.max())) if len(data) else (0.0, 0.0)
    print(f"n={len(data)} N={cfg.meta.N} d={cfg.base.dim} label_range=[{lo:.6g}, {hi:.6g}]")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _load(args)
    seed = cfg.meta.seed
    if cfg.bags_file or cfg.labels_file:
        if not (cfg.bags_file and cfg.labels_file):
            raise ConfigError("bags_file and labels_file must be given together")
        train = load_dataset(cfg.bags_file, cfg.labels_file)
    else:
        train = make_train(cfg, cfg.meta.n, cfg.meta.N, seed)
    if len(train) == 0:
        raise InputError("training set is empty")
    test = make_test(cfg, seed)
    model, res = evaluate(cfg, train, test, seed)
    out = _out_dir(cfg)
    save_model(out / "model.txt", model, cfg.base)

    def fmt(v):
        return "" if v is None else (f"{v:.17g}" if isinstance(v, float) else str(v))

    print("estimator,n,N,b,eta,T,train_mse,test_excess_risk")
    print(",".join([res.estimator, str(res.n), str(res.N), fmt(res.b), fmt(res.eta), fmt(res.T),
                    fmt(res.train_mse), fmt(res.risk)]))
    return EXIT_OK


def cmd_schedule(args) -> int:
    cfg = _load(args)
    ns = sorted(set(cfg.sweep.n_values)) if args.grid else [cfg.meta.n]
    print(CSV_HEADER)
    for n in ns:
        print(make_schedule(cfg.schedule.input_for(n, cfg.kappa)).csv_row())
    return EXIT_OK


def cmd_rates(args) -> int:
    cfg = _load(args)
    report, _ = run_rates(cfg, args.jobs)
    passed = report.slope <= cfg.sweep.slope_threshold
    report.extra["passed"] = bool(passed)
    out = _out_dir(cfg)
    text = report.to_csv()
    (out / "rates.csv").write_text(text, encoding="utf-8")
    cols = list(report.schedules[0]) if report.schedules else []
    lines = [",".join(cols)] + [",".join(_cell(r[c]) for c in cols) for r in report.schedules]
    (out / "rates_schedule.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK if passed else EXIT_GATE


def cmd_sweep_n(args) -> int:
    cfg = _load(args)
    rows, _ = run_sweep_N(cfg, args.jobs)
    text = sweep_csv(rows)
    (_out_dir(cfg) / "sweep_N.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distreg",
        description="Two-stage distribution regression with tail-averaged SGD.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "generate": (cmd_generate, "write a synthetic bag set and its labels"),
        "fit": (cmd_fit, "fit one estimator and report train/test metrics"),
        "schedule": (cmd_schedule, "print the (b, eta, T, N_min) schedule as CSV"),
        "rates": (cmd_rates, "excess risk versus n with a slope gate"),
        "sweep-n": (cmd_sweep_n, "excess risk versus second-stage size N"),
    }
    for name, (fn, help_) in commands.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
        p.add_argument("--jobs", type=int, default=1, help="concurrent trials")
        p.add_argument("--seed", type=int, default=None, help="override [data] seed")
        if name == "schedule":
            p.add_argument("--grid", action="store_true", help="one row per sweep n value")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (DistRegError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
