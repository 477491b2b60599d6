"""Command-line entry point: ``st-impute <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import Normalization, Series, load_csv, save_csv
from .errors import ContractError, DataError, NumericalError
from .experiment import ExperimentSpec, corrupt, impute_with_model, model_config_for, read_key_values, run_experiment, split_config
from .model import StImputeModel
from .training import TrainConfig, gradient_check, tiny_gradcheck_setup, train, write_trace

log = logging.getLogger("st_impute")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def cmd_simulate_missing(args) -> int:
    ds = load_csv(args.input)
    arrays = [s.values for s in ds.series]
    corrupted, holdouts = corrupt(arrays, args.pattern, args.rate, args.seed)
    out, held = [], []
    for s, c, h in zip(ds.series, corrupted, holdouts):
        out.append(replace(s, values=c))
        truth = np.where(h, s.values, np.nan)
        held.append(replace(s, values=truth))
    with_labels = ds.has_labels
    save_csv(ds, args.output, out, with_labels=with_labels)
    save_csv(ds, args.holdout, held, with_labels=with_labels)
    n_held = int(sum(h.sum() for h in holdouts))
    n_obs = int(sum((~np.isnan(a)).sum() for a in arrays))
    print(f"held out {n_held} of {n_obs} observed values ({n_held / max(n_obs, 1):.3f})")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = load_csv(args.input)
    model_kw, train_kw = {}, {}
    if args.config:
        model_kw, train_kw, _ = split_config(read_key_values(args.config))
    if args.labeled_fraction is not None:
        train_kw["labeled_fraction"] = args.labeled_fraction
    for k in ("n_features", "task", "n_classes"):
        model_kw.pop(k, None)
    kind = model_kw.pop("attention_kind", "sparse")
    config = TrainConfig(**train_kw)
    norm = ds.fit_normalization()
    arrays = ds.normalized(ds.series)
    labels = np.array([np.nan if s.label is None else s.label for s in ds.series])
    model = StImputeModel(model_config_for(ds, model_kw, kind))
    result = train(model, arrays, config, labels=labels)
    extra = {"normalization": norm.to_dict(), "feature_names": ds.feature_names, "best_epoch": result.best_epoch}
    model.save(args.checkpoint, extra=extra)
    if args.trace:
        write_trace(result.trace, args.trace)
    last = result.trace[-1]
    print(f"trained {len(result.trace)} epochs (best {result.best_epoch}); final total loss {last['total']:.4f}")
    return EXIT_OK


def cmd_impute(args) -> int:
    model, extra = StImputeModel.load(args.checkpoint)
    if "normalization" not in extra:
        raise DataError(f"{args.checkpoint}: checkpoint carries no normalization statistics")
    norm = Normalization.from_dict(extra["normalization"])
    ds = load_csv(args.input)
    if ds.n_features != model.config.n_features:
        raise DataError(f"input has {ds.n_features} features, model expects {model.config.n_features}")
    arrays = [norm.apply(s.values) for s in ds.series]
    filled = impute_with_model(model, arrays)
    out: list[Series] = []
    for s, f in zip(ds.series, filled):
        observed = ~np.isnan(s.values)
        values = np.where(observed, s.values, norm.invert(f))
        out.append(replace(s, values=values))
    save_csv(ds, args.output, out)
    n_filled = int(sum(np.isnan(s.values).sum() for s in ds.series))
    print(f"imputed {n_filled} missing values in {len(out)} series")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    spec = ExperimentSpec.from_file(args.spec)
    spec.out_dir = args.out_dir
    report = run_experiment(spec)
    print(f"wrote {Path(args.out_dir) / 'report.csv'} ({len(report.rows)} rows)")
    failed = [r for r in report.rows if r["status"] != "ok"]
    for r in failed:
        print(f"  {r['method']} {r['pattern']} {r['rate']}: {r['status']}", file=sys.stderr)
    return EXIT_NUMERIC if failed and any("Numerical" in r["status"] for r in failed) else EXIT_OK


def cmd_gradcheck(args) -> int:
    model, batch = tiny_gradcheck_setup(args.attention, seed=args.seed)
    report = gradient_check(model, batch)
    width = max(len(k) for k in report)
    for name, err in report.items():
        print(f"{name:<{width}}  {err:.3e}")
    worst = max(report.values())
    ok = worst < GRADCHECK_TOL
    print(f"max relative error {worst:.3e} -> {'PASS' if ok else 'FAIL'} (tolerance {GRADCHECK_TOL:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="st-impute", description="Sparse-attention transformer imputation for time series.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate-missing", help="hold out values from a CSV dataset")
    s.add_argument("--input", required=True)
    s.add_argument("--pattern", required=True, choices=["mcar", "fixed-block", "variable-block"])
    s.add_argument("--rate", required=True, type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", required=True)
    s.add_argument("--holdout", required=True)
    s.set_defaults(func=cmd_simulate_missing)

    s = sub.add_parser("train", help="train a model on a CSV dataset")
    s.add_argument("--input", required=True)
    s.add_argument("--config", help="key = value file of model/training settings")
    s.add_argument("--labeled-fraction", type=float)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--trace", help="optional per-epoch loss CSV")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("impute", help="fill missing cells with a trained model")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_impute)

    s = sub.add_parser("evaluate", help="run a corruption sweep and write report.csv")
    s.add_argument("--spec", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("gradcheck", help="compare tape gradients with finite differences")
    s.add_argument("--attention", choices=["sparse", "softmax"], default="sparse")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"st-impute: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ContractError, UsageError) as exc:
        print(f"st-impute: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"st-impute: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"st-impute: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
