"""Command-line entry points.

Exit codes: 0 on success, 2 for configuration/data errors, 3 for numeric
failures.  PROFITI_SEED and PROFITI_THREADS override the corresponding
config/flag values when set.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .data import load_jsonl, save_jsonl
from .errors import ConfigError, DataFormatError, NumericError, ValidationError
from .metrics import write_per_query_csv
from .model import ProfitiModel
from .plots import trajectory_fan_svg
from .synthetic import SyntheticConfig, generate
from .training import (
    apply_env_overrides,
    evaluate,
    load_train_config,
    run_ablation,
    train,
)

logger = logging.getLogger(__name__)


def _env_seed(default):
    value = os.environ.get("PROFITI_SEED")
    return int(value) if value is not None else default


def cmd_generate_data(args):
    with open(args.spec) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.spec}: invalid JSON: {exc}") from None
    try:
        cfg = SyntheticConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"{args.spec}: {exc}") from None
    dataset = generate(cfg, seed=_env_seed(args.seed))
    save_jsonl(dataset, args.out)
    print(f"wrote {len(dataset)} series to {args.out}")


def cmd_train(args):
    config = apply_env_overrides(load_train_config(args.config))
    record = train(config, args.out)
    print(f"status: {record.status}  epochs: {record.epochs_run}  "
          f"best epoch: {record.best_epoch}")
    print(record.report.to_text())
    print(f"run record: {os.path.join(args.out, 'run_record.json')}")


def cmd_evaluate(args):
    dataset = load_jsonl(args.data)
    report = evaluate(args.ckpt, dataset, n_samples=args.n_samples,
                      seed=_env_seed(args.seed))
    with open(args.report, "w") as fh:
        fh.write(report.to_json())
    if args.per_query_csv:
        model = ProfitiModel.load(args.ckpt)
        write_per_query_csv(dataset, model, args.per_query_csv,
                            n_samples=args.n_samples, seed=_env_seed(args.seed))
    print(report.to_text())


def cmd_sample(args):
    dataset = load_jsonl(args.data)
    if not dataset:
        raise ValidationError("empty dataset")
    model = ProfitiModel.load(args.ckpt)
    rng = np.random.default_rng(_env_seed(args.seed))
    import csv as _csv

    with open(args.out, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["series_id", "sample", "query", "t", "channel", "value"])
        for inst in dataset:
            samples = model.sample(inst, args.n, rng)
            for s in range(args.n):
                for k, q in enumerate(inst.queries):
                    writer.writerow([inst.series_id, s, k, repr(q.t), q.c,
                                     repr(float(samples[s, k]))])
            if args.fan_svg and inst is dataset[0]:
                trajectory_fan_svg(inst, samples, args.fan_svg)
    print(f"wrote {args.n} samples per series for {len(dataset)} series to {args.out}")


def cmd_ablate(args):
    config = apply_env_overrides(load_train_config(args.config))
    workdir = args.workdir or os.path.splitext(args.out)[0] + "_runs"
    table = run_ablation(config, workdir)
    with open(args.out, "w") as fh:
        json.dump(table, fh, indent=2)
    width = max(len(name) for name in table)
    for name, row in table.items():
        print(f"{name:<{width}}  njNLL {row['test_njnll']: .4f}  ({row['status']})")
    print(f"table: {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="profiti",
        description="Joint probabilistic forecasting of irregular multivariate "
                    "time series with an invertible-attention conditional flow.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic JSONL dataset")
    p.add_argument("--spec", required=True, help="JSON file of generator settings")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(fn=cmd_generate_data)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="metric report for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="output JSON path")
    p.add_argument("--n-samples", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-query-csv", default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("sample", help="draw joint answer samples")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fan-svg", default=None,
                   help="optional trajectory-fan SVG for the first series")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("ablate", help="train all model variants and tabulate")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output table JSON path")
    p.add_argument("--workdir", default=None)
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.fn(args)
    except (ConfigError, DataFormatError, ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
