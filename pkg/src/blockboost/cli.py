"""Command-line frontend: train, predict, eval and bench subcommands.

Options can also come from a flat ``key = value`` config file; explicit
flags override the file, which overrides built-in defaults. All errors go
to stderr with a nonzero exit code; data goes to stdout or the requested
output files.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from . import bench
from .blocks import BlockStoreConfig
from .data import parse_libsvm
from .metrics import METRICS
from .objective import Loss
from .trainer import TrainConfig, load_model, predict, save_model, train

TRAIN_DEFAULTS = {
    "rounds": 10,
    "max_depth": 8,
    "eta": 0.1,
    "lambda": 1.0,
    "gamma": 0.0,
    "colsample": 1.0,
    "subsample": 1.0,
    "tree_method": "exact",
    "eps": 0.03,
    "seed": 0,
    "min_child_hessian": 0.0,
    "loss": "squared_error",
    "threads": 0,
    "one_based": False,
    "num_features": 0,
    "block_size": 65536,
    "compress": False,
    "memory_budget_blocks": 4,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blockboost",
                                     description="gradient boosted trees over sorted column blocks")
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train a model from LibSVM data")
    tr.add_argument("--data", required=True)
    tr.add_argument("--model", required=True)
    tr.add_argument("--eval-data")
    tr.add_argument("--config", help="key = value config file; flags override it")
    tr.add_argument("--log-file")
    tr.add_argument("--rounds", type=int, default=argparse.SUPPRESS)
    tr.add_argument("--max-depth", type=int, default=argparse.SUPPRESS)
    tr.add_argument("--eta", type=float, default=argparse.SUPPRESS)
    tr.add_argument("--lambda", dest="lambda", type=float, default=argparse.SUPPRESS)
    tr.add_argument("--gamma", type=float, default=argparse.SUPPRESS)
    tr.add_argument("--colsample", type=float, default=argparse.SUPPRESS)
    tr.add_argument("--subsample", type=float, default=argparse.SUPPRESS)
    tr.add_argument("--tree-method", choices=("exact", "approx_global", "approx_local"),
                    default=argparse.SUPPRESS)
    tr.add_argument("--eps", type=float, default=argparse.SUPPRESS)
    tr.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    tr.add_argument("--min-child-hessian", type=float, default=argparse.SUPPRESS)
    tr.add_argument("--loss", choices=[l.value for l in Loss], default=argparse.SUPPRESS)
    tr.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    tr.add_argument("--one-based", action="store_true", default=argparse.SUPPRESS)
    tr.add_argument("--num-features", type=int, default=argparse.SUPPRESS)
    tr.add_argument("--block-size", type=int, default=argparse.SUPPRESS)
    tr.add_argument("--compress", action="store_true", default=argparse.SUPPRESS)
    tr.add_argument("--spill-dir", action="append", default=[])
    tr.add_argument("--memory-budget-blocks", type=int, default=argparse.SUPPRESS)

    pr = sub.add_parser("predict", help="write one prediction per line")
    pr.add_argument("--data", required=True)
    pr.add_argument("--model", required=True)
    pr.add_argument("--output", help="default: stdout")
    pr.add_argument("--output-margin", action="store_true",
                    help="emit raw scores before any transform")
    pr.add_argument("--one-based", action="store_true")

    ev = sub.add_parser("eval", help="evaluate a model on labelled data")
    ev.add_argument("--data", required=True)
    ev.add_argument("--model", required=True)
    ev.add_argument("--metric", choices=sorted(METRICS), required=True)
    ev.add_argument("--one-based", action="store_true")

    be = sub.add_parser("bench", help="run a named desk-scale experiment")
    be.add_argument("experiment", choices=bench.EXPERIMENTS)
    be.add_argument("--out", help="CSV output path (default: stdout)")
    be.add_argument("--seed", type=int, default=0)
    be.add_argument("--eps", default="0.3,0.1,0.05",
                    help="comma-separated eps list for approx-vs-exact")
    be.add_argument("--data", help="real dataset path for higgs-reference")
    be.add_argument("--rounds", type=int)
    return parser


def _read_config_file(path: str) -> dict:
    values = {}
    bool_keys = {k for k, v in TRAIN_DEFAULTS.items() if isinstance(v, bool)}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (part.strip() for part in line.partition("="))
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key = key.replace("-", "_")
            if key == "spill_dir":
                values.setdefault("spill_dir", []).append(value)
                continue
            if key not in TRAIN_DEFAULTS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            default = TRAIN_DEFAULTS[key]
            if key in bool_keys:
                values[key] = value.lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                values[key] = int(value)
            elif isinstance(default, float):
                values[key] = float(value)
            else:
                values[key] = value
    return values


def _cmd_train(args: argparse.Namespace) -> int:
    merged = dict(TRAIN_DEFAULTS)
    if args.config:
        merged.update(_read_config_file(args.config))
    explicit = {k: v for k, v in vars(args).items() if k in TRAIN_DEFAULTS}
    merged.update(explicit)
    spill_dirs = list(args.spill_dir or merged.pop("spill_dir", []) or [])
    merged.pop("spill_dir", None)

    matrix = parse_libsvm(args.data, one_based=merged["one_based"],
                          n_features=merged["num_features"] or None)
    eval_set = None
    if args.eval_data:
        eval_set = parse_libsvm(args.eval_data, one_based=merged["one_based"],
                                n_features=matrix.n_features)
    cfg = TrainConfig(
        num_rounds=merged["rounds"],
        max_depth=merged["max_depth"],
        eta=merged["eta"],
        reg_lambda=merged["lambda"],
        gamma=merged["gamma"],
        colsample=merged["colsample"],
        subsample=merged["subsample"],
        tree_method=merged["tree_method"],
        eps=merged["eps"],
        seed=merged["seed"],
        min_child_hessian=merged["min_child_hessian"],
        loss=merged["loss"],
        threads=merged["threads"],
    )
    block_cfg = BlockStoreConfig(
        block_size=merged["block_size"],
        compression=merged["compress"],
        spill_directories=tuple(spill_dirs),
        memory_budget_blocks=merged["memory_budget_blocks"],
    )
    log_stream = open(args.log_file, "w", encoding="utf-8") if args.log_file else sys.stdout
    try:
        def log_fn(rnd, name, value):
            log_stream.write(f"{rnd},{name},{float(value)!r}\n")

        ensemble = train(matrix, cfg, eval_set=eval_set, block_config=block_cfg,
                         log_fn=log_fn if eval_set is not None else None)
    finally:
        if args.log_file:
            log_stream.close()
    save_model(ensemble, args.model)
    return 0


def _cmd_predict(args: argparse.Namespace) -> int:
    ensemble = load_model(args.model)
    matrix = parse_libsvm(args.data, one_based=args.one_based,
                          n_features=ensemble.n_features)
    scores = predict(ensemble, matrix, output_margin=args.output_margin)
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for s in scores:
            out.write(f"{float(s)!r}\n")
    finally:
        if args.output:
            out.close()
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    ensemble = load_model(args.model)
    matrix = parse_libsvm(args.data, one_based=args.one_based,
                          n_features=ensemble.n_features)
    margin = args.metric in ("auc", "rmse")
    scores = predict(ensemble, matrix, output_margin=margin)
    value = METRICS[args.metric](matrix.labels, scores)
    sys.stdout.write(f"{args.metric},{float(value)!r}\n")
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    name = args.experiment
    if name == "sketch-guarantee":
        rows = bench.run_sketch_guarantee(seed=args.seed)
    elif name == "approx-vs-exact":
        eps_list = tuple(float(tok) for tok in args.eps.split(",") if tok)
        rows, _ = bench.run_approx_vs_exact(eps_list, seed=args.seed,
                                            **({"rounds": args.rounds} if args.rounds else {}))
    elif name == "sparsity-speedup":
        rows = bench.run_sparsity_speedup(seed=args.seed)
    elif name == "block-size-sweep":
        rows = bench.run_block_size_sweep(seed=args.seed)
    elif name == "higgs-reference":
        if not args.data:
            raise ValueError("higgs-reference requires --data pointing at LibSVM input")
        rows = bench.run_higgs_reference(args.data,
                                         **({"rounds": args.rounds} if args.rounds else {}))
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(f"unknown experiment {name!r}")
    stream = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(stream)
        writer.writerow(["experiment", "key", "value"])
        for row in rows:
            writer.writerow(row)
    finally:
        if args.out:
            stream.close()
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    np.seterr(over="ignore")
    handlers = {"train": _cmd_train, "predict": _cmd_predict,
                "eval": _cmd_eval, "bench": _cmd_bench}
    try:
        return handlers[args.command](args)
    except BrokenPipeError:
        return 1
    except Exception as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
