"""Command-line entry point: ``mononet <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 diverged
training, 4 verification found violations.  Outputs go to ``--out``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import baselines, bench
from .dataio import Dataset, load_csv, load_idx, split
from .errors import (ContractError, DataError, DimensionError, DivergedTrainingError, FormatError,
                     MonoNetError, ParseError, SpecError)
from .model import build_mononet, load, parse_spec_string, save
from .training import TrainConfig, evaluate_accuracy, predict, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED, EXIT_VIOLATIONS = 0, 1, 2, 3, 4

_CONFIG_HELP = {
    "epochs": "training epochs",
    "batch_size": "mini-batch size",
    "learning_rate": "optimizer step size",
    "optimizer": "adam or sgd",
    "beta1": "Adam first-moment decay",
    "beta2": "Adam second-moment decay",
    "eps": "Adam denominator epsilon",
    "seed": "seed for initialization and batch order",
    "loss": "auto, bce_with_logits or softmax_ce",
    "weight_decay": "L2 penalty on free weights",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_data_flags(p: argparse.ArgumentParser, required: bool = False) -> None:
    p.add_argument("--data", type=Path, help="CSV file, outcome in the first column")
    p.add_argument("--images", type=Path, help="IDX image file (alternative to --data)")
    p.add_argument("--labels", type=Path, help="IDX label file paired with --images")
    p.add_argument("--test-fraction", type=float, default=bench.TEST_FRACTION,
                   help="held-out fraction for the stratified split (default %(default)s)")
    p.add_argument("--split-seed", type=int, default=bench.SPLIT_SEED,
                   help="seed of the train/test split (default %(default)s)")


def _add_out(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", type=Path, required=True, help="output directory (created if missing)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mononet", description="Train, verify and interpret monotone neural networks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", help="train a model and save it with its history",
                       description="Train a dense MonoNet on CSV data or a hierarchical model on IDX images.")
    _add_data_flags(p)
    p.add_argument("--test-images", type=Path, help="IDX test images (skips the split)")
    p.add_argument("--test-labels", type=Path, help="IDX test labels paired with --test-images")
    p.add_argument("--spec", default="64,64,3,64",
                   help="free widths, interpretable width, monotone widths; e.g. 64,64,3,64 (default %(default)s)")
    p.add_argument("--arch", choices=("dense", "hierarchical"), default="dense",
                   help="dense MonoNet or conv + two monotone blocks (default %(default)s)")
    p.add_argument("--filters", type=int, default=bench.MNIST_FILTERS, help="conv filters (hierarchical)")
    p.add_argument("--kernel", type=int, default=5, help="square conv kernel size (hierarchical)")
    p.add_argument("--mono1", default=",".join(map(str, bench.MNIST_MONO1)),
                   help="summaries-to-hidden widths, last is the hidden width (hierarchical)")
    p.add_argument("--mono2", default=",".join(map(str, bench.MNIST_MONO2)),
                   help="hidden-to-logits widths before the class layer (hierarchical)")
    p.add_argument("--config", type=Path, help="key=value file of training settings; flags win")
    for f in fields(TrainConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", type=type(f.default),
                       default=None, help=f"{_CONFIG_HELP[f.name]} (default {f.default})")
    _add_out(p)

    p = sub.add_parser("eval", help="accuracy of a saved model",
                       description="Report the accuracy of a saved model on a split of the data.")
    p.add_argument("--model", type=Path, required=True, help="model file (.mnet)")
    _add_data_flags(p)
    p.add_argument("--split", choices=("test", "train", "all"), default="test",
                   help="which part of the data to score (default %(default)s)")
    _add_out(p)

    p = sub.add_parser("verify", help="probe the monotonicity guarantee",
                       description="Probe every monotone block; exit 4 if any violation is found.")
    p.add_argument("--model", type=Path, required=True, help="model file (.mnet)")
    p.add_argument("--probes", type=int, default=10000, help="probes per block (default %(default)s)")
    p.add_argument("--deltas", default="0.001,0.1,1.0", help="comma-separated step sizes (default %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="probe seed (default %(default)s)")
    p.add_argument("--tolerance", type=float, default=1e-9, help="allowed decrease (default %(default)s)")
    p.add_argument("--gradient-check", type=int, default=0, metavar="N",
                   help="also compare gradients with finite differences on N random inputs")
    p.add_argument("--out", type=Path, help="output directory; the report is printed when omitted")

    p = sub.add_parser("interpret", help="explain the interpretable units",
                       description="Rank training samples per interpretable unit and report feature gaps.")
    p.add_argument("--model", type=Path, required=True, help="model file (.mnet)")
    _add_data_flags(p)
    p.add_argument("--split", choices=("train", "test", "all"), default="train",
                   help="which part of the data to rank (default %(default)s)")
    p.add_argument("--q", type=float, default=0.1, help="top/bottom fraction (default %(default)s)")
    p.add_argument("--top-k", type=int, default=4, help="features listed per unit (default %(default)s)")
    _add_out(p)

    p = sub.add_parser("baseline", help="decision tree or risk-score baseline",
                       description="Fit CART or apply a risk-score table on the same split as train.")
    _add_data_flags(p)
    p.add_argument("--method", choices=("cart", "risk"), required=True, help="baseline family")
    p.add_argument("--max-depth", type=int, default=6, help="CART depth limit (default %(default)s)")
    p.add_argument("--min-leaf", type=int, default=5, help="CART minimum leaf size (default %(default)s)")
    p.add_argument("--table", default=None,
                   help="score table: bundled name (income, mushroom) or a feature,points CSV")
    p.add_argument("--offset", type=float, default=None,
                   help="risk-score offset; fitted on the training split when omitted")
    _add_out(p)

    p = sub.add_parser("trace", help="explain one image of a hierarchical model",
                       description="Trace increasing hidden features and filters for one image; dumps PGM maps.")
    p.add_argument("--model", type=Path, required=True, help="hierarchical model file (.mnet)")
    p.add_argument("--images", type=Path, required=True, help="IDX image file")
    p.add_argument("--labels", type=Path, help="IDX label file (needed by --first-misclassified)")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--index", type=int, help="sample index")
    g.add_argument("--first-misclassified", action="store_true", help="use the first misclassified sample")
    p.add_argument("--target-class", type=int, default=None, help="class to explain (default: predicted)")
    p.add_argument("--max-features", type=int, default=3, help="hidden features listed (default %(default)s)")
    p.add_argument("--max-filters", type=int, default=3, help="filters per feature (default %(default)s)")
    _add_out(p)

    p = sub.add_parser("bench", help="run the benchmark suites",
                       description="Risk suite: MonoNet, CART and risk-score accuracy on five datasets. "
                                   "MNIST suite: hierarchical model accuracy.")
    p.add_argument("--suite", choices=("risk", "mnist"), default="risk", help="benchmark (default %(default)s)")
    p.add_argument("--runs", type=int, default=10, help="MonoNet seeds per dataset (default %(default)s)")
    p.add_argument("--datasets", default=",".join(bench.RISK_DATASETS),
                   help="comma-separated subset of the risk datasets (default %(default)s)")
    p.add_argument("--data-dir", type=Path, default=None,
                   help="dataset directory (default $MONONET_DATA or ./data)")
    p.add_argument("--fast", action="store_true", help="MNIST: train on the first 10k images")
    _add_out(p)
    return parser


def _load_data(args) -> Dataset:
    if args.data is not None:
        if args.images is not None:
            raise UsageError("use either --data or --images/--labels")
        return load_csv(args.data)
    if args.images is not None and args.labels is not None:
        return load_idx(args.images, args.labels)
    raise UsageError("need --data, or --images with --labels")


def _split(args, data: Dataset) -> tuple[Dataset, Dataset]:
    return split(data, args.test_fraction, args.split_seed)


def _select(args, data: Dataset) -> Dataset:
    if args.split == "all":
        return data
    tr, te = _split(args, data)
    return tr if args.split == "train" else te


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    p = out / name
    p.write_text(text, encoding="utf-8")
    return p


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _widths(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad width list {text!r}") from exc


def cmd_train(args) -> int:
    overrides = {f.name: getattr(args, f"cfg_{f.name}") for f in fields(TrainConfig)}
    if args.config is not None:
        config = TrainConfig.from_file(args.config, **overrides)
    else:
        config = TrainConfig.from_mapping({k: v for k, v in overrides.items() if v is not None})
    data = _load_data(args)
    if args.test_images is not None:
        if args.test_labels is None:
            raise UsageError("--test-images needs --test-labels")
        tr, te = data, load_idx(args.test_images, args.test_labels)
    else:
        tr, te = _split(args, data)
    if args.arch == "hierarchical":
        from .hierarchy import ConvSpec, build_hierarchical
        if tr.features.ndim != 3:
            raise UsageError("--arch hierarchical needs image data (--images/--labels)")
        model = build_hierarchical(ConvSpec(args.filters, (args.kernel, args.kernel)), _widths(args.mono1),
                                   _widths(args.mono2), max(tr.n_classes, te.n_classes),
                                   tr.features.shape[1:], config.seed)
    else:
        n_out = 1 if max(tr.n_classes, te.n_classes) <= 2 else max(tr.n_classes, te.n_classes)
        model = build_mononet(parse_spec_string(args.spec, n_out), tr.flat_features.shape[1], config.seed)
    log = logging.getLogger("mononet.cli")
    model, hist = train(model, tr, config, te,
                        on_epoch=lambda e, h: log.info("epoch %d loss %.5f acc %.4f", e, h.loss[-1], h.accuracy[-1]))
    args.out.mkdir(parents=True, exist_ok=True)
    save(model, args.out / "model.mnet")
    _write(args.out, "history.json", _dumps({**hist.as_dict(), "config": model.meta["train_config"],
                                             "n_train": len(tr), "n_test": len(te)}))
    print(f"train accuracy {hist.accuracy[-1]:.4f}, test accuracy {hist.test_accuracy:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load(args.model)
    data = _select(args, _load_data(args))
    acc = evaluate_accuracy(model, data)
    _write(args.out, "eval.json", _dumps({"split": args.split, "n": len(data), "accuracy": acc}))
    print(f"accuracy {acc:.4f} on {len(data)} samples")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verification import gradient_check, probe_monotonicity
    model = load(args.model)
    try:
        deltas = [float(v) for v in args.deltas.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --deltas {args.deltas!r}") from exc
    report = probe_monotonicity(model, args.probes, deltas, args.seed, tolerance=args.tolerance)
    out = report.to_dict()
    if args.gradient_check > 0:
        g = gradient_check(model, args.gradient_check, args.seed)
        out["gradient_check"] = {"max_relative_error": g.max_relative_error, "compared": g.compared,
                                 "excluded_points": g.excluded_points}
    text = _dumps(out)
    if args.out is not None:
        _write(args.out, "probe_report.json", text)
    else:
        sys.stdout.write(text)
    print(f"{report.probes_run} probes, {len(report.violations)} violations", file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_VIOLATIONS


def cmd_interpret(args) -> int:
    from .interpretation import build_report
    model = load(args.model)
    data = _select(args, _load_data(args))
    report = build_report(model, data, args.q, args.top_k)
    _write(args.out, "report.json", report.to_json() + "\n")
    table = report.to_table()
    _write(args.out, "report.txt", table)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_baseline(args) -> int:
    data = _load_data(args)
    tr, te = _split(args, data)
    if args.method == "cart":
        tree = baselines.cart_fit(tr, args.max_depth, args.min_leaf)
        result = {"method": "cart", "max_depth": args.max_depth, "min_leaf": args.min_leaf,
                  "depth": tree.depth, "leaves": len(tree.leaves()),
                  "train_accuracy": baselines.cart_accuracy(tree, tr),
                  "test_accuracy": baselines.cart_accuracy(tree, te)}
    else:
        name = args.table or data.name
        path = Path(name)
        table = baselines.read_score_table(path) if path.suffix == ".csv" and path.exists() \
            else baselines.bundled_score_table(name)
        offset = args.offset if args.offset is not None else baselines.fit_offset(table, tr)
        table = table.with_offset(offset)
        result = {"method": "risk", "table": table.name, "offset": offset,
                  "train_accuracy": baselines.risk_accuracy(table, tr),
                  "test_accuracy": baselines.risk_accuracy(table, te)}
    _write(args.out, "baseline.json", _dumps(result))
    print(f"{args.method} test accuracy {result['test_accuracy']:.4f}")
    return EXIT_OK


def cmd_trace(args) -> int:
    from .dataio import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, read_idx
    from .hierarchy import dump_trace, trace_explanation
    model = load(args.model)
    images = read_idx(args.images, IDX_IMAGES_MAGIC).astype(np.float64) / 255.0
    labels = read_idx(args.labels, IDX_LABELS_MAGIC).astype(np.int64) if args.labels is not None else None
    if args.first_misclassified:
        if labels is None:
            raise UsageError("--first-misclassified needs --labels")
        wrong = np.flatnonzero(predict(model, images) != labels)
        if not len(wrong):
            raise ContractError("no misclassified sample")
        index = int(wrong[0])
    else:
        index = args.index
        if not 0 <= index < len(images):
            raise UsageError(f"--index {index} out of range for {len(images)} images")
    from .model import output
    pred = int(np.argmax(output(model, images[index][None])[0]))
    target = pred if args.target_class is None else args.target_class
    trace = trace_explanation(model, images[index], target, index,
                              None if labels is None else int(labels[index]), args.max_features, args.max_filters)
    dump_trace(trace, images[index], args.out)
    text = trace.render()
    _write(args.out, "trace.txt", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    if args.suite == "mnist":
        tr, te = bench.load_mnist(args.data_dir)
        model, acc = bench.run_mnist(tr, te, fast=args.fast)
        args.out.mkdir(parents=True, exist_ok=True)
        save(model, args.out / "model.mnet")
        _write(args.out, "results.json", _dumps({"suite": "mnist", "fast": args.fast, "test_accuracy": acc}))
        print(f"hierarchical MNIST test accuracy {acc:.4f}")
        return EXIT_OK
    names = [n.strip() for n in args.datasets.split(",") if n.strip()]
    unknown = sorted(set(names) - set(bench.RISK_DATASETS))
    if unknown:
        raise UsageError(f"unknown datasets {unknown}")
    results = bench.run_risk_suite(names, tuple(range(args.runs)), args.data_dir)
    table = bench.format_table(results)
    _write(args.out, "table.txt", table)
    _write(args.out, "results.json", bench.results_to_json(results) + "\n")
    sys.stdout.write(table)
    missing = [n for n, r in results.items() if "missing" in r]
    for n in missing:
        print(f"mononet bench: {results[n]['missing']}", file=sys.stderr)
    return EXIT_DATA if len(missing) == len(names) else EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "verify": cmd_verify, "interpret": cmd_interpret,
            "baseline": cmd_baseline, "trace": cmd_trace, "bench": cmd_bench}


def run(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv`` and run one subcommand; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:       # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"mononet {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergedTrainingError as exc:
        print(f"mononet {args.command}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, FormatError, ParseError, DimensionError, OSError) as exc:
        print(f"mononet {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SpecError, ContractError, MonoNetError) as exc:
        print(f"mononet {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
