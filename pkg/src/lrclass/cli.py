"""Command-line entry point.

Subcommands: ``simulate``, ``power``, ``thresholds``, ``classify-eval`` and
``lr``. Every run needs a seed (``--seed``, the config file, or the
``KINSHIP_SEED`` environment variable); there is no clock-based default.

Exit codes: 0 success, 2 validation error, 3 computation error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .classify import make_classifier
from .errors import (
    FoldTooSmall,
    InsufficientSamples,
    LRClassError,
    ParseError,
    UnknownAllele,
    UnseenFeatureLevel,
    ValidationError,
)
from .freqdata import load_frequency_table, parse_priors
from .kinship import STATISTICS, LrEngine
from .metrics import confusion_from_arrays, kfold_evaluate, summarize
from .power import (
    DEFAULT_ALPHA,
    SimulationPlan,
    alpha_grid,
    estimate_power,
    run_null_distribution,
    scale_alpha,
    simulate_statistics,
    sweep_fpr,
    threshold_rule,
    write_lr_csv,
)
from .simulate import (
    DOMAIN_ALT,
    RELATIONSHIPS,
    RelationshipTheta,
    iter_pair_blocks,
    labels_to_indices,
    read_profiles,
    simulate_individuals,
    indices_to_labels,
    write_pair_dump,
    write_profiles,
)

logger = logging.getLogger("lrclass")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser, *, table: bool = True) -> None:
    p.add_argument("--config", help="flat key/value YAML or JSON file; flags override it")
    p.add_argument("--seed", type=int, help="master seed (falls back to $KINSHIP_SEED)")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--dump-config", action="store_true", help="write the resolved config next to the output")
    p.add_argument("-v", "--verbose", action="count", default=0)
    if table:
        p.add_argument("--freq", help="allele frequency CSV (allele,locus,<subpop>...)")
        p.add_argument("--priors", help="subpopulation proportions p1,...,pR (default uniform)")
        p.add_argument("--freq-floor", type=float, help="fill alleles missing from a subpopulation")
        p.add_argument("--renormalize", action="store_true", help="rescale columns to sum to one")


def _relationship(p: argparse.ArgumentParser) -> None:
    p.add_argument("--relationship", choices=["pc", "sb", "custom"], default="sb")
    p.add_argument("--theta", help="z0,z1,z2 for --relationship custom")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lrclass", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate labelled profiles or related pairs")
    _common(p)
    _relationship(p)
    p.add_argument("--n", type=int, default=100_000, help="individuals (or pairs with --pairs)")
    p.add_argument("--pairs", action="store_true", help="dump related pairs instead of individuals")
    p.add_argument("--out", required=False, help="output CSV")

    p = sub.add_parser("power", help="null/alternative simulation, thresholds and power")
    _common(p)
    _relationship(p)
    p.add_argument("--n-null", type=int, default=1_000_000)
    p.add_argument("--n-alt", type=int, default=1_000_000)
    p.add_argument("--alpha", help="comma-separated FPRs (default 1.7e-5 for pc, 1.2e-5 for sb)")
    p.add_argument("--sweep", help="lo:hi:steps FPR grid for power curves")
    p.add_argument("--statistics", default=",".join(STATISTICS))
    p.add_argument("--out", help="report JSON")
    p.add_argument("--curves", help="curves CSV")
    p.add_argument("--lr-out", help="per-pair statistics CSV (null then alternative)")
    p.add_argument("--linear", action="store_true", help="raw ratios in --lr-out instead of log10")
    p.add_argument("--spill", action="store_true", help="keep samples in temporary files, not memory")

    p = sub.add_parser("thresholds", help="null distribution and thresholds only")
    _common(p)
    _relationship(p)
    p.add_argument("--n-null", type=int, default=1_000_000)
    p.add_argument("--alpha", help="comma-separated FPRs")
    p.add_argument("--out", help="thresholds JSON")

    p = sub.add_parser("classify-eval", help="compare Naive Bayes and softmax classifiers")
    _common(p)
    p.add_argument("--methods", default="nb,lrA,lrB")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--train-size", type=int, help="simulate this many training profiles")
    p.add_argument("--train", help="training profile CSV (id,subpop,<locus>_a,<locus>_b,...)")
    p.add_argument("--test", help="held-out profile CSV, or predictions CSV with true,predicted")
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--solver", choices=["lbfgs", "gd"], default="lbfgs")
    p.add_argument("--models-dir", help="save softmax models fitted on the full training set")
    p.add_argument("--out", help="evaluation report JSON")

    p = sub.add_parser("lr", help="statistics for pairs in a pair-dump CSV")
    _common(p)
    _relationship(p)
    p.add_argument("--pairs", required=False, help="pair dump (pair_id,member,subpop,...)")
    p.add_argument("--linear", action="store_true")
    p.add_argument("--out", help="output CSV (default stdout)")
    return parser


def _load_config(path: str) -> dict:
    with open(path) as handle:
        doc = yaml.safe_load(handle) or {}
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: config must be a flat key/value mapping")
    out = {}
    for key, value in doc.items():
        if isinstance(value, (dict, list)):
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            else:
                raise ValidationError(f"{path}: key {key!r} is nested; config must be flat")
        out[str(key).replace("-", "_")] = value
    return out


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        config = _load_config(args.config)
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = set(config) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        defaults = {k: (str(v) if not isinstance(v, bool) else v) for k, v in config.items()}
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if args.seed is None:
        env = os.environ.get("KINSHIP_SEED")
        if env is None:
            raise ValidationError("a seed is required: pass --seed, set it in --config, or set KINSHIP_SEED")
        try:
            args.seed = int(env)
        except ValueError:
            raise ValidationError(f"KINSHIP_SEED={env!r} is not an integer") from None
    if args.seed < 0:
        raise ValidationError("seed must be nonnegative")
    return args


# ---------------------------------------------------------------------------
# helpers


def _table(args):
    if not args.freq:
        raise ValidationError("--freq is required")
    priors = parse_priors(args.priors) if args.priors else None
    return load_frequency_table(args.freq, priors, freq_floor=args.freq_floor, renormalize=args.renormalize)


def _theta(args) -> RelationshipTheta:
    if args.relationship == "custom":
        if not args.theta:
            raise ValidationError("--relationship custom needs --theta z0,z1,z2")
        return RelationshipTheta.parse(args.theta)
    if args.theta:
        raise ValidationError("--theta only applies to --relationship custom")
    return RELATIONSHIPS[args.relationship]


def _alphas(args, n_null: int) -> list[float]:
    if args.alpha:
        try:
            return [float(a) for a in args.alpha.split(",") if a.strip()]
        except ValueError:
            raise ValidationError(f"cannot parse --alpha {args.alpha!r}") from None
    default = DEFAULT_ALPHA.get(args.relationship, 1e-3)
    return [scale_alpha(default, n_null)]


def _finite_json(obj):
    # strict JSON has no infinities; write them as the strings "inf"/"-inf"/"nan"
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _finite_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_json(v) for v in obj]
    return obj


def _write_json(path, doc) -> None:
    text = json.dumps(_finite_json(doc), indent=2, allow_nan=False) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _dump_config(args) -> None:
    if not args.dump_config:
        return
    out = getattr(args, "out", None)
    directory = Path(out).parent if out else Path(".")
    resolved = {k: v for k, v in vars(args).items() if k not in {"dump_config", "verbose"}}
    (directory / f"{args.command}-config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    table = _table(args)
    if args.n < 1:
        raise ValidationError("--n must be at least 1")
    if not args.out:
        raise ValidationError("--out is required")
    if args.pairs:
        theta = _theta(args)
        blocks = iter_pair_blocks(table, theta, args.n, args.seed, DOMAIN_ALT, shared_subpop=True)
        write_pair_dump(args.out, table, blocks)
        logger.info("wrote %d pairs to %s", args.n, args.out)
        _dump_config(args)
        return EXIT_OK
    geno, subs = simulate_individuals(table, args.n, args.seed)
    write_profiles(args.out, table, geno, subs)
    counts = np.bincount(subs, minlength=table.n_subpops)
    for name, c in zip(table.subpop_names, counts):
        print(f"{name}\t{c}", file=sys.stderr)
    _dump_config(args)
    return EXIT_OK


def _plan(args, table, n_alt: int) -> SimulationPlan:
    theta = _theta(args)
    alphas = _alphas(args, args.n_null)
    stats = tuple(s.strip() for s in getattr(args, "statistics", ",".join(STATISTICS)).split(",") if s.strip())
    return SimulationPlan(table, theta, args.n_null, n_alt, tuple(alphas), args.seed, stats)


def cmd_power(args) -> int:
    table = _table(args)
    plan = _plan(args, table, args.n_alt)
    grid = None
    if args.sweep:
        try:
            lo, hi, steps = args.sweep.split(":")
            grid = alpha_grid(float(lo), float(hi), int(steps))
        except ValueError:
            raise ValidationError(f"--sweep must be lo:hi:steps, got {args.sweep!r}") from None
    import tempfile
    from contextlib import nullcontext

    with tempfile.TemporaryDirectory() if args.spill else nullcontext() as spill_dir:
        logger.info("simulating %d null pairs", plan.replicates_null)
        null_stats, null_cls = simulate_statistics(
            plan, "null", workers=args.workers, spill_dir=spill_dir, with_classes=True
        )
        null_sorted = {name: np.sort(null_stats[:, k]) for k, name in enumerate(STATISTICS)}
        logger.info("simulating %d alternative pairs", plan.replicates_alt)
        alt_stats, alt_cls = simulate_statistics(
            plan, "alt", workers=args.workers, spill_dir=spill_dir, with_classes=True
        )
        report = estimate_power(plan, null_sorted, alt_stats=alt_stats)
        if grid:
            report.sweep, report.sweep_errors = sweep_fpr(plan, grid, null_sorted, alt_stats=alt_stats)
            for err in report.sweep_errors:
                logger.warning("sweep point skipped: %s", err["error"])
        if args.lr_out:
            write_lr_csv(args.lr_out, "null", null_stats, null_cls, linear=args.linear)
            write_lr_csv(args.lr_out, "alt", alt_stats, alt_cls, linear=args.linear, append=True)
        del null_stats, alt_stats, null_sorted
    _write_json(args.out, report.to_json())
    if args.curves:
        with open(args.curves, "w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["statistic", "alpha", "threshold_log10", "power", "ci_lo", "ci_hi"])
            for row in report.curves_rows():
                writer.writerow([row[0], *(repr(float(v)) for v in row[1:])])
    _dump_config(args)
    if report.sweep_errors:
        # outputs are written for inspection, but the report is incomplete
        print(f"error: {len(report.sweep_errors)} sweep points not estimable", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_thresholds(args) -> int:
    table = _table(args)
    plan = _plan(args, table, 1)
    null_sorted = run_null_distribution(plan, workers=args.workers)
    doc = {"plan": {k: v for k, v in plan.describe().items() if k != "replicates_alt"}, "thresholds": {}}
    for name in plan.statistics:
        per = {}
        for a in plan.alphas:
            rule = threshold_rule(null_sorted[name], a)
            per[repr(a)] = {
                "threshold_log": rule.value,
                "threshold_log10": rule.value / np.log(10.0),
                "tie_weight": rule.tie_weight,
                "realized_fpr": rule.realized_fpr,
                "above": rule.above,
                "tied": rule.tied,
            }
        doc["thresholds"][name] = per
    _write_json(args.out, doc)
    _dump_config(args)
    return EXIT_OK


def _class_indices(table, subpop_labels) -> np.ndarray:
    return np.array([table.subpop_index(s) for s in subpop_labels], dtype=np.int64)


def _check_loci(table, locus_names, path) -> None:
    if tuple(locus_names) != table.locus_names:
        raise ValidationError(f"{path}: loci {locus_names} do not match the frequency table {list(table.locus_names)}")


def _read_predictions(path, table) -> dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] | None:
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        fields = reader.fieldnames or []
        if "true" not in fields or "predicted" not in fields:
            return None
        grouped: dict[str, list] = {}
        for row in reader:
            method = (row.get("method") or "predictions").strip()
            pred = row["predicted"].strip()
            grouped.setdefault(method, []).append(
                (table.subpop_index(row["true"].strip()), table.subpop_index(pred) if pred else -1)
            )
    out = {}
    for method, rows in grouped.items():
        arr = np.array(rows, dtype=np.int64).reshape(-1, 2)
        out[method] = (arr[:, 0], arr[:, 1], arr[:, 1] < 0)
    return out


def cmd_classify_eval(args) -> int:
    table = _table(args)
    hyper = dict(l2=args.l2, max_iter=args.max_iter, tol=args.tol, solver=args.solver)
    names = [m.strip() for m in args.methods.split(",") if m.strip()]
    classifiers = [make_classifier(m, table, **hyper) for m in names]
    report: dict = {"methods": [c.name for c in classifiers], "classes": list(table.subpop_names)}

    train_labels = train_y = None
    if args.train:
        _, subs, loci, train_labels = read_profiles(args.train)
        _check_loci(table, loci, args.train)
        train_y = _class_indices(table, subs)
    elif args.train_size:
        geno, train_y = simulate_individuals(table, args.train_size, args.seed)
        train_labels = indices_to_labels(table, geno)

    if train_labels is not None and args.k:
        results = kfold_evaluate(
            train_labels, train_y, args.k, classifiers, args.seed, n_classes=table.n_subpops, workers=args.workers
        )
        report["kfold"] = {"k": args.k, "n": int(len(train_y)), "methods": {n: r.to_json() for n, r in results.items()}}
        for name, r in results.items():
            print(f"{name}\tkfold overall accuracy {r.summary.overall_accuracy:.4f}", file=sys.stderr)

    if args.test:
        predictions = _read_predictions(args.test, table)
        test: dict = {}
        if predictions is not None:
            for method, (y_true, y_pred, excluded) in predictions.items():
                cm = confusion_from_arrays(y_true, y_pred, excluded, table.n_subpops)
                test[method] = {"confusion": cm.to_json(), "summary": summarize(cm).to_json()}
        else:
            _, subs, loci, test_labels = read_profiles(args.test)
            _check_loci(table, loci, args.test)
            test_y = _class_indices(table, subs)
            for clf in classifiers:
                if clf.trainable:
                    if train_labels is None:
                        raise ValidationError(f"{clf.name} needs --train or --train-size")
                    clf.fit(train_labels, train_y)
                    if args.models_dir:
                        from .classify import save_model

                        Path(args.models_dir).mkdir(parents=True, exist_ok=True)
                        save_model(clf.model, Path(args.models_dir) / f"{clf.name}.json")
                pred, excluded = clf.predict(test_labels)
                cm = confusion_from_arrays(test_y, pred, excluded, table.n_subpops)
                test[clf.name] = {"confusion": cm.to_json(), "summary": summarize(cm).to_json()}
        for method, entry in test.items():
            acc = entry["summary"]["overall"]["accuracy"]
            print(f"{method}\ttest overall accuracy {acc:.4f} (excluded {entry['confusion']['excluded']})", file=sys.stderr)
        report["test"] = test
    if "kfold" not in report and "test" not in report:
        raise ValidationError("nothing to evaluate: give --train/--train-size and/or --test")
    _write_json(args.out, report)
    _dump_config(args)
    return EXIT_OK


def cmd_lr(args) -> int:
    table = _table(args)
    theta = _theta(args)
    if not args.pairs:
        raise ValidationError("--pairs is required")
    with open(args.pairs, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[:3] != ["pair_id", "member", "subpop"]:
            raise ParseError(f"{args.pairs}: header must start with pair_id,member,subpop")
        rows = list(reader)
    if len(rows) % 2:
        raise ParseError(f"{args.pairs}: odd number of member rows")
    ids, labels = [], np.empty((len(rows), table.n_loci, 2), dtype=object)
    for i, row in enumerate(rows):
        if len(row) != 3 + 2 * table.n_loci:
            raise ParseError(f"{args.pairs}:{i + 2}: wrong number of fields")
        cells = row[3:]
        for j in range(table.n_loci):
            labels[i, j] = (cells[2 * j], cells[2 * j + 1])
        if i % 2 == 0:
            ids.append(row[0])
        elif row[0] != ids[-1]:
            raise ParseError(f"{args.pairs}:{i + 2}: members of pair {ids[-1]} are not adjacent")
    geno = labels_to_indices(table, labels)
    stats, _, cls = LrEngine(table, theta).statistics(geno[0::2], geno[1::2])
    write_lr_csv(args.out or sys.stdout, args.relationship, stats, cls, linear=args.linear, ids=ids)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "power": cmd_power,
    "thresholds": cmd_thresholds,
    "classify-eval": cmd_classify_eval,
    "lr": cmd_lr,
}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = parse_args(argv)
        logging.getLogger("lrclass").setLevel(logging.INFO if args.verbose else logging.WARNING)
        return COMMANDS[args.command](args)
    except (ValidationError, ParseError, UnknownAllele, UnseenFeatureLevel, InsufficientSamples, FoldTooSmall) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except LRClassError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
