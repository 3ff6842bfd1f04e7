"""Command-line entry point: ``sliceforge <command> [flags]``.

Exit status: 0 success, 2 input/configuration error, 3 data error,
4 compatibility error (checkpoint versus feature layout).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import sim
from .domain import PREDICTED_KINDS, SliceKind
from .errors import CompatibilityError, ConfigError, DataError, EmptyInputError, SliceforgeError, ValidationError
from .learned.predictor import SlicePredictorModel, TrainConfig, train_predictor
from .metrics import Averaging, SeriesKind, confusion, export_series, metrics
from .traffic import RowIssue, class_counts, generate_stream, load_dataset, write_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_COMPAT = 4

SEED_ENV = "SLICEFORGE_SEED"
PAIRS_HEADER = ("true", "predicted")


def resolve_seed(flag: int | None) -> int | None:
    """The --seed flag wins; otherwise SLICEFORGE_SEED; otherwise None (config default)."""
    if flag is not None:
        return flag
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from None


def _print_counts(counts: dict[SliceKind, int]) -> None:
    total = sum(counts.values())
    for kind, n in counts.items():
        share = 100.0 * n / total if total else 0.0
        print(f"{kind.value:<6} {n:>9d}  {share:6.2f}%")
    print(f"{'total':<6} {total:>9d}")


def cmd_gen_traffic(args: argparse.Namespace) -> int:
    scenario = sim.resolve_scenario(args.config)
    traffic = scenario.traffic
    if args.total is not None:
        if args.total < 0:
            raise ConfigError(f"--total must be >= 0, got {args.total}")
        traffic = replace(traffic, total_requests=args.total)
    seed = resolve_seed(args.seed)
    if seed is not None:
        traffic = replace(traffic, seed=seed)
    records = generate_stream(traffic)
    write_dataset(records, args.out)
    _print_counts(class_counts(records))
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    issues: list[RowIssue] = []
    try:
        records = load_dataset(args.data, issues)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.data}: {exc}") from exc
    for issue in issues:
        print(f"skipped {issue}", file=sys.stderr)
    if not records:
        raise EmptyInputError(f"{args.data} has no usable rows")
    seed = resolve_seed(args.seed)
    config = TrainConfig(
        train_fraction=args.split,
        epochs=args.epochs,
        seed=0 if seed is None else seed,
    )
    result = train_predictor(records, config)
    report = metrics(confusion(result.test_pairs()))
    print(f"trained on {len(result.train_indices)} rows, evaluated on {len(result.test_indices)}")
    print(f"final training loss {result.loss_history[-1]:.6f}")
    print(report.format_table())
    result.model.save(args.out)
    if args.pairs_out:
        write_pairs(result.test_pairs(), args.pairs_out)
    return EXIT_OK


def write_pairs(pairs: Sequence[tuple[SliceKind, SliceKind]], path: str | Path) -> None:
    """(true, predicted) rows for ``evaluate``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PAIRS_HEADER)
        for true, pred in pairs:
            w.writerow([true.value, pred.value])


def read_pairs(path: str | Path) -> list[tuple[SliceKind, SliceKind]]:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    pairs = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyInputError(f"{path} is empty")
        if tuple(h.strip().lower() for h in header) != PAIRS_HEADER:
            raise ValidationError(f"{path} line 1: expected header 'true,predicted', got {','.join(header)!r}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ValidationError(f"{path} line {line}: expected 2 fields, got {len(row)}")
            try:
                true, pred = (SliceKind.parse(c) for c in row)
            except ValueError as exc:
                raise ValidationError(f"{path} line {line}: {exc}") from None
            for kind in (true, pred):
                if kind not in PREDICTED_KINDS:
                    raise ValidationError(f"{path} line {line}: {kind.value} is not a predicted slice")
            pairs.append((true, pred))
    if not pairs:
        raise EmptyInputError(f"{path} has no pairs")
    return pairs


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario = sim.resolve_scenario(args.scenario)
    seed = resolve_seed(args.seed)
    if seed is not None:
        scenario = scenario.with_seed(seed)
    if args.scale != 1.0:
        scenario = scenario.scaled(args.scale)
    model = None
    if args.model is not None and args.model != sim.ORACLE:
        try:
            model = SlicePredictorModel.load(args.model)
        except OSError as exc:
            raise ConfigError(f"cannot read checkpoint {args.model}: {exc}") from exc
        except (ValueError, KeyError, TypeError) as exc:
            if isinstance(exc, SliceforgeError):
                raise
            raise CompatibilityError(f"{args.model} is not a predictor checkpoint: {exc}") from exc
    # fail on a bad checkpoint before touching the output directory
    model = sim.resolve_model(scenario, model)

    out = Path(args.out_dir)
    result = sim.run(scenario, model=model)
    out.mkdir(parents=True, exist_ok=True)
    sim.write_samples(result.samples, out / "samples.csv")
    sim.write_decisions(result.decisions, out / "decisions.csv")
    (out / "totals.json").write_text(json.dumps({"scenario": scenario.name, **result.totals}, indent=2) + "\n")
    if model is not None:
        write_pairs([(oracle, pred) for pred, oracle in result.pairs], out / "pairs.csv")
    for name, value in result.totals.items():
        print(f"{name:<20} {value}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    report = metrics(confusion(read_pairs(args.pairs)), Averaging.MICRO if args.micro else Averaging.MACRO)
    print(report.to_json() if args.json else report.format_table())
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    try:
        samples = sim.read_samples(args.samples)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.samples}: {exc}") from exc
    if args.skip_warmup < 0:
        raise ConfigError(f"--skip-warmup must be >= 0, got {args.skip_warmup}")
    n = export_series(samples, args.kind, args.out, skip_warmup_hours=args.skip_warmup)
    print(f"wrote {n} rows to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    # argparse itself exits with 2 on usage errors, matching EXIT_CONFIG
    parser = argparse.ArgumentParser(prog="sliceforge", description="5G slice admission simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-traffic", help="generate a synthetic request dataset")
    p.add_argument("--config", required=True, help="scenario file or preset name")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--total", type=int, help="override the request count")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_traffic)

    p = sub.add_parser("train", help="train the slice predictor")
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--split", type=float, default=0.65, help="training fraction (default 0.65)")
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--pairs-out", help="also write held-out (true, predicted) pairs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="run a scenario")
    p.add_argument("--scenario", required=True, help=f"preset ({', '.join(sorted(sim.paper_scenarios()))}) or scenario file")
    p.add_argument("--model", default=sim.ORACLE, help="predictor checkpoint, or 'oracle' (default)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--scale", type=float, default=1.0, help="multiply the request volume")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="metrics for a (true, predicted) pairs file")
    p.add_argument("--pairs", required=True)
    p.add_argument("--micro", action="store_true", help="micro instead of macro averaging")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="export a per-slice series from samples.csv")
    p.add_argument("--samples", required=True)
    p.add_argument("--kind", choices=[k.value for k in SeriesKind], default=SeriesKind.ACTIVE_USERS.value)
    p.add_argument("--out", required=True)
    p.add_argument("--skip-warmup", type=float, default=1.0, help="hours to leave out at the start (default 1)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CompatibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SliceforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
