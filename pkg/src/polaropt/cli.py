"""Command-line entry point: ``polaropt {audit,counterexample,train,sweep}``.

Exit codes: 0 success, 1 usage or I/O error, 2 audit band violation (or a
failed counterexample check), 3 training divergence.

A flat ``key = value`` file passed with ``--config`` supplies defaults for
the chosen subcommand; explicit flags still win. Every output file gets a
``<out>.manifest.json`` sidecar recording how it was produced. The output
itself never contains timestamps or timings, so reruns are byte-identical.
"""

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .gauge_audit import (REFERENCE_SHAPES, counterexample_check, counterexample_matrices,
                          rotation_2d, rows_to_csv, rows_to_table, run_shape_audit)
from .optim import OPTIMIZERS
from .validation import parse_float_list, parse_int_list

logger = logging.getLogger("polaropt")

FORMAT_VERSION = "1"
EXIT_OK, EXIT_USAGE, EXIT_BAND, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- flag types -----------------------------------------------------------------


def positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def nonnegative_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def nonnegative_float(text):
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def eps_list(text):
    try:
        values = parse_float_list(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number in {text!r}") from None
    if not values or any(not (v > 0 and math.isfinite(v)) for v in values):
        raise argparse.ArgumentTypeError(f"eps values must be finite and > 0: {text!r}")
    return values


def shape_list(text):
    """``reference`` or comma-separated ``RxC`` items."""
    if text.strip() == "reference":
        return list(REFERENCE_SHAPES)
    shapes = []
    for tok in text.split(","):
        tok = tok.strip()
        try:
            rows, cols = (int(x) for x in tok.lower().split("x"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad shape {tok!r}, expected RxC") from None
        if rows < 1 or cols < 1:
            raise argparse.ArgumentTypeError(f"bad shape {tok!r}")
        shapes.append((tok, rows, cols))
    return shapes


def int_list(text):
    try:
        values = parse_int_list(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"need positive integers: {text!r}")
    return values


def optimizer_list(text):
    names = [t.strip().lower() for t in text.split(",") if t.strip()]
    bad = [n for n in names if n not in OPTIMIZERS]
    if not names or bad:
        raise argparse.ArgumentTypeError(f"unknown optimizer(s) {bad}; choose from {OPTIMIZERS}")
    return [o for o in OPTIMIZERS if o in names]


# -- parser ---------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="polaropt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"polaropt {__version__} (output format {FORMAT_VERSION})")
    parser.add_argument("--config", help="flat key = value file with flag defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("audit", help="conjugation-deviation audit over matrix shapes")
    p.add_argument("--shapes", type=shape_list, default="reference")
    p.add_argument("--triples", type=positive_int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path; the table goes to stdout either way")
    p.add_argument("--format", choices=("csv", "table"), default="table",
                   help="what to print on stdout")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("counterexample", help="2x2 gauge counterexample for rho_eps")
    p.add_argument("--eps", type=eps_list, default="1e-3,1e-1,1,10")
    p.set_defaults(func=cmd_counterexample)

    p = sub.add_parser("train", help="one SO(3) training run")
    _add_run_flags(p)
    p.add_argument("--optimizer", choices=OPTIMIZERS, default="muon")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=nonnegative_float, default=None)
    p.add_argument("--out", help="JSON run record path (default: stdout)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="paired-seed grid over widths and optimizers")
    _add_run_flags(p, single_hc=False)
    p.add_argument("--optimizers", type=optimizer_list, default=",".join(OPTIMIZERS))
    p.add_argument("--seeds", type=positive_int, default=20)
    p.add_argument("--parallel", type=positive_int, default=1)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--runs-out", help="optional JSON file with every run record")
    p.set_defaults(func=cmd_sweep)
    parser.subcommands = sub.choices
    return parser


def _add_run_flags(p, single_hc=True):
    if single_hc:
        p.add_argument("--hc", type=positive_int, default=16)
    else:
        p.add_argument("--hc-list", type=int_list, default="16")
    p.add_argument("--epochs", type=nonnegative_int, default=100)
    p.add_argument("--warmup", type=nonnegative_int, default=10)
    p.add_argument("--patience", type=positive_int, default=30)
    p.add_argument("--wd", type=nonnegative_float, default=0.0)
    p.add_argument("--aux-lr", type=nonnegative_float, default=None)
    p.add_argument("--layers", type=positive_int, default=3)
    p.add_argument("--n-train", type=positive_int, default=2048)
    p.add_argument("--n-test", type=positive_int, default=512)
    p.add_argument("--n-points", type=positive_int, default=32)
    p.add_argument("--ns-precision", choices=("bf16", "full"), default="bf16")


# -- config file ----------------------------------------------------------------


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment. Dashes in keys become underscores."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{lineno}: expected key = value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        cfg = read_config(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    sub = parser.subcommands[args.command]
    known = {a.dest for a in sub._actions} - {"help", "func"}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    # string defaults go through each flag's type, same as command-line text
    sub.set_defaults(**cfg)
    return parser.parse_args(argv)


# -- output ---------------------------------------------------------------------


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def write_manifest(out, args, seed, wall_seconds, extra_paths=()):
    """Write ``<out>.manifest.json`` next to ``out``; nothing for stdout output."""
    if out is None:
        return None
    snapshot = {k: v for k, v in vars(args).items() if k not in ("func", "verbose", "argv")}
    manifest = {
        "command": args.command,
        "argv": args.argv,
        "config": snapshot,
        "master_seed": seed,
        "artifacts": [str(out), *map(str, extra_paths)],
        "tool_version": __version__,
        "format_version": FORMAT_VERSION,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "wall_seconds": round(wall_seconds, 3),
    }
    path = Path(f"{out}.manifest.json")
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return path


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


# -- commands -------------------------------------------------------------------


def cmd_audit(args):
    start = time.perf_counter()
    rows = run_shape_audit(args.shapes, n_triples=args.triples, master_seed=args.seed)
    text = rows_to_csv(rows)
    if args.out:
        _write(args.out, text)
        write_manifest(args.out, args, args.seed, time.perf_counter() - start)
    sys.stdout.write(text if args.format == "csv" else rows_to_table(rows))
    bad = [r.shape_label for r in rows if not r.within_bands()]
    if bad:
        logger.error("band violation for: %s", ", ".join(bad))
        return EXIT_BAND
    return EXIT_OK


def cmd_counterexample(args):
    ok = True
    p = rotation_2d(math.pi / 4)
    print(f"{'eps':>10}  {'lhs_factor':>14}  {'rhs_factor':>14}  {'gap':>14}  {'matrix_err':>10}")
    for eps in args.eps:
        lhs, rhs, gap = counterexample_check(eps)
        lhs_m, rhs_m = counterexample_matrices(eps)
        err = max(np.abs(lhs_m - lhs * p).max(), np.abs(rhs_m - rhs * p).max())
        ok &= gap > 1e-12 and err <= 1e-12
        print(f"{eps:>10g}  {lhs:>14.6f}  {rhs:>14.6f}  {gap:>14.6e}  {err:>10.1e}")
    return EXIT_OK if ok else EXIT_BAND


def _train_config(args, **override):
    from .so3.training import TrainConfig

    fields = dict(
        hc=getattr(args, "hc", 16), n_layers=args.layers, epochs=args.epochs,
        warmup_epochs=args.warmup, patience=args.patience, weight_decay=args.wd,
        aux_lr=args.aux_lr, n_train=args.n_train, n_test=args.n_test,
        n_points=args.n_points, ns_precision=args.ns_precision,
    )
    fields.update(override)
    return TrainConfig(**fields)


def cmd_train(args):
    from .exceptions import DivergenceDetected
    from .so3.training import train

    config = _train_config(args, optimizer=args.optimizer, seed=args.seed, lr=args.lr)
    start = time.perf_counter()
    try:
        result = train(config)
    except DivergenceDetected as exc:
        logger.error("run diverged: %s", exc)
        return EXIT_DIVERGED
    record = result.record(include_wall=False)
    _write(args.out, _dumps(record))
    write_manifest(args.out, args, args.seed, time.perf_counter() - start)
    if args.out:
        print(f"final_test_mse={result.final_test_mse:.6g} best_epoch={result.best_epoch} "
              f"stopped_epoch={result.stopped_epoch} wall={result.wall_seconds:.1f}s")
    return EXIT_OK


def sweep_csv(rows):
    from .so3.training import SWEEP_HEADER

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for row in rows:
        writer.writerow(["" if row[k] is None else
                         repr(row[k]) if isinstance(row[k], float) else row[k]
                         for k in SWEEP_HEADER])
    return buf.getvalue()


def sweep_table(rows):
    def fmt(x, spec):
        return "-" if x is None or (isinstance(x, float) and math.isnan(x)) else format(x, spec)

    lines = [f"{'hc':>4}  {'optimizer':<16}{'mean MSE':>11}{'n':>4}{'paired D':>12}"
             f"{'paired t':>10}{'sign>0':>8}{'beats AdamW':>13}"]
    for r in rows:
        lines.append(f"{r['hc']:>4}  {r['optimizer']:<16}{fmt(r['mean_mse'], '.5f'):>11}"
                     f"{r['n']:>4}{fmt(r['paired_delta'], '+.5f'):>12}"
                     f"{fmt(r['paired_t'], '.2f'):>10}{fmt(r['sign_fraction'], '.2f'):>8}"
                     f"{fmt(r['beats_adamw_fraction'], '.2f'):>13}")
    return "\n".join(lines) + "\n"


def cmd_sweep(args):
    from .so3.training import run_sweep, summarize_sweep

    base = _train_config(args)
    start = time.perf_counter()
    results = run_sweep(base, args.hc_list, args.optimizers, args.seeds, args.parallel)
    rows = summarize_sweep(results)
    _write(args.out, sweep_csv(rows))
    extra = []
    if args.runs_out:
        _write(args.runs_out, _dumps([r.record(include_wall=False) for r in results]))
        extra.append(args.runs_out)
    write_manifest(args.out, args, 0, time.perf_counter() - start, extra)
    if args.out:
        sys.stdout.write(sweep_table(rows))
    failed = [r.config for r in results if r.diverged]
    for cfg in failed:
        logger.warning("excluded: hc=%d optimizer=%s seed=%d diverged",
                       cfg.hc, cfg.optimizer, cfg.seed)
    return EXIT_OK


def main(argv=None):
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    args.argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"polaropt: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
