"""Command-line front end.

Exit codes: 0 success, 2 configuration or usage error, 3 verification failure
(an empirical statistic more than 4 standard errors from its oracle).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import analytics
from .config import bundled_names, load_config
from .engine import ExperimentConfig, SummaryStats, run_experiment, sweep_n
from .errors import ConfigurationError
from .photonics import make_rect_state, mz_distribution

log = logging.getLogger("phaseqkd")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFICATION = 3
OUT_ENV = "PHASEQKD_OUT_DIR"
SWEEP_HEADER = [
    "n",
    "improved_empirical",
    "improved_oracle",
    "conventional_empirical",
    "conventional_oracle",
    "stderr_improved",
    "stderr_conventional",
]


def fmt(value) -> str:
    """CSV cell: 9 significant digits for floats, no locale."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".9g")
    return str(value)


def write_records(records: list[dict], path: Path, fmt_name: str) -> None:
    if fmt_name == "jsonl":
        text = "".join(json.dumps(r) + "\n" for r in records)
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(list(records[0]))
        for r in records:
            writer.writerow([fmt(v) for v in r.values()])
        text = buf.getvalue()
    path.write_text(text, encoding="utf-8")


def _num(value, width=10, digits=6) -> str:
    return "n/a".rjust(width) if value is None else f"{value:{width}.{digits}f}"


def render_report(stats: SummaryStats) -> str:
    out = [
        f"{stats.name or '(unnamed)'}: {stats.protocol}/{stats.scheme} N={stats.n_slots} "
        f"trials={stats.trials} seed={stats.master_seed} attack={stats.attack_fraction:g}",
        f"  key efficiency {_num(stats.key_efficiency)} +/- {_num(stats.key_efficiency_stderr, 8)}"
        f"   oracle {_num(stats.oracle_key_efficiency)}   z={_num(stats.z_key_efficiency, 7, 2)}",
        f"  sifted QBER    {_num(stats.qber)} +/- {_num(stats.qber_stderr, 8)}"
        f"   oracle {_num(stats.oracle_qber)}   z={_num(stats.z_qber, 7, 2)}",
    ]
    fractions = stats.instance_fractions()
    marg = analytics.instance_marginals(stats.n_slots)
    out.append("  instances      " + " ".join(f"{f:.4f}" for f in fractions)
               + "   (ideal " + ":".join(str(int(m * 2 * stats.n_slots)) for m in marg) + ")")
    out.append("  verdicts       " + ", ".join(f"{k.lower()}={v}" for k, v in stats.verdict_counts.items()))
    out.append(f"  ambiguous={stats.ambiguous_count} dark_suspect={stats.dark_suspect_count}")
    out.append("  status         " + ("PASS" if stats.passed else "VERIFICATION_FAILURE"))
    return "\n".join(out) + "\n"


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "results")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _override(config: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.trials is not None:
        changes["trials"] = args.trials
    return replace(config, **changes) if changes else config


def cmd_run(args) -> int:
    configs = [_override(load_config(c), args) for c in args.configs]
    stats = [run_experiment(c, workers=args.workers) for c in configs]
    out = _out_dir(args)
    ext = "jsonl" if args.format == "jsonl" else "csv"
    write_records([s.to_record() for s in stats], out / f"summary.{ext}", args.format)
    report = "".join(render_report(s) for s in stats)
    (out / "report.txt").write_text(report, encoding="utf-8")
    sys.stdout.write(report)
    failed = [s.name for s in stats if not s.passed]
    if failed:
        print(f"VERIFICATION_FAILURE: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFICATION
    return EXIT_OK


def cmd_sweep_n(args) -> int:
    if not 2 <= args.n_min <= args.n_max:
        raise UsageError(f"need 2 <= n_min <= n_max, got {args.n_min}..{args.n_max}")
    base = _override(load_config(args.config), args)
    trials = args.trials or 100_000
    rows = sweep_n(base, range(args.n_min, args.n_max + 1), trials=trials, workers=args.workers)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for row in rows:
        writer.writerow([row.n] + [fmt(v) for v in row[1:7]])
    out = _out_dir(args)
    (out / "sweep_n.csv").write_text(buf.getvalue(), encoding="utf-8")
    sys.stdout.write(buf.getvalue())
    failed = [s.name for row in rows for s in (row.improved, row.conventional) if not s.passed]
    if failed:
        print(f"VERIFICATION_FAILURE: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFICATION
    return EXIT_OK


def cmd_attack(args) -> int:
    if not 0.0 <= args.fraction <= 1.0:
        raise UsageError(f"fraction must lie in [0, 1], got {args.fraction}")
    config = replace(_override(load_config(args.config), args), attack_fraction=args.fraction)
    stats = run_experiment(config, workers=args.workers)
    ideal = float(analytics.intercept_resend_qber(config.protocol, args.fraction, config.eve_analyzer))
    record = {
        "protocol": stats.protocol,
        "n_slots": stats.n_slots,
        "trials": stats.trials,
        "master_seed": stats.master_seed,
        "attack_fraction": args.fraction,
        "sifted_bits": stats.key_count,
        "qber": stats.qber,
        "qber_stderr": stats.qber_stderr,
        "ideal_oracle_qber": ideal,
        "oracle_qber": stats.oracle_qber,
        "z_qber": stats.z_qber,
        "passed": stats.passed,
    }
    out = _out_dir(args)
    ext = "jsonl" if args.format == "jsonl" else "csv"
    write_records([record], out / f"attack.{ext}", args.format)
    text = (
        f"intercept/resend on {args.fraction:g} of {stats.protocol} rounds (N={stats.n_slots})\n"
        f"  sifted QBER {_num(stats.qber)} +/- {_num(stats.qber_stderr, 8)} over {stats.key_count} bits\n"
        f"  oracle      {_num(stats.oracle_qber)}  (ideal devices: fraction x "
        f"{analytics.intercept_resend_qber(config.protocol, 1, config.eve_analyzer)} = {ideal:.6f})\n"
        f"  z = {_num(stats.z_qber, 6, 2)}  -> {'PASS' if stats.passed else 'VERIFICATION_FAILURE'}\n"
    )
    (out / "attack_report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    if not stats.passed:
        print("VERIFICATION_FAILURE: attack QBER disagrees with oracle", file=sys.stderr)
        return EXIT_VERIFICATION
    return EXIT_OK


def cmd_ratios(args) -> int:
    for n in args.n:
        if n < 1:
            raise UsageError(f"n must be >= 1, got {n}")
        marg = analytics.instance_marginals(n)
        unit = min(marg)
        dist = mz_distribution(make_rect_state(n, [0.0] * n), args.phi_b)
        labels = [chr(ord("a") + j) if j < 26 else str(j) for j in range(n + 1)]
        print(f"N={n}  ratio " + ":".join(str(m / unit) for m in marg))
        print("  instance  " + " ".join(f"{lab:>9}" for lab in labels))
        print("  marginal  " + " ".join(f"{str(m):>9}" for m in marg))
        for name, row in zip(("P(D1)", "P(D2)"), dist.probs):
            cells = [str(Fraction(p).limit_denominator(10_000)) for p in row]
            print(f"  {name:8}  " + " ".join(f"{c:>9}" for c in cells))
    return EXIT_OK


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--trials", type=int, help="override the number of rounds")
    common.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./results)")
    common.add_argument("--workers", type=int, default=1, help="worker processes")

    parser = argparse.ArgumentParser(
        prog="phaseqkd", description="Phase-encoding QKD simulator with closed-form oracles."
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run experiment files and compare with oracles")
    p.add_argument("configs", nargs="+", help=f"config path or bundled name ({', '.join(bundled_names())})")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-n", parents=[common], help="key-creation efficiency against N (both encoders)")
    p.add_argument("config", nargs="?", default="dps3_improved")
    p.add_argument("--n-min", type=int, default=2)
    p.add_argument("--n-max", type=int, default=20)
    p.set_defaults(func=cmd_sweep_n)

    p = sub.add_parser("attack", parents=[common], help="intercept/resend QBER for an attacked fraction")
    p.add_argument("config", nargs="?", default="dps3_improved")
    p.add_argument("--fraction", type=float, default=1.0)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("ratios", help="instance click-probability tables for given N")
    p.add_argument("n", type=int, nargs="+")
    p.add_argument("--phi-b", type=float, default=0.0, help="analyzer phase in radians")
    p.set_defaults(func=cmd_ratios)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"phaseqkd: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
