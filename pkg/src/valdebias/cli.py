"""Command-line front end.

    valdebias estimate errors.csv [--method both] [--boot 1000] [--seed 0]
    valdebias simulate --scenario S0 --reps 500 --seed 7 --outdir results/
    valdebias report results/ [--pivot]

Exit status is 0 on success, 2 for usage or input-format errors and 1 for
anything else.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .bootstrap import ConfidenceInterval, bootstrap_ci
from .contrast import debias_contrast
from .core import ErrorMatrix, ErrorMatrixError, child_generators
from .io import CSVFormatError, read_error_matrix, read_fold_file
from .randomized import NotPositiveSemidefinite, randomized_estimate

SCHEMA_VERSION = 1
EXIT_USAGE = 2

log = logging.getLogger("valdebias")


class UsageError(Exception):
    pass


def _ci_dict(ci: Optional[ConfidenceInterval]):
    if ci is None:
        return None
    return {
        "lower": ci.lower,
        "upper": ci.upper,
        "level": ci.level,
        "widening": ci.widening,
        "B": ci.B,
    }


def _sigma0(text: str) -> Optional[float]:
    if text == "auto":
        return None
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'auto' or a number, got {text!r}") from None
    if not v >= 0:
        raise argparse.ArgumentTypeError("jitter variance must be nonnegative")
    return v


def estimate_result(
    em: ErrorMatrix,
    *,
    method: str = "both",
    K: int = 2,
    alpha: float = 0.1,
    draws: int = 100,
    sigma0_sq: Optional[float] = None,
    B: int = 1000,
    level: float = 0.90,
    seed: int = 0,
    partition=None,
) -> dict:
    """Estimates, intervals and diagnostics as a JSON-ready dict.

    Four independent streams are derived from ``seed`` (contrast partition,
    randomization noise, and one per bootstrap), so switching ``method``
    does not change the numbers reported for the other estimator.
    """
    rng_part, rng_noise, rng_boot2, rng_boot3 = child_generators(np.random.default_rng(seed), 4)
    names = list(em.names) if em.names else [f"model_{j + 1}" for j in range(em.m)]
    c = debias_contrast(em, K=K, rng=rng_part, partition=partition)
    out = {
        "schema_version": SCHEMA_VERSION,
        "n": em.n,
        "m": em.m,
        "K": c.K,
        "cv": em.is_cv,
        "seed": seed,
        "models": names,
        "a1": {
            "estimate": c.q_selected,
            "selected_index": c.selected_index,
            "selected_model": names[c.selected_index],
        },
    }
    if method in ("contrast", "both"):
        out["a2"] = {
            "estimate": c.estimate,
            "delta_hat": c.delta_hat,
            "selected_index": c.selected_index,
            "per_fold_selected": [int(j) for j in c.per_fold_selected],
        }
        ci = None
        if B:
            ci = bootstrap_ci(em, "contrast", c.estimate, B, level, rng_boot2, K=K)
        out["ci_a2"] = _ci_dict(ci)
    if method in ("randomized", "both"):
        r = randomized_estimate(em, rng=rng_noise, alpha=alpha, H=draws, sigma0_sq=sigma0_sq)
        out["a3"] = {
            "estimate": r.estimate,
            "selection_frequencies": [float(f) for f in r.selection_frequencies],
            "mean_nominal": r.mean_nominal,
            "alpha": alpha,
            "draws": draws,
            "sigma0_sq": r.sigma0_sq,
            "projected_covariance": r.projected,
        }
        ci = None
        if B:
            ci = bootstrap_ci(
                em, "randomized", r.estimate, B, level, rng_boot3, alpha=alpha, H=draws, sigma0_sq=sigma0_sq
            )
        out["ci_a3"] = _ci_dict(ci)
    return out


def _flatten(d: dict, prefix: str = ""):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flatten(v, key + ".")
        elif isinstance(v, list):
            yield key, ";".join(str(x) for x in v)
        else:
            yield key, "" if v is None else v


def _emit(text: str, output: Optional[str]):
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_estimate(args) -> int:
    em = read_error_matrix(args.input)
    partition = None
    if args.fold_file:
        if em.is_cv:
            raise UsageError("--fold-file cannot be combined with a CV matrix that has a 'fold' column")
        partition = read_fold_file(args.fold_file, em.n)
    result = estimate_result(
        em,
        method=args.method,
        K=partition.K if partition is not None else args.kfolds,
        alpha=args.alpha,
        draws=args.draws,
        sigma0_sq=args.sigma0,
        B=args.boot,
        level=args.level,
        seed=args.seed,
        partition=partition,
    )
    if args.format == "json":
        text = json.dumps(result, indent=2) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["key", "value"])
        w.writerows(_flatten(result))
        text = buf.getvalue()
    _emit(text, args.output)
    return 0


def cmd_simulate(args) -> int:
    from .sim.scenarios import default_scenario
    from .sim.study import StudyConfig, format_summary, run_study, write_study

    try:
        sc = default_scenario(
            args.scenario, n=args.n, p=args.p, m=args.m, learner=args.learner, signal=args.signal
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg = StudyConfig(
        reps=args.reps,
        B=args.boot,
        level=args.level,
        contrast_folds=args.kfolds,
        alpha=args.alpha,
        H=args.draws,
        monte_carlo_truth=args.mc_truth,
    )
    report = run_study(sc, cfg, seed=args.seed, threads=args.threads)
    paths = write_study(report, args.outdir, sc.stem)
    print(format_summary(report))
    for p in paths.values():
        print(f"wrote {p}")
    return 0


def _summary_files(inputs) -> list[Path]:
    files: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files.extend(sorted(p.glob("*_summary.csv")))
        elif p.is_file():
            files.append(p)
        else:
            raise UsageError(f"{p}: no such file or directory")
    if not files:
        raise UsageError("no studies found")
    return files


def merge_summaries(files) -> tuple[list[str], list[dict]]:
    from .sim.study import SUMMARY_FIELDS

    rows: list[dict] = []
    header: Optional[list[str]] = None
    for f in files:
        with Path(f).open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or tuple(reader.fieldnames) != SUMMARY_FIELDS:
                raise CSVFormatError(
                    f"{f}: schema mismatch; expected columns {','.join(SUMMARY_FIELDS)}, "
                    f"found {','.join(reader.fieldnames or [])}"
                )
            header = list(reader.fieldnames)
            rows.extend(reader)
    return header, rows


def pivot_table(rows: list[dict]) -> list[list[str]]:
    """Table with one column per scenario and ``mean(se)`` cells."""
    scenarios: list[str] = []
    for r in rows:
        if r["scenario"] not in scenarios:
            scenarios.append(r["scenario"])
    keys: list[tuple[str, str]] = []
    cells: dict[tuple[str, str, str], str] = {}
    for r in rows:
        key = (r["section"], r["quantity"])
        if key not in keys:
            keys.append(key)
        txt = f"{float(r['value']):.3f}" if r["value"] else ""
        if r["se"]:
            txt += f"({float(r['se']):.3f})"
        cells[(r["section"], r["quantity"], r["scenario"])] = txt
    keys.sort(key=lambda k: 0 if k[0] == "error" else 1)
    table = [["section", "quantity", *scenarios]]
    for section, q in keys:
        table.append([section, q, *(cells.get((section, q, s), "") for s in scenarios)])
    return table


def cmd_report(args) -> int:
    header, rows = merge_summaries(_summary_files(args.inputs))
    buf = io.StringIO()
    if args.pivot:
        csv.writer(buf, lineterminator="\n").writerows(pivot_table(rows))
    else:
        w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    _emit(buf.getvalue(), args.output)
    return 0


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {v}")
    return v


def _boot_count(text: str) -> int:
    v = int(text)
    if v != 0 and v < 2:
        raise argparse.ArgumentTypeError("use 0 to skip intervals or at least 2 replicates")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {v}")
    return v


def _level(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"level must lie in (0, 1), got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="valdebias",
        description="Estimate the test error of a model chosen by minimum validation error.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def estimator_flags(p, kfolds_help):
        p.add_argument("--alpha", type=_positive_float, default=0.1, help="randomization scale (default 0.1)")
        p.add_argument("--draws", type=_positive_int, default=100, help="noise draws H (default 100)")
        p.add_argument("--kfolds", type=_positive_int, default=2, help=kfolds_help)
        p.add_argument("--boot", type=_boot_count, default=1000, help="bootstrap replicates B; 0 skips intervals")
        p.add_argument("--level", type=_level, default=0.90, help="interval coverage (default 0.90)")
        p.add_argument("--seed", type=int, default=0, help="master random seed (default 0)")

    est = sub.add_parser("estimate", help="debias the minimum validation error of an error-matrix CSV")
    est.add_argument("input", help="error-matrix CSV (header row; optional leading 'fold' column)")
    est.add_argument("--method", choices=("contrast", "randomized", "both"), default="both")
    estimator_flags(est, "folds for the contrast on sample-splitting input (default 2)")
    est.add_argument("--sigma0", type=_sigma0, default=None, help="jitter variance sigma0^2, or 'auto'")
    est.add_argument("--fold-file", help="CSV of 1-based fold labels pinning the contrast partition")
    est.add_argument("--format", choices=("json", "csv"), default="json")
    est.add_argument("--output", help="write the result here instead of stdout")
    est.set_defaults(func=cmd_estimate)

    sim = sub.add_parser("simulate", help="run a replication study of one scenario")
    sim.add_argument("--scenario", required=True, choices=("S0", "S1", "S2", "S3", "S4", "S5"))
    sim.add_argument("--reps", type=_positive_int, default=1000)
    sim.add_argument("--n", type=_positive_int)
    sim.add_argument("--p", type=_positive_int)
    sim.add_argument("--m", type=_positive_int, help="models (S0/S1) or lasso grid size (S2-S4)")
    sim.add_argument("--learner", choices=("lasso-logistic", "nsc", "cart", "knn"))
    sim.add_argument("--signal", action=argparse.BooleanOptionalAction, default=None, help="S5 signal setting")
    estimator_flags(sim, "folds for the contrast in S0/S1 (default 2)")
    sim.add_argument("--mc-truth", action="store_true", help="simulate test errors even in no-signal settings")
    sim.add_argument("--threads", type=_positive_int, default=1, help="worker processes")
    sim.add_argument("--outdir", default=".", help="directory for the study CSVs")
    sim.set_defaults(func=cmd_simulate)

    rep = sub.add_parser("report", help="merge study summary CSVs")
    rep.add_argument("inputs", nargs="+", help="summary CSVs or directories containing *_summary.csv")
    rep.add_argument("--pivot", action="store_true", help="one column per scenario, mean(se) cells")
    rep.add_argument("--output")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, CSVFormatError, ErrorMatrixError) as exc:
        print(f"valdebias {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NotPositiveSemidefinite, ValueError, OSError) as exc:
        print(f"valdebias {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
