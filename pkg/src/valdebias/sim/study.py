"""Replication studies: many independent runs of one scenario, aggregated.

Every replication computes the nominal error (A1), the contrast estimate
(A2), the randomized estimate (A3), the true errors of the two selection
rules, and optionally the bootstrap intervals for A2 and A3.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..bootstrap import bootstrap_ci
from ..contrast import debias_contrast
from ..randomized import randomized_estimate
from .cv import run_cv, true_err
from .learners import default_grid
from .scenarios import Scenario, draw_dataset, gen_s0, gen_s1

QUANTITIES = ("Err", "ErrRandom", "A1", "A2", "A3")
SUMMARY_FIELDS = ("scenario", "section", "quantity", "value", "se", "reps")
DIFFERENCE_FIELDS = ("scenario", "estimator", "replication", "value")


@dataclass(frozen=True)
class StudyConfig:
    reps: int = 1000
    B: int = 1000
    level: float = 0.90
    contrast_folds: int = 2
    alpha: float = 0.1
    H: int = 100
    monte_carlo_truth: bool = False
    """Estimate truth by simulation even when it is known to be 0.5."""

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError(f"need at least one replication, got reps={self.reps}")
        if self.B != 0 and self.B < 2:
            raise ValueError(f"B must be 0 (no intervals) or at least 2, got {self.B}")


@dataclass
class Replication:
    index: int
    Err: float
    ErrRandom: float
    A1: float
    A2: float
    A3: float
    delta_hat: float
    covered_A2: Optional[bool] = None
    covered_A3: Optional[bool] = None
    ci_A2: Optional[tuple[float, float]] = None
    ci_A3: Optional[tuple[float, float]] = None


@dataclass
class StudyReport:
    scenario: str
    reps: int
    B: int
    level: float
    means: dict[str, float]
    ses: dict[str, float]
    coverage: dict[str, float]
    replications: list[Replication] = field(repr=False)

    def differences(self) -> dict[str, np.ndarray]:
        """Estimate minus truth per replication (box-plot data)."""
        err = np.array([r.Err for r in self.replications])
        err_r = np.array([r.ErrRandom for r in self.replications])
        return {
            "A1": np.array([r.A1 for r in self.replications]) - err,
            "A2": np.array([r.A2 for r in self.replications]) - err,
            "A3": np.array([r.A3 for r in self.replications]) - err_r,
        }


def _error_matrix_and_truth(sc: Scenario, rng, cfg: StudyConfig):
    if sc.kind == "S0":
        em = gen_s0(sc.n, sc.m, rng)
        return em, np.zeros(sc.m)
    if sc.kind == "S1":
        return gen_s1(sc.n, sc.m, rng)
    ds = draw_dataset(sc, rng)
    grid = default_grid(sc.learner, sc.m)
    run = run_cv(ds, grid, sc.cv_folds, rng)
    if sc.no_signal and not cfg.monte_carlo_truth:
        truth = np.full(grid.m, 0.5)
    else:
        truth = true_err(sc, run.models, rng)
    return run.error_matrix, truth


def run_replication(sc: Scenario, cfg: StudyConfig, seed: int, index: int) -> Replication:
    rng = np.random.default_rng([seed, index])
    em, truth = _error_matrix_and_truth(sc, rng, cfg)
    c = debias_contrast(em, K=cfg.contrast_folds, rng=rng)
    r = randomized_estimate(em, rng=rng, alpha=cfg.alpha, H=cfg.H)
    rep = Replication(
        index=index,
        Err=float(truth[c.selected_index]),
        ErrRandom=float(truth[r.selected_indices].mean()),
        A1=c.q_selected,
        A2=c.estimate,
        A3=r.estimate,
        delta_hat=c.delta_hat,
    )
    if cfg.B:
        ci2 = bootstrap_ci(em, "contrast", c.estimate, cfg.B, cfg.level, rng, K=cfg.contrast_folds)
        ci3 = bootstrap_ci(em, "randomized", r.estimate, cfg.B, cfg.level, rng, alpha=cfg.alpha, H=cfg.H)
        rep.ci_A2 = (ci2.lower, ci2.upper)
        rep.ci_A3 = (ci3.lower, ci3.upper)
        rep.covered_A2 = ci2.contains(rep.Err)
        rep.covered_A3 = ci3.contains(rep.ErrRandom)
    return rep


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return float(v.mean()), math.nan
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


def aggregate(sc: Scenario, cfg: StudyConfig, reps: list[Replication]) -> StudyReport:
    means, ses = {}, {}
    for q in QUANTITIES:
        means[q], ses[q] = _mean_se([getattr(r, q) for r in reps])
    coverage = {}
    if cfg.B:
        coverage["A2"] = float(np.mean([r.covered_A2 for r in reps]))
        coverage["A3"] = float(np.mean([r.covered_A3 for r in reps]))
    return StudyReport(sc.label, len(reps), cfg.B, cfg.level, means, ses, coverage, reps)


def _replication_task(args):
    return run_replication(*args)


def run_study(sc: Scenario, cfg: StudyConfig, seed: int = 0, threads: int = 1) -> StudyReport:
    """Run ``cfg.reps`` replications; replication ``b`` is seeded by ``(seed, b)``.

    With ``threads > 1`` replications run in worker processes; the report
    does not depend on the number of workers.
    """
    tasks = [(sc, cfg, seed, b) for b in range(cfg.reps)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            reps = list(pool.map(_replication_task, tasks, chunksize=max(1, cfg.reps // (4 * threads))))
    else:
        reps = [_replication_task(t) for t in tasks]
    return aggregate(sc, cfg, reps)


# ---------------------------------------------------------------------------
# CSV output


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


def summary_rows(report: StudyReport) -> list[dict]:
    rows = [
        {
            "scenario": report.scenario,
            "section": "error",
            "quantity": q,
            "value": _fmt(report.means[q]),
            "se": _fmt(report.ses[q]),
            "reps": str(report.reps),
        }
        for q in QUANTITIES
    ]
    for q, cov in report.coverage.items():
        rows.append(
            {
                "scenario": report.scenario,
                "section": "coverage",
                "quantity": q,
                "value": _fmt(cov),
                "se": _fmt(math.sqrt(cov * (1 - cov) / report.reps)) if report.reps > 1 else "",
                "reps": str(report.reps),
            }
        )
    return rows


def write_study(report: StudyReport, outdir, stem: str) -> dict[str, Path]:
    """Write ``<stem>_summary.csv`` and ``<stem>_differences.csv`` into ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    summary = outdir / f"{stem}_summary.csv"
    with summary.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(summary_rows(report))
    diffs = outdir / f"{stem}_differences.csv"
    with diffs.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIFFERENCE_FIELDS)
        for est, values in report.differences().items():
            for rep, v in zip(report.replications, values):
                w.writerow([report.scenario, est, rep.index, _fmt(v)])
    return {"summary": summary, "differences": diffs}


def format_summary(report: StudyReport) -> str:
    lines = [f"{report.scenario}: {report.reps} replications, B={report.B}"]
    for q in QUANTITIES:
        se = report.ses[q]
        se_txt = "" if math.isnan(se) else f" ({se:.4f})"
        lines.append(f"  {q:<10} {report.means[q]: .4f}{se_txt}")
    for q, cov in report.coverage.items():
        lines.append(f"  coverage {q:<3} {cov:.3f}  (nominal {report.level:.2f})")
    return "\n".join(lines)
